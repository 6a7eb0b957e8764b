#include "mixmatch/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mixmatch/metrics.hpp"
#include "mixmatch/optim.hpp"

namespace mixmatch {
namespace {

constexpr std::size_t kEvalBatch = 32;

// Cycles through a dataset in freshly shuffled epochs.
class EpochSampler {
 public:
  EpochSampler(std::size_t size, std::uint64_t seed) : order_(size), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = order_.size();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x7a11u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  weights_phase1.validate();
  weights_phase2.validate();
  if (iters_phase1 < 0 || iters_phase2 < 0) throw ConfigError("iteration counts must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise_sigma must be finite and >= 0");
  }
  if (log_interval < 1) throw ConfigError("log_interval must be >= 1");
  ArchConfig::from_name(arch).validate();
}

std::string TrainingReport::csv() const {
  std::ostringstream out;
  out << "iteration,phase";
  for (auto t : kAllLossTerms) out << ",raw_" << term_name(t);
  for (auto t : kAllLossTerms) out << ",w_" << term_name(t);
  out << ",total,d_loss,val_miou,val_rmse\n";
  for (const auto& row : rows) {
    out << row.iteration << ',' << row.phase;
    for (const auto* col : {&row.breakdown.raw, &row.breakdown.weighted}) {
      for (const auto& v : *col) {
        out << ',';
        if (v) out << fmt(*v);
      }
    }
    out << ',' << fmt(row.breakdown.total) << ',' << fmt(row.d_loss) << ',' << fmt(row.val_miou)
        << ',' << fmt(row.val_rmse) << '\n';
  }
  return out.str();
}

void TrainingReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << csv();
}

std::unique_ptr<TranslationGraph<float>> build_graph(const TrainConfig& cfg, int num_classes) {
  auto graph = std::make_unique<TranslationGraph<float>>(ArchConfig::from_name(cfg.arch), cfg.seed);
  graph->register_modality(ModalitySpec::rgb());
  graph->register_modality(ModalitySpec::depth(cfg.side_info_mode));
  graph->register_modality(ModalitySpec::segmentation(num_classes, cfg.side_info_mode));
  graph->register_training_pair("rgb", "seg");
  graph->register_training_pair("rgb", "depth");
  graph->set_autoencoders_enabled(cfg.ablation.autoencoders);
  return graph;
}

void check_zero_pair_protocol(const TranslationGraph<float>& graph) {
  for (const auto& [a, b] : graph.trained_pairs()) {
    const auto kind_a = graph.modality(a).loss_kind;
    const auto kind_b = graph.modality(b).loss_kind;
    const bool ds = (kind_a == LossKind::kDepthBerhu && kind_b == LossKind::kSegmentationCe) ||
                    (kind_a == LossKind::kSegmentationCe && kind_b == LossKind::kDepthBerhu);
    if (ds) {
      throw ProtocolError("pair (" + a + ", " + b +
                          ") is registered for training; the zero-pair protocol forbids "
                          "depth/segmentation pairs");
    }
  }
}

ValidationScores validate_seen_pairs(TranslationGraph<float>& graph, const ValidationSets& sets) {
  ValidationScores scores;
  if (sets.seg != nullptr && !sets.seg->items.empty()) {
    const auto rs = graph.compose(graph.name_for(LossKind::kRgbL2Gan),
                                  graph.name_for(LossKind::kSegmentationCe));
    SegAccumulator acc(sets.seg->spec.num_classes);
    for (std::size_t b = 0; b < sets.seg->items.size(); b += kEvalBatch) {
      std::vector<std::size_t> idx;
      for (std::size_t i = b; i < std::min(b + kEvalBatch, sets.seg->items.size()); ++i) {
        idx.push_back(i);
      }
      const auto batch = make_seg_batch<float>(*sets.seg, idx);
      acc.add(argmax_channels(rs(batch.rgb)), batch.labels);
    }
    scores.miou = acc.result().miou;
  }
  if (sets.depth != nullptr && !sets.depth->items.empty()) {
    const auto rd = graph.compose(graph.name_for(LossKind::kRgbL2Gan),
                                  graph.name_for(LossKind::kDepthBerhu));
    DepthAccumulator acc;
    for (std::size_t b = 0; b < sets.depth->items.size(); b += kEvalBatch) {
      std::vector<std::size_t> idx;
      for (std::size_t i = b; i < std::min(b + kEvalBatch, sets.depth->items.size()); ++i) {
        idx.push_back(i);
      }
      const auto batch = make_depth_batch<float>(*sets.depth, idx);
      acc.add(rd(batch.rgb), batch.depth);
    }
    scores.rmse = acc.result().rmse_lin;
  }
  return scores;
}

TrainingReport train(TranslationGraph<float>& graph, const Dataset<SegSample>& d1,
                     const Dataset<DepthSample>& d2, const TrainConfig& cfg,
                     const ValidationSets& validation, const TrainCallbacks& callbacks) {
  cfg.validate();
  check_zero_pair_protocol(graph);
  if (d1.items.empty() || d2.items.empty()) {
    throw ContractError("training needs non-empty D1 and D2 datasets");
  }
  const std::string rgb = graph.name_for(LossKind::kRgbL2Gan);
  if (cfg.adversarial && !graph.has_discriminator()) {
    throw CompositionError("adversarial training needs a discriminator");
  }

  const AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, 1e-8};
  Adam<float> gen_opt(graph.generator_parameters(), hyper);
  std::vector<BasicTensor<float>> disc_params;
  if (graph.has_discriminator()) disc_params = graph.discriminator().parameters();
  Adam<float> disc_opt(disc_params, hyper);

  EpochSampler sample_d1(d1.items.size(), stream_seed(cfg.seed, 1));
  EpochSampler sample_d2(d2.items.size(), stream_seed(cfg.seed, 2));
  std::mt19937_64 noise_rng(stream_seed(cfg.seed, 3));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t total_iters = cfg.iters_phase1 + cfg.iters_phase2;

  TrainingReport report;
  graph.encoder(rgb).set_frozen(false);
  for (std::int64_t it = 0; it < total_iters; ++it) {
    const int phase = it < cfg.iters_phase1 ? 1 : 2;
    if (it == cfg.iters_phase1 && cfg.freeze_rgb_encoder_phase2) {
      graph.encoder(rgb).set_frozen(true);
    }
    const LossWeights& weights = phase == 1 ? cfg.weights_phase1 : cfg.weights_phase2;
    const auto idx1 = sample_d1.next(batch);
    const auto idx2 = sample_d2.next(batch);
    const auto b1 = make_seg_batch<float>(d1, idx1);
    const auto b2 = make_depth_batch<float>(d2, idx2);

    LossOptions options;
    options.mode = Mode::kTrain;
    options.autoencoders = cfg.ablation.autoencoders;
    options.latent_loss = cfg.ablation.latent_loss;
    options.adversarial = cfg.adversarial;
    options.noise_sigma = cfg.ablation.noise ? cfg.noise_sigma : 0.0;
    options.rng = &noise_rng;

    gen_opt.zero_grad();
    disc_opt.zero_grad();
    CombinedLoss<float> loss;
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      loss = combined_loss(b1, b2, graph, weights, options);
      for (auto term : kAllLossTerms) {
        const auto& raw = loss.breakdown.raw[static_cast<std::size_t>(term)];
        if (raw && !std::isfinite(*raw)) {
          throw NumericError("loss term " + std::string(term_name(term)) +
                             " is not finite at iteration " + std::to_string(it + 1));
        }
      }
      tape.backward(loss.total);
    }
    gen_opt.step();

    double d_loss = 0.0;
    if (cfg.adversarial) {
      disc_opt.zero_grad();
      Tape<float> tape;
      TapeScope<float> scope(tape);
      const BasicTensor<float> reals[] = {b1.rgb, b2.rgb};
      auto& disc = graph.discriminator();
      auto real_scores = disc.discriminate(concat_batch<float>(reals), Mode::kTrain);
      auto fake_scores = disc.discriminate(detach(loss.fakes), Mode::kTrain);
      auto dl = lsgan_d_loss(real_scores, fake_scores);
      d_loss = dl.item();
      if (!std::isfinite(d_loss)) {
        throw NumericError("discriminator loss is not finite at iteration " +
                           std::to_string(it + 1));
      }
      tape.backward(dl);
      disc_opt.step();
    }

    if (callbacks.on_iteration) callbacks.on_iteration(it + 1, phase, loss.breakdown);
    if ((it + 1) % cfg.log_interval == 0 || it + 1 == total_iters) {
      ReportRow row;
      row.iteration = it + 1;
      row.phase = phase;
      row.breakdown = loss.breakdown;
      row.d_loss = d_loss;
      const auto scores = validate_seen_pairs(graph, validation);
      row.val_miou = scores.miou;
      row.val_rmse = scores.rmse;
      report.rows.push_back(row);
      if (callbacks.on_log) callbacks.on_log(row);
    }
  }
  return report;
}

}  // namespace mixmatch
