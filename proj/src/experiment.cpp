#include "mixmatch/experiment.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mixmatch {

using nlohmann::json;

namespace {

constexpr std::size_t kEvalBatch = 50;

const BasicTensor<float>& input_for(const ModalitySpec& spec, const EvalBatch<float>& batch) {
  switch (spec.loss_kind) {
    case LossKind::kRgbL2Gan: return batch.rgb;
    case LossKind::kDepthBerhu: return batch.depth;
    case LossKind::kSegmentationCe: return batch.seg_onehot;
  }
  throw ContractError("unsupported modality");
}

template <class Fn>
void for_each_batch(const Dataset<EvalSample>& data, Fn&& fn) {
  if (data.items.empty()) throw ContractError("evaluation set is empty");
  for (std::size_t b = 0; b < data.items.size(); b += kEvalBatch) {
    fn(make_eval_batch<float>(data, b, std::min(b + kEvalBatch, data.items.size())));
  }
}

std::string short_name(const TranslationGraph<float>& graph, const std::string& name) {
  switch (graph.modality(name).loss_kind) {
    case LossKind::kRgbL2Gan: return "R";
    case LossKind::kDepthBerhu: return "D";
    case LossKind::kSegmentationCe: return "S";
  }
  return name;
}

std::string path_label(const TranslationGraph<float>& graph, const std::vector<std::string>& path) {
  std::string label;
  for (const auto& p : path) label += (label.empty() ? "" : "->") + short_name(graph, p);
  return label;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

}  // namespace

SegMetrics evaluate_seg(TranslationGraph<float>& graph, const std::vector<std::string>& path,
                        const Dataset<EvalSample>& data) {
  const auto translator = graph.compose_cascade(path);
  const auto& target = graph.modality(path.back());
  if (target.loss_kind != LossKind::kSegmentationCe) {
    throw ContractError("evaluate_seg needs a segmentation target, got '" + target.name + "'");
  }
  const auto& source = graph.modality(path.front());
  SegAccumulator acc(target.channels);
  for_each_batch(data, [&](const EvalBatch<float>& batch) {
    acc.add(argmax_channels(translator(input_for(source, batch))), batch.labels);
  });
  return acc.result();
}

DepthMetrics evaluate_depth(TranslationGraph<float>& graph, const std::vector<std::string>& path,
                            const Dataset<EvalSample>& data) {
  const auto translator = graph.compose_cascade(path);
  const auto& target = graph.modality(path.back());
  if (target.loss_kind != LossKind::kDepthBerhu) {
    throw ContractError("evaluate_depth needs a depth target, got '" + target.name + "'");
  }
  const auto& source = graph.modality(path.front());
  DepthAccumulator acc;
  for_each_batch(data, [&](const EvalBatch<float>& batch) {
    acc.add(translator(input_for(source, batch)), batch.depth);
  });
  return acc.result();
}

SegMetrics evaluate_fused_seg(TranslationGraph<float>& graph, const FusionSpec& fusion,
                              const Dataset<EvalSample>& data) {
  fusion.validate();
  const std::string rgb = graph.name_for(LossKind::kRgbL2Gan);
  const std::string depth = graph.name_for(LossKind::kDepthBerhu);
  const std::string seg = graph.name_for(LossKind::kSegmentationCe);
  // Both encoders and the decoder must be composable individually.
  graph.compose(rgb, seg);
  graph.compose(depth, seg);
  SegAccumulator acc(graph.modality(seg).channels);
  for_each_batch(data, [&](const EvalBatch<float>& batch) {
    const auto h_rgb = graph.encode_eval(rgb, batch.rgb);
    const auto h_depth = graph.encode_eval(depth, batch.depth);
    const WeightedEncoding<float> inputs[] = {{rgb, &h_rgb, 1.0 - fusion.alpha},
                                              {depth, &h_depth, fusion.alpha}};
    const auto fused = fuse_latents<float>(inputs, fusion.index_source);
    acc.add(argmax_channels(graph.decode_eval(seg, fused)), batch.labels);
  });
  return acc.result();
}

std::vector<SweepPoint> alpha_sweep(TranslationGraph<float>& graph,
                                    const Dataset<EvalSample>& data,
                                    const std::vector<double>& alphas,
                                    const std::vector<std::string>& index_sources) {
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw ParameterError("alpha_sweep: alpha " + std::to_string(a) + " outside [0, 1]");
    }
  }
  std::vector<SweepPoint> points;
  for (const auto& source : index_sources) {
    for (double a : alphas) {
      const auto m = evaluate_fused_seg(graph, FusionSpec{a, canonical_modality(source)}, data);
      points.push_back({a, canonical_modality(source), m.miou, m.global_accuracy});
    }
  }
  return points;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "alpha,index_source,miou,global\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.6g,%s,%.9g,%.9g\n", p.alpha, p.index_source.c_str(), p.miou,
                  p.global_accuracy);
    out << buf;
  }
  return out.str();
}

std::unique_ptr<TranslationGraph<float>> train_and_save(const Splits& splits,
                                                        const TrainConfig& train_cfg,
                                                        const std::filesystem::path& dir,
                                                        std::ostream* log) {
  auto graph = build_graph(train_cfg, splits.spec.num_classes);
  TrainCallbacks callbacks;
  const std::int64_t total = train_cfg.iters_phase1 + train_cfg.iters_phase2;
  if (log != nullptr) {
    callbacks.on_log = [log, total](const ReportRow& row) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "  iter %lld/%lld phase %d loss %.4f val_miou %.4f val_rmse %.4f\n",
                    static_cast<long long>(row.iteration), static_cast<long long>(total), row.phase,
                    row.breakdown.total, row.val_miou, row.val_rmse);
      *log << buf << std::flush;
    };
  }
  const auto report = train(*graph, splits.d1, splits.d2, train_cfg,
                            {&splits.val_seg, &splits.val_depth}, callbacks);
  graph->save(dir);
  report.write_csv(dir / "report.csv");
  write_text(dir / "config.json",
             json{{"split", to_json(splits.spec)}, {"train", to_json(train_cfg)}}.dump(2) + "\n");
  return graph;
}

std::filesystem::path RunCache::run_dir(const SplitSpec& split, const TrainConfig& train) const {
  return root_ / hex(run_hash(split, train));
}

bool RunCache::contains(const SplitSpec& split, const TrainConfig& train) const {
  return std::filesystem::exists(run_dir(split, train) / "complete");
}

std::unique_ptr<TranslationGraph<float>> RunCache::obtain(const Splits& splits,
                                                          const TrainConfig& train_cfg) {
  const auto dir = run_dir(splits.spec, train_cfg);
  if (contains(splits.spec, train_cfg)) return TranslationGraph<float>::load(dir);
  std::filesystem::create_directories(root_);
  auto tmp = dir;
  tmp += ".tmp-" + std::to_string(::getpid());
  std::filesystem::remove_all(tmp);
  if (log_ != nullptr) *log_ << "training run " << dir.filename().string() << '\n' << std::flush;
  auto graph = train_and_save(splits, train_cfg, tmp, log_);
  write_text(tmp / "complete", "");
  std::error_code ec;
  std::filesystem::rename(tmp, dir, ec);
  if (ec) {
    // Another process finished the same run first; its result is identical.
    std::filesystem::remove_all(tmp);
  }
  return graph;
}

std::vector<std::pair<std::string, TrainConfig>> experiment_runs(const std::string& name,
                                                                 const TrainConfig& base) {
  auto with = [&](bool ae, bool lat, bool noise, SideInfo side) {
    TrainConfig c = base;
    c.ablation = {ae, lat, noise};
    c.side_info_mode = side;
    return c;
  };
  const SideInfo side = base.side_info_mode;
  if (name == "zero_pair" || name == "cascade_baseline" || name == "multimodal") {
    return {{"full", base}};
  }
  if (name == "ablation") {
    return {{"none", with(false, false, false, side)},
            {"autoencoders", with(true, false, false, side)},
            {"autoencoders+latent", with(true, true, false, side)},
            {"autoencoders+latent+noise", with(true, true, true, side)}};
  }
  if (name == "sidesweep") {
    return {{"none", with(true, true, true, SideInfo::kNone)},
            {"skip", with(true, true, true, SideInfo::kSkipConnections)},
            {"pooling", with(true, true, true, SideInfo::kPoolingIndices)}};
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

json to_json(const SegMetrics& m) {
  json iou = json::array();
  for (double v : m.per_class_iou) iou.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return {{"miou", m.miou}, {"global", m.global_accuracy}, {"per_class_iou", iou}};
}

json to_json(const DepthMetrics& m) {
  return {{"delta1", m.delta1},     {"delta2", m.delta2},    {"delta3", m.delta3},
          {"rmse_lin", m.rmse_lin}, {"rmse_log", m.rmse_log}};
}

json run_experiment(const std::string& name, const ExperimentConfig& cfg, const Splits& splits,
                    RunCache& cache) {
  cfg.validate();
  const auto runs = experiment_runs(name, cfg.train);
  json rows = json::array();
  for (const auto& [label, train_cfg] : runs) {
    auto graph = cache.obtain(splits, train_cfg);
    check_zero_pair_protocol(*graph);
    const std::string r = graph->name_for(LossKind::kRgbL2Gan);
    const std::string d = graph->name_for(LossKind::kDepthBerhu);
    const std::string s = graph->name_for(LossKind::kSegmentationCe);
    json results;
    auto seg = [&](const std::vector<std::string>& path) {
      results[path_label(*graph, path)] = to_json(evaluate_seg(*graph, path, splits.d3));
    };
    auto depth = [&](const std::vector<std::string>& path) {
      results[path_label(*graph, path)] = to_json(evaluate_depth(*graph, path, splits.d3));
    };
    seg({d, s});
    depth({s, d});
    if (name == "cascade_baseline") {
      seg({d, r, s});
      depth({s, r, d});
    }
    if (name == "multimodal") {
      seg({r, s});
      auto fused = to_json(evaluate_fused_seg(*graph, cfg.fusion, splits.d3));
      fused["alpha"] = cfg.fusion.alpha;
      fused["index_source"] = cfg.fusion.index_source;
      results["(R,D)->S"] = fused;
    }
    rows.push_back({{"run", label},
                    {"run_id", hex(run_hash(splits.spec, train_cfg))},
                    {"train", to_json(train_cfg)},
                    {"results", results}});
  }
  return {{"experiment", name}, {"split", to_json(splits.spec)}, {"rows", rows}};
}

}  // namespace mixmatch
