#pragma once

// Two-phase joint training of all encoders and decoders on the available
// pairs, alternating generator and discriminator updates.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mixmatch/data.hpp"
#include "mixmatch/graph.hpp"
#include "mixmatch/losses.hpp"

namespace mixmatch {

struct AblationFlags {
  bool autoencoders = true;
  bool latent_loss = true;
  bool noise = true;
  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  LossWeights weights_phase1{1.0, 100.0, 10.0, 1.0, 1.0};
  LossWeights weights_phase2{10.0, 100.0, 10.0, 10.0, 10.0};
  std::int64_t iters_phase1 = 3000;
  std::int64_t iters_phase2 = 3000;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::int64_t batch_size = 8;
  double noise_sigma = 0.5;
  bool freeze_rgb_encoder_phase2 = true;
  std::uint64_t seed = 0;
  SideInfo side_info_mode = SideInfo::kPoolingIndices;
  AblationFlags ablation;
  bool adversarial = true;
  std::int64_t log_interval = 100;
  std::string arch = "desk";

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct ReportRow {
  std::int64_t iteration = 0;  // 1-based count of completed iterations
  int phase = 1;
  LossBreakdown breakdown;
  double d_loss = 0.0;
  double val_miou = 0.0;
  double val_rmse = 0.0;
};

struct TrainingReport {
  std::vector<ReportRow> rows;

  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainCallbacks {
  std::function<void(const ReportRow&)> on_log;
  std::function<void(std::int64_t iteration, int phase, const LossBreakdown&)> on_iteration;
};

/// Held-out seen pairs for monitoring; the zero-pair directions are never
/// evaluated during training.
struct ValidationSets {
  const Dataset<SegSample>* seg = nullptr;
  const Dataset<DepthSample>* depth = nullptr;
};

/// Graph with rgb, depth and seg modalities, pairs (rgb, seg) and
/// (rgb, depth), and side information per the config.
std::unique_ptr<TranslationGraph<float>> build_graph(const TrainConfig& cfg, int num_classes);

/// Refuses graphs with a trained (depth, seg) pair.
void check_zero_pair_protocol(const TranslationGraph<float>& graph);

TrainingReport train(TranslationGraph<float>& graph, const Dataset<SegSample>& d1,
                     const Dataset<DepthSample>& d2, const TrainConfig& cfg,
                     const ValidationSets& validation = {}, const TrainCallbacks& callbacks = {});

struct ValidationScores {
  double miou = 0.0;
  double rmse = 0.0;
};
ValidationScores validate_seen_pairs(TranslationGraph<float>& graph, const ValidationSets& sets);

}  // namespace mixmatch
