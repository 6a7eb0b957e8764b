#pragma once

// Evaluation of composed translators on the held-out triplets, the latent
// fusion sweep, and the experiment drivers that train (or reuse) runs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixmatch/config.hpp"
#include "mixmatch/metrics.hpp"

namespace mixmatch {

/// Decodes path.back() from path.front()'s view of each evaluation sample.
SegMetrics evaluate_seg(TranslationGraph<float>& graph, const std::vector<std::string>& path,
                        const Dataset<EvalSample>& data);
DepthMetrics evaluate_depth(TranslationGraph<float>& graph, const std::vector<std::string>& path,
                            const Dataset<EvalSample>& data);

/// (rgb, depth) -> seg with latents mixed as (1 - alpha) rgb + alpha depth.
SegMetrics evaluate_fused_seg(TranslationGraph<float>& graph, const FusionSpec& fusion,
                              const Dataset<EvalSample>& data);

struct SweepPoint {
  double alpha = 0.0;
  std::string index_source;
  double miou = 0.0;
  double global_accuracy = 0.0;
};

std::vector<SweepPoint> alpha_sweep(TranslationGraph<float>& graph,
                                    const Dataset<EvalSample>& data,
                                    const std::vector<double>& alphas,
                                    const std::vector<std::string>& index_sources);
std::string sweep_csv(const std::vector<SweepPoint>& points);

/// Trained graphs keyed by a digest of (SplitSpec, TrainConfig). A run is
/// trained once and reloaded from its checkpoints afterwards.
class RunCache {
 public:
  explicit RunCache(std::filesystem::path root, std::ostream* log = nullptr)
      : root_(std::move(root)), log_(log) {}

  std::filesystem::path run_dir(const SplitSpec& split, const TrainConfig& train) const;
  bool contains(const SplitSpec& split, const TrainConfig& train) const;
  std::unique_ptr<TranslationGraph<float>> obtain(const Splits& splits, const TrainConfig& train);

 private:
  std::filesystem::path root_;
  std::ostream* log_;
};

/// Trains and saves one run: graph checkpoints, report.csv and config.json.
std::unique_ptr<TranslationGraph<float>> train_and_save(const Splits& splits,
                                                        const TrainConfig& train,
                                                        const std::filesystem::path& dir,
                                                        std::ostream* log = nullptr);

inline const std::vector<std::string> kExperimentNames = {
    "zero_pair", "cascade_baseline", "multimodal", "ablation", "sidesweep"};

/// Training configurations an experiment needs, derived from the base config.
std::vector<std::pair<std::string, TrainConfig>> experiment_runs(const std::string& name,
                                                                 const TrainConfig& base);

nlohmann::json run_experiment(const std::string& name, const ExperimentConfig& cfg,
                              const Splits& splits, RunCache& cache);

nlohmann::json to_json(const SegMetrics& m);
nlohmann::json to_json(const DepthMetrics& m);

}  // namespace mixmatch
