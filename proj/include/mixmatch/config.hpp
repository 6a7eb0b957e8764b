#pragma once

// JSON configuration mirroring SplitSpec, TrainConfig and FusionSpec field
// names. Unknown keys and ill-typed values are rejected with ConfigError.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixmatch/data.hpp"
#include "mixmatch/graph.hpp"
#include "mixmatch/trainer.hpp"

namespace mixmatch {

struct SweepSpec {
  std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::string> index_sources{"rgb", "depth"};
  bool operator==(const SweepSpec&) const = default;
};

struct ExperimentConfig {
  SplitSpec split;
  TrainConfig train;
  FusionSpec fusion;
  SweepSpec sweep;

  void validate() const;
};

/// Example: {"split": {"n_d1": 2000}, "train": {"lr": 4e-4, "ablation":
/// {"noise": false}}, "fusion": {"alpha": 0.2}}. Missing keys keep defaults.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const SplitSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const LossWeights& weights);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Stable 64-bit FNV-1a digest of the canonical JSON of a training run.
std::uint64_t run_hash(const SplitSpec& split, const TrainConfig& train);
std::string hex(std::uint64_t value);

}  // namespace mixmatch
