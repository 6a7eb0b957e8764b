#pragma once

// Procedural tri-modal scenes: layered rectangles and ellipses over a flat
// background, rendered consistently into an RGB image, a depth map and a
// segmentation map, plus disjoint splits and a compressed file container.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mixmatch/losses.hpp"
#include "mixmatch/ops.hpp"

namespace mixmatch {

struct SplitSpec {
  std::int64_t n_d1 = 512;
  std::int64_t n_d2 = 512;
  std::int64_t n_d3 = 256;
  std::int64_t n_val = 64;  // per validation set (rgb+seg and rgb+depth)
  std::uint64_t seed = 0;
  int num_classes = 8;
  int height = 32;
  int width = 32;

  void validate() const;
  bool operator==(const SplitSpec&) const = default;
};

struct SceneTriplet {
  std::uint64_t scene = 0;
  std::vector<float> rgb;           // 3 x H x W in [-1, 1]
  std::vector<float> depth;         // H x W in [0, 1], background 1
  std::vector<std::int32_t> seg;    // H x W, background class 0
  bool operator==(const SceneTriplet&) const = default;
};

struct SegSample {
  std::uint64_t scene = 0;
  std::vector<float> rgb;
  std::vector<std::int32_t> seg;
  bool operator==(const SegSample&) const = default;
};

struct DepthSample {
  std::uint64_t scene = 0;
  std::vector<float> rgb;
  std::vector<float> depth;
  bool operator==(const DepthSample&) const = default;
};

/// Evaluation samples keep only the two modalities a zero-pair translator
/// relates; RGB rides along for the multimodal experiment.
using EvalSample = SceneTriplet;

template <class Sample>
struct Dataset {
  SplitSpec spec;
  std::vector<Sample> items;
  bool operator==(const Dataset&) const = default;
};

// Scene index i of a split is rendered from (spec.seed, i). object_count
// overrides the random 3-6 layered primitives; 0 renders background only.
SceneTriplet generate_scene(std::uint64_t scene, const SplitSpec& spec,
                            std::optional<int> object_count = std::nullopt);

struct Splits {
  SplitSpec spec;
  Dataset<SegSample> d1;
  Dataset<DepthSample> d2;
  Dataset<EvalSample> d3;
  Dataset<SegSample> val_seg;
  Dataset<DepthSample> val_depth;
};

/// Scene ranges: D1 [0, n1), D2 [n1, n1+n2), D3 [n1+n2, n1+n2+n3), then the
/// two validation sets of n_val scenes each.
Splits make_splits(const SplitSpec& spec);

// File layout (little-endian):
//   magic "MMDATA\0\1", u32 version (1), u32 kind (1 seg, 2 depth, 3 eval),
//   SplitSpec echo: u64 seed, i64 n_d1, n_d2, n_d3, n_val, i32 classes, H, W
//   u64 count, then per record: u64 scene, u32 raw bytes, u32 packed bytes,
//   zlib-deflated payload of the record's float32 / int32 planes.
template <class Sample>
void save_dataset(const Dataset<Sample>& data, const std::filesystem::path& path);
template <class Sample>
Dataset<Sample> load_dataset(const std::filesystem::path& path);

// d1.mmd, d2.mmd, d3.mmd, val_seg.mmd, val_depth.mmd
void save_splits(const Splits& splits, const std::filesystem::path& dir);
Splits load_splits(const std::filesystem::path& dir);

// Batches as network tensors (N x C x H x W).
template <class Real>
SegPairBatch<Real> make_seg_batch(const Dataset<SegSample>& data,
                                  std::span<const std::size_t> indices);
template <class Real>
DepthPairBatch<Real> make_depth_batch(const Dataset<DepthSample>& data,
                                      std::span<const std::size_t> indices);

template <class Real>
struct EvalBatch {
  BasicTensor<Real> rgb;
  BasicTensor<Real> depth;
  BasicTensor<Real> seg_onehot;
  LabelMap labels;
};
template <class Real>
EvalBatch<Real> make_eval_batch(const Dataset<EvalSample>& data, std::size_t begin,
                                std::size_t end);

}  // namespace mixmatch
