#pragma once

#include <cstdint>
#include <vector>

#include "mixmatch/ops.hpp"

namespace mixmatch {

struct SegMetrics {
  int num_classes = 0;
  std::vector<std::int64_t> confusion;  // row = ground truth, column = prediction
  std::vector<double> per_class_iou;    // NaN where the class has empty union
  double miou = 0.0;                    // over classes with nonempty union
  double global_accuracy = 0.0;

  std::int64_t at(int gt, int pred) const {
    return confusion[static_cast<std::size_t>(gt * num_classes + pred)];
  }
};

SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& gt, int num_classes);

struct DepthMetrics {
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  double rmse_lin = 0.0;
  double rmse_log = 0.0;
};

inline constexpr double kMinDepthClip = 1e-3;

/// Both maps are clipped below min_depth_clip before ratios and logs.
template <class Real>
DepthMetrics depth_metrics(const BasicTensor<Real>& pred, const BasicTensor<Real>& gt,
                           double min_depth_clip = kMinDepthClip);

/// Pools confusion counts (and depth error sums) across batches.
class SegAccumulator {
 public:
  explicit SegAccumulator(int num_classes);
  void add(const LabelMap& pred, const LabelMap& gt);
  SegMetrics result() const;

 private:
  int num_classes_;
  std::vector<std::int64_t> confusion_;
};

class DepthAccumulator {
 public:
  template <class Real>
  void add(const BasicTensor<Real>& pred, const BasicTensor<Real>& gt,
           double min_depth_clip = kMinDepthClip);
  DepthMetrics result() const;

 private:
  std::int64_t count_ = 0;
  std::int64_t within_[3] = {0, 0, 0};
  double sq_lin_ = 0.0;
  double sq_log_ = 0.0;
};

}  // namespace mixmatch
