#include "mixmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mixmatch {

SegAccumulator::SegAccumulator(int num_classes)
    : num_classes_(num_classes),
      confusion_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
  if (num_classes < 1) throw ParameterError("num_classes must be positive");
}

void SegAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w ||
      pred.labels.size() != gt.labels.size()) {
    throw DimensionError("seg_metrics: prediction and ground truth differ in shape");
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto g = gt.labels[i];
    const auto p = pred.labels[i];
    if (g < 0 || g >= num_classes_ || p < 0 || p >= num_classes_) {
      throw ParameterError("seg_metrics: label out of range at pixel " + std::to_string(i));
    }
    ++confusion_[static_cast<std::size_t>(g * num_classes_ + p)];
  }
}

SegMetrics SegAccumulator::result() const {
  SegMetrics m;
  m.num_classes = num_classes_;
  m.confusion = confusion_;
  std::int64_t total = 0;
  std::int64_t correct = 0;
  double iou_sum = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes_; ++c) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int k = 0; k < num_classes_; ++k) {
      row += m.at(c, k);
      col += m.at(k, c);
    }
    const std::int64_t tp = m.at(c, c);
    const std::int64_t uni = row + col - tp;
    total += row;
    correct += tp;
    if (uni == 0) {
      m.per_class_iou.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    m.per_class_iou.push_back(iou);
    iou_sum += iou;
    ++counted;
  }
  m.miou = counted > 0 ? iou_sum / counted : 0.0;
  m.global_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return m;
}

SegMetrics seg_metrics(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  SegAccumulator acc(num_classes);
  acc.add(pred, gt);
  return acc.result();
}

template <class Real>
void DepthAccumulator::add(const BasicTensor<Real>& pred, const BasicTensor<Real>& gt,
                           double min_depth_clip) {
  if (pred.shape() != gt.shape()) {
    throw DimensionError("depth_metrics: shapes differ " + pred.shape().str() + " vs " +
                         gt.shape().str());
  }
  if (!(min_depth_clip > 0.0)) throw ParameterError("min_depth_clip must be positive");
  const double thresholds[3] = {1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25};
  const auto p = pred.values();
  const auto g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(static_cast<double>(p[i]), min_depth_clip);
    const double b = std::max(static_cast<double>(g[i]), min_depth_clip);
    const double ratio = std::max(a / b, b / a);
    for (int k = 0; k < 3; ++k) within_[k] += ratio < thresholds[k] ? 1 : 0;
    sq_lin_ += (a - b) * (a - b);
    const double dl = std::log(a) - std::log(b);
    sq_log_ += dl * dl;
  }
  count_ += static_cast<std::int64_t>(p.size());
}

DepthMetrics DepthAccumulator::result() const {
  DepthMetrics m;
  if (count_ == 0) return m;
  const auto n = static_cast<double>(count_);
  m.delta1 = static_cast<double>(within_[0]) / n;
  m.delta2 = static_cast<double>(within_[1]) / n;
  m.delta3 = static_cast<double>(within_[2]) / n;
  m.rmse_lin = std::sqrt(sq_lin_ / n);
  m.rmse_log = std::sqrt(sq_log_ / n);
  return m;
}

template <class Real>
DepthMetrics depth_metrics(const BasicTensor<Real>& pred, const BasicTensor<Real>& gt,
                           double min_depth_clip) {
  DepthAccumulator acc;
  acc.add(pred, gt, min_depth_clip);
  return acc.result();
}

template void DepthAccumulator::add(const BasicTensor<float>&, const BasicTensor<float>&, double);
template void DepthAccumulator::add(const BasicTensor<double>&, const BasicTensor<double>&, double);
template DepthMetrics depth_metrics(const BasicTensor<float>&, const BasicTensor<float>&, double);
template DepthMetrics depth_metrics(const BasicTensor<double>&, const BasicTensor<double>&, double);

}  // namespace mixmatch
