#pragma once

// Differentiable primitives. Every op records itself on the active tape when
// at least one input requires a gradient; otherwise it is a plain forward
// computation.

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "mixmatch/tensor.hpp"

namespace mixmatch {

/// Per-window argmax of a 2x2/stride-2 max pooling. offsets[i] is the
/// row-major position (0..3) inside output cell i's window.
struct PoolingIndices {
  Shape input_shape;
  std::vector<std::uint8_t> offsets;

  Shape pooled_shape() const {
    return {input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2};
  }
  bool operator==(const PoolingIndices&) const = default;
};

/// Integer class map, B x H x W.
struct LabelMap {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::int32_t> labels;

  std::int64_t size() const { return n * h * w; }
  bool operator==(const LabelMap&) const = default;
};

template <class Real>
struct RunningStats {
  BasicTensor<Real> mean;
  BasicTensor<Real> var;

  static RunningStats create(std::int64_t channels) {
    return {BasicTensor<Real>::zeros({1, channels, 1, 1}),
            BasicTensor<Real>::full({1, channels, 1, 1}, Real(1))};
  }
};

struct BatchNormOptions {
  Mode mode = Mode::kTrain;
  double momentum = 0.1;
  double eps = 1e-5;
  // Frozen modules normalize with batch statistics but leave their running
  // statistics untouched.
  bool update_running = true;
};

// w: (out_ch, in_ch, kh, kw); b: out_ch values or undefined.
template <class Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& x, const BasicTensor<Real>& w,
                         const BasicTensor<Real>& b, int stride, int pad);

// w: (in_ch, out_ch, kh, kw). Output size (H-1)*stride - 2*pad + kh + output_padding.
template <class Real>
BasicTensor<Real> conv2d_transpose(const BasicTensor<Real>& x,
                                   const BasicTensor<Real>& w,
                                   const BasicTensor<Real>& b, int stride,
                                   int pad, int output_padding = 0);

template <class Real>
std::pair<BasicTensor<Real>, PoolingIndices> maxpool2_indices(
    const BasicTensor<Real>& x);

template <class Real>
BasicTensor<Real> maxunpool2(const BasicTensor<Real>& y,
                             const PoolingIndices& indices,
                             const Shape& out_shape);

template <class Real>
BasicTensor<Real> batchnorm(const BasicTensor<Real>& x,
                            const BasicTensor<Real>& gamma,
                            const BasicTensor<Real>& beta,
                            RunningStats<Real>* running,
                            const BatchNormOptions& options);

template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x);

template <class Real>
BasicTensor<Real> leaky_relu(const BasicTensor<Real>& x, Real slope);

template <class Real>
BasicTensor<Real> tanh_act(const BasicTensor<Real>& x);

// x + N(0, sigma^2) drawn from rng. sigma == 0 returns x untouched.
template <class Real>
BasicTensor<Real> add_gaussian_noise(const BasicTensor<Real>& x, double sigma,
                                     std::mt19937_64& rng);

template <class Real>
BasicTensor<Real> upsample_nearest2(const BasicTensor<Real>& x);

template <class Real>
BasicTensor<Real> concat_channels(const BasicTensor<Real>& a,
                                  const BasicTensor<Real>& b);

template <class Real>
BasicTensor<Real> concat_batch(std::span<const BasicTensor<Real>> parts);

template <class Real>
BasicTensor<Real> weighted_sum(std::span<const BasicTensor<Real>> parts,
                               std::span<const Real> weights);

template <class Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

template <class Real>
BasicTensor<Real> scale(const BasicTensor<Real>& x, Real factor);

template <class Real>
BasicTensor<Real> sum(const BasicTensor<Real>& x);

template <class Real>
BasicTensor<Real> mean(const BasicTensor<Real>& x);

// Elementwise product; used to build random projections for gradient checks.
template <class Real>
BasicTensor<Real> multiply(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

// Same values, cut from the graph.
template <class Real>
BasicTensor<Real> detach(const BasicTensor<Real>& x);

// Channel-wise argmax for every pixel.
template <class Real>
LabelMap argmax_channels(const BasicTensor<Real>& x);

// One-hot encoding, labels -> B x num_classes x H x W.
template <class Real>
BasicTensor<Real> one_hot(const LabelMap& labels, int num_classes);

}  // namespace mixmatch
