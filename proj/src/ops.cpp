#include "mixmatch/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "autograd.hpp"

namespace mixmatch {
namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <class Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;

struct ConvGeometry {
  std::int64_t channels, height, width;  // image side
  int kh, kw, stride, pad;
  std::int64_t out_h, out_w;             // patch grid

  std::int64_t rows() const { return channels * kh * kw; }
  std::int64_t cols() const { return out_h * out_w; }
};

// col[(c*kh + i)*kw + j][oh*out_w + ow] = img[c][oh*stride - pad + i][ow*stride - pad + j]
template <class Real>
void im2col(const Real* img, const ConvGeometry& g, Real* col) {
  const std::int64_t cols = g.cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const Real* plane = img + c * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        Real* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          Real* dst = row + oh * g.out_w;
          const std::int64_t ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, Real(0));
            continue;
          }
          const Real* src = plane + ih * g.width;
          if (g.stride == 1) {
            const std::int64_t shift = j - g.pad;
            const std::int64_t lo = std::clamp<std::int64_t>(-shift, 0, g.out_w);
            const std::int64_t hi = std::clamp<std::int64_t>(g.width - shift, lo, g.out_w);
            std::fill(dst, dst + lo, Real(0));
            std::copy(src + lo + shift, src + hi + shift, dst + lo);
            std::fill(dst + hi, dst + g.out_w, Real(0));
          } else {
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + j;
              dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : Real(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into the image.
template <class Real>
void col2im(const Real* col, const ConvGeometry& g, Real* img) {
  const std::int64_t cols = g.cols();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    Real* plane = img + c * g.height * g.width;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const Real* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (std::int64_t oh = 0; oh < g.out_h; ++oh) {
          const std::int64_t ih = oh * g.stride - g.pad + i;
          if (ih < 0 || ih >= g.height) continue;
          const Real* src = row + oh * g.out_w;
          Real* dst = plane + ih * g.width;
          if (g.stride == 1) {
            const std::int64_t shift = j - g.pad;
            const std::int64_t lo = std::clamp<std::int64_t>(-shift, 0, g.out_w);
            const std::int64_t hi = std::clamp<std::int64_t>(g.width - shift, lo, g.out_w);
            for (std::int64_t ow = lo; ow < hi; ++ow) dst[ow + shift] += src[ow];
          } else {
            for (std::int64_t ow = 0; ow < g.out_w; ++ow) {
              const std::int64_t iw = ow * g.stride - g.pad + j;
              if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
            }
          }
        }
      }
    }
  }
}

template <class Real>
void check_bias(const BasicTensor<Real>& b, std::int64_t channels, const char* op) {
  if (b.defined() && b.numel() != channels) {
    throw DimensionError(std::string(op) + ": bias has " +
                         std::to_string(b.numel()) + " values, expected " +
                         std::to_string(channels) + " (output channels)");
  }
}

void check_conv_params(int stride, int pad, const char* op) {
  if (stride < 1) throw ParameterError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw ParameterError(std::string(op) + ": pad must be >= 0");
}

template <class Real>
void add_bias(std::vector<Real>& out, const BasicTensor<Real>& b, const Shape& s) {
  if (!b.defined()) return;
  const auto bias = b.values();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      Real* p = out.data() + (n * s.c + c) * s.plane();
      const Real v = bias[static_cast<std::size_t>(c)];
      for (std::int64_t k = 0; k < s.plane(); ++k) p[k] += v;
    }
  }
}

template <class Real>
void accumulate_bias_grad(const NodePtr<Real>& b, const std::vector<Real>& g,
                          const Shape& s) {
  if (!detail::wants_grad(b)) return;
  auto& gb = b->grad_buffer();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const Real* p = g.data() + (n * s.c + c) * s.plane();
      Real acc = 0;
      for (std::int64_t k = 0; k < s.plane(); ++k) acc += p[k];
      gb[static_cast<std::size_t>(c)] += acc;
    }
  }
}

template <class Real>
void require_same_shape(const BasicTensor<Real>& a, const BasicTensor<Real>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() +
                         " vs " + b.shape().str());
  }
}

}  // namespace

template <class Real>
BasicTensor<Real> conv2d(const BasicTensor<Real>& x, const BasicTensor<Real>& w,
                         const BasicTensor<Real>& b, int stride, int pad) {
  check_conv_params(stride, pad, "conv2d");
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (ws.c != xs.c) {
    throw DimensionError("conv2d: input channel axis (" + std::to_string(xs.c) +
                         ") does not match weight in_ch axis (" +
                         std::to_string(ws.c) + ")");
  }
  check_bias(b, ws.n, "conv2d");
  const std::int64_t out_h = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::int64_t out_w = (xs.w + 2 * pad - ws.w) / stride + 1;
  if (xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w) {
    throw DimensionError("conv2d: kernel " + std::to_string(ws.h) + "x" +
                         std::to_string(ws.w) + " larger than padded input " +
                         xs.str());
  }
  const Shape os{xs.n, ws.n, out_h, out_w};
  const ConvGeometry g{xs.c, xs.h, xs.w, static_cast<int>(ws.h),
                       static_cast<int>(ws.w), stride, pad, out_h, out_w};

  std::vector<Real> out(static_cast<std::size_t>(os.numel()));
  std::vector<Real> col(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap<Real> wm(w.values().data(), ws.n, g.rows());
  for (std::int64_t n = 0; n < xs.n; ++n) {
    im2col(x.values().data() + n * xs.image(), g, col.data());
    MatMap<Real> y(out.data() + n * os.image(), os.c, g.cols());
    y.noalias() = wm * ConstMatMap<Real>(col.data(), g.rows(), g.cols());
  }
  add_bias(out, b, os);

  const bool record = detail::should_record<Real>({&x, &w, &b});
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return detail::finish<Real>(
      "conv2d", os, std::move(out), record, {xn, wn, bn},
      [xn, wn, bn, g, os](const std::vector<Real>& gout) {
        const Shape xs = xn->shape;
        std::vector<Real> col(static_cast<std::size_t>(g.rows() * g.cols()));
        ConstMatMap<Real> wm(wn->value.data(), os.c, g.rows());
        for (std::int64_t n = 0; n < xs.n; ++n) {
          ConstMatMap<Real> gy(gout.data() + n * os.image(), os.c, g.cols());
          if (detail::wants_grad(wn)) {
            im2col(xn->value.data() + n * xs.image(), g, col.data());
            MatMap<Real> gw(wn->grad_buffer().data(), os.c, g.rows());
            gw.noalias() += gy * ConstMatMap<Real>(col.data(), g.rows(), g.cols()).transpose();
          }
          if (detail::wants_grad(xn)) {
            MatMap<Real> gc(col.data(), g.rows(), g.cols());
            gc.noalias() = wm.transpose() * gy;
            col2im(col.data(), g, xn->grad_buffer().data() + n * xs.image());
          }
        }
        accumulate_bias_grad(bn, gout, os);
      });
}

template <class Real>
BasicTensor<Real> conv2d_transpose(const BasicTensor<Real>& x,
                                   const BasicTensor<Real>& w,
                                   const BasicTensor<Real>& b, int stride,
                                   int pad, int output_padding) {
  check_conv_params(stride, pad, "conv2d_transpose");
  if (output_padding < 0 || output_padding >= stride) {
    throw ParameterError("conv2d_transpose: output_padding must lie in [0, stride)");
  }
  const Shape xs = x.shape();
  const Shape ws = w.shape();  // (in_ch, out_ch, kh, kw)
  if (ws.n != xs.c) {
    throw DimensionError("conv2d_transpose: input channel axis (" +
                         std::to_string(xs.c) + ") does not match weight in_ch axis (" +
                         std::to_string(ws.n) + ")");
  }
  check_bias(b, ws.c, "conv2d_transpose");
  const std::int64_t out_h = (xs.h - 1) * stride - 2 * pad + ws.h + output_padding;
  const std::int64_t out_w = (xs.w - 1) * stride - 2 * pad + ws.w + output_padding;
  if (out_h < 1 || out_w < 1) {
    throw DimensionError("conv2d_transpose: empty output for input " + xs.str());
  }
  const Shape os{xs.n, ws.c, out_h, out_w};
  // The transposed conv scatters each input pixel through the kernel; its
  // geometry is that of a conv over the output whose patch grid is the input.
  const ConvGeometry g{os.c, out_h, out_w, static_cast<int>(ws.h),
                       static_cast<int>(ws.w), stride, pad, xs.h, xs.w};

  std::vector<Real> out(static_cast<std::size_t>(os.numel()), Real(0));
  std::vector<Real> col(static_cast<std::size_t>(g.rows() * g.cols()));
  ConstMatMap<Real> wm(w.values().data(), xs.c, g.rows());
  for (std::int64_t n = 0; n < xs.n; ++n) {
    MatMap<Real> cm(col.data(), g.rows(), g.cols());
    cm.noalias() = wm.transpose() *
                   ConstMatMap<Real>(x.values().data() + n * xs.image(), xs.c, g.cols());
    col2im(col.data(), g, out.data() + n * os.image());
  }
  add_bias(out, b, os);

  const bool record = detail::should_record<Real>({&x, &w, &b});
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return detail::finish<Real>(
      "conv2d_transpose", os, std::move(out), record, {xn, wn, bn},
      [xn, wn, bn, g, os](const std::vector<Real>& gout) {
        const Shape xs = xn->shape;
        std::vector<Real> col(static_cast<std::size_t>(g.rows() * g.cols()));
        ConstMatMap<Real> wm(wn->value.data(), xs.c, g.rows());
        for (std::int64_t n = 0; n < xs.n; ++n) {
          im2col(gout.data() + n * os.image(), g, col.data());
          ConstMatMap<Real> cm(col.data(), g.rows(), g.cols());
          if (detail::wants_grad(xn)) {
            MatMap<Real> gx(xn->grad_buffer().data() + n * xs.image(), xs.c, g.cols());
            gx.noalias() += wm * cm;
          }
          if (detail::wants_grad(wn)) {
            MatMap<Real> gw(wn->grad_buffer().data(), xs.c, g.rows());
            gw.noalias() +=
                ConstMatMap<Real>(xn->value.data() + n * xs.image(), xs.c, g.cols()) *
                cm.transpose();
          }
        }
        accumulate_bias_grad(bn, gout, os);
      });
}

template <class Real>
std::pair<BasicTensor<Real>, PoolingIndices> maxpool2_indices(
    const BasicTensor<Real>& x) {
  const Shape xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) {
    throw DimensionError("maxpool2_indices: spatial size " + std::to_string(xs.h) +
                         "x" + std::to_string(xs.w) + " must be even on both axes");
  }
  PoolingIndices idx{xs, {}};
  const Shape os = idx.pooled_shape();
  idx.offsets.resize(static_cast<std::size_t>(os.numel()));
  std::vector<Real> out(static_cast<std::size_t>(os.numel()));
  const Real* in = x.values().data();
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const Real* plane = in + nc * xs.plane();
    for (std::int64_t i = 0; i < os.h; ++i) {
      const Real* r0 = plane + (2 * i) * xs.w;
      const Real* r1 = r0 + xs.w;
      for (std::int64_t j = 0; j < os.w; ++j, ++o) {
        const Real window[4] = {r0[2 * j], r0[2 * j + 1], r1[2 * j], r1[2 * j + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4; ++k) {
          if (window[k] > window[best]) best = k;  // strict: first scan wins ties
        }
        out[o] = window[best];
        idx.offsets[o] = best;
      }
    }
  }

  const bool record = detail::should_record<Real>({&x});
  auto xn = x.node();
  auto offsets = idx.offsets;
  auto result = detail::finish<Real>(
      "maxpool2", os, std::move(out), record, {xn},
      [xn, offsets = std::move(offsets), os](const std::vector<Real>& gout) {
        if (!detail::wants_grad(xn)) return;
        auto& gx = xn->grad_buffer();
        const Shape xs = xn->shape;
        std::size_t o = 0;
        for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
          for (std::int64_t i = 0; i < os.h; ++i) {
            for (std::int64_t j = 0; j < os.w; ++j, ++o) {
              const int k = offsets[o];
              const std::int64_t pos = nc * xs.plane() + (2 * i + k / 2) * xs.w + 2 * j + k % 2;
              gx[static_cast<std::size_t>(pos)] += gout[o];
            }
          }
        }
      });
  return {std::move(result), std::move(idx)};
}

template <class Real>
BasicTensor<Real> maxunpool2(const BasicTensor<Real>& y,
                             const PoolingIndices& indices,
                             const Shape& out_shape) {
  if (indices.input_shape != out_shape) {
    throw DimensionError("maxunpool2: indices were recorded for " +
                         indices.input_shape.str() + " but output shape is " +
                         out_shape.str());
  }
  const Shape ps = indices.pooled_shape();
  if (y.shape() != ps ||
      static_cast<std::int64_t>(indices.offsets.size()) != ps.numel()) {
    throw DimensionError("maxunpool2: input " + y.shape().str() +
                         " does not match pooled shape " + ps.str());
  }
  std::vector<Real> out(static_cast<std::size_t>(out_shape.numel()), Real(0));
  const Real* in = y.values().data();
  std::vector<std::int64_t> positions(indices.offsets.size());
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < out_shape.n * out_shape.c; ++nc) {
    for (std::int64_t i = 0; i < ps.h; ++i) {
      for (std::int64_t j = 0; j < ps.w; ++j, ++o) {
        const int k = indices.offsets[o];
        const std::int64_t pos =
            nc * out_shape.plane() + (2 * i + k / 2) * out_shape.w + 2 * j + k % 2;
        positions[o] = pos;
        out[static_cast<std::size_t>(pos)] = in[o];
      }
    }
  }
  const bool record = detail::should_record<Real>({&y});
  auto yn = y.node();
  return detail::finish<Real>(
      "maxunpool2", out_shape, std::move(out), record, {yn},
      [yn, positions = std::move(positions)](const std::vector<Real>& gout) {
        if (!detail::wants_grad(yn)) return;
        auto& gy = yn->grad_buffer();
        for (std::size_t o = 0; o < positions.size(); ++o) {
          gy[o] += gout[static_cast<std::size_t>(positions[o])];
        }
      });
}

template <class Real>
BasicTensor<Real> batchnorm(const BasicTensor<Real>& x,
                            const BasicTensor<Real>& gamma,
                            const BasicTensor<Real>& beta,
                            RunningStats<Real>* running,
                            const BatchNormOptions& options) {
  const Shape xs = x.shape();
  if (gamma.numel() != xs.c || beta.numel() != xs.c) {
    throw DimensionError("batchnorm: gamma/beta length must equal channel axis " +
                         std::to_string(xs.c));
  }
  if (running != nullptr &&
      (running->mean.numel() != xs.c || running->var.numel() != xs.c)) {
    throw DimensionError("batchnorm: running statistics sized for a different channel count");
  }
  const bool train = options.mode == Mode::kTrain;
  if (!train && running == nullptr) {
    throw ContractError("batchnorm: eval mode needs running statistics");
  }
  const std::int64_t count = xs.n * xs.plane();
  std::vector<Real> normalized(static_cast<std::size_t>(xs.numel()));
  std::vector<Real> inv_std(static_cast<std::size_t>(xs.c));
  std::vector<Real> out(static_cast<std::size_t>(xs.numel()));
  const Real* in = x.values().data();

  for (std::int64_t c = 0; c < xs.c; ++c) {
    double mu = 0.0;
    double var = 0.0;
    if (train) {
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const Real* p = in + (n * xs.c + c) * xs.plane();
        for (std::int64_t k = 0; k < xs.plane(); ++k) mu += p[k];
      }
      mu /= static_cast<double>(count);
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const Real* p = in + (n * xs.c + c) * xs.plane();
        for (std::int64_t k = 0; k < xs.plane(); ++k) {
          const double d = p[k] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      if (running != nullptr && options.update_running) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        auto rm = running->mean.mutable_values();
        auto rv = running->var.mutable_values();
        const auto m = options.momentum;
        rm[c] = static_cast<Real>((1.0 - m) * rm[c] + m * mu);
        rv[c] = static_cast<Real>((1.0 - m) * rv[c] + m * unbiased);
      }
    } else {
      mu = running->mean.values()[c];
      var = running->var.values()[c];
    }
    const Real mu_r = static_cast<Real>(mu);
    const Real istd = static_cast<Real>(1.0 / std::sqrt(var + options.eps));
    inv_std[c] = istd;
    const Real g = gamma.values()[c];
    const Real bt = beta.values()[c];
    for (std::int64_t n = 0; n < xs.n; ++n) {
      const std::int64_t base = (n * xs.c + c) * xs.plane();
      for (std::int64_t k = 0; k < xs.plane(); ++k) {
        const Real xhat = (in[base + k] - mu_r) * istd;
        normalized[static_cast<std::size_t>(base + k)] = xhat;
        out[static_cast<std::size_t>(base + k)] = g * xhat + bt;
      }
    }
  }

  const bool record = detail::should_record<Real>({&x, &gamma, &beta});
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return detail::finish<Real>(
      "batchnorm", xs, std::move(out), record, {xn, gn, bn},
      [xn, gn, bn, train, xs, count, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](const std::vector<Real>& gout) {
        for (std::int64_t c = 0; c < xs.c; ++c) {
          Real sum_g = 0;
          Real sum_gx = 0;
          for (std::int64_t n = 0; n < xs.n; ++n) {
            const std::int64_t base = (n * xs.c + c) * xs.plane();
            for (std::int64_t k = 0; k < xs.plane(); ++k) {
              sum_g += gout[base + k];
              sum_gx += gout[base + k] * normalized[base + k];
            }
          }
          if (detail::wants_grad(gn)) gn->grad_buffer()[c] += sum_gx;
          if (detail::wants_grad(bn)) bn->grad_buffer()[c] += sum_g;
          if (!detail::wants_grad(xn)) continue;
          auto& gx = xn->grad_buffer();
          const Real scale = gn->value[c] * inv_std[c];
          const Real inv_m = Real(1) / static_cast<Real>(count);
          for (std::int64_t n = 0; n < xs.n; ++n) {
            const std::int64_t base = (n * xs.c + c) * xs.plane();
            for (std::int64_t k = 0; k < xs.plane(); ++k) {
              const auto i = static_cast<std::size_t>(base + k);
              if (train) {
                gx[i] += scale * (gout[i] - inv_m * sum_g - normalized[i] * inv_m * sum_gx);
              } else {
                gx[i] += scale * gout[i];
              }
            }
          }
        }
      });
}

namespace {

template <class Real, class Fwd, class Deriv>
BasicTensor<Real> elementwise(const char* op, const BasicTensor<Real>& x, Fwd fwd,
                              Deriv deriv) {
  const auto in = x.values();
  std::vector<Real> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const bool record = detail::should_record<Real>({&x});
  auto xn = x.node();
  if (!record) return BasicTensor<Real>::from(x.shape(), std::move(out));
  auto out_copy = out;
  return detail::finish<Real>(
      op, x.shape(), std::move(out), true, {xn},
      [xn, deriv, y = std::move(out_copy)](const std::vector<Real>& gout) {
        if (!detail::wants_grad(xn)) return;
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] += gout[i] * deriv(xn->value[i], y[i]);
        }
      });
}

}  // namespace

template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x) {
  return elementwise<Real>(
      "relu", x, [](Real v) { return v > Real(0) || v != v ? v : Real(0); },  // NaN passes through
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
BasicTensor<Real> leaky_relu(const BasicTensor<Real>& x, Real slope) {
  return elementwise<Real>(
      "leaky_relu", x, [slope](Real v) { return v > Real(0) ? v : slope * v; },
      [slope](Real v, Real) { return v > Real(0) ? Real(1) : slope; });
}

template <class Real>
BasicTensor<Real> tanh_act(const BasicTensor<Real>& x) {
  return elementwise<Real>(
      "tanh", x, [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
BasicTensor<Real> add_gaussian_noise(const BasicTensor<Real>& x, double sigma,
                                     std::mt19937_64& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("add_gaussian_noise: sigma must be finite and >= 0");
  }
  if (sigma == 0.0) return x;
  std::normal_distribution<double> dist(0.0, sigma);
  const auto in = x.values();
  std::vector<Real> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = in[i] + static_cast<Real>(dist(rng));
  }
  const bool record = detail::should_record<Real>({&x});
  auto xn = x.node();
  return detail::finish<Real>("gaussian_noise", x.shape(), std::move(out), record,
                              {xn}, [xn](const std::vector<Real>& gout) {
                                if (!detail::wants_grad(xn)) return;
                                auto& gx = xn->grad_buffer();
                                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
                              });
}

template <class Real>
BasicTensor<Real> upsample_nearest2(const BasicTensor<Real>& x) {
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, xs.h * 2, xs.w * 2};
  std::vector<Real> out(static_cast<std::size_t>(os.numel()));
  const Real* in = x.values().data();
  for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
    for (std::int64_t i = 0; i < os.h; ++i) {
      const Real* src = in + nc * xs.plane() + (i / 2) * xs.w;
      Real* dst = out.data() + nc * os.plane() + i * os.w;
      for (std::int64_t j = 0; j < os.w; ++j) dst[j] = src[j / 2];
    }
  }
  const bool record = detail::should_record<Real>({&x});
  auto xn = x.node();
  return detail::finish<Real>(
      "upsample_nearest2", os, std::move(out), record, {xn},
      [xn, os](const std::vector<Real>& gout) {
        if (!detail::wants_grad(xn)) return;
        auto& gx = xn->grad_buffer();
        const Shape xs = xn->shape;
        for (std::int64_t nc = 0; nc < xs.n * xs.c; ++nc) {
          for (std::int64_t i = 0; i < os.h; ++i) {
            const Real* src = gout.data() + nc * os.plane() + i * os.w;
            Real* dst = gx.data() + nc * xs.plane() + (i / 2) * xs.w;
            for (std::int64_t j = 0; j < os.w; ++j) dst[j / 2] += src[j];
          }
        }
      });
}

template <class Real>
BasicTensor<Real> concat_channels(const BasicTensor<Real>& a,
                                  const BasicTensor<Real>& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw DimensionError("concat_channels: batch/spatial axes differ " + as.str() +
                         " vs " + bs.str());
  }
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  std::vector<Real> out(static_cast<std::size_t>(os.numel()));
  for (std::int64_t n = 0; n < as.n; ++n) {
    std::copy_n(a.values().data() + n * as.image(), as.image(),
                out.data() + n * os.image());
    std::copy_n(b.values().data() + n * bs.image(), bs.image(),
                out.data() + n * os.image() + as.image());
  }
  const bool record = detail::should_record<Real>({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  return detail::finish<Real>(
      "concat_channels", os, std::move(out), record, {an, bn},
      [an, bn, os](const std::vector<Real>& gout) {
        const Shape as = an->shape;
        const Shape bs = bn->shape;
        for (std::int64_t n = 0; n < os.n; ++n) {
          const Real* g = gout.data() + n * os.image();
          if (detail::wants_grad(an)) {
            Real* d = an->grad_buffer().data() + n * as.image();
            for (std::int64_t k = 0; k < as.image(); ++k) d[k] += g[k];
          }
          if (detail::wants_grad(bn)) {
            Real* d = bn->grad_buffer().data() + n * bs.image();
            for (std::int64_t k = 0; k < bs.image(); ++k) d[k] += g[as.image() + k];
          }
        }
      });
}

template <class Real>
BasicTensor<Real> concat_batch(std::span<const BasicTensor<Real>> parts) {
  if (parts.empty()) throw ContractError("concat_batch: no inputs");
  Shape os = parts[0].shape();
  os.n = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.c != os.c || s.h != os.h || s.w != os.w) {
      throw DimensionError("concat_batch: per-image shape differs " + s.str() +
                           " vs " + parts[0].shape().str());
    }
    os.n += s.n;
  }
  std::vector<Real> out;
  out.reserve(static_cast<std::size_t>(os.numel()));
  std::vector<NodePtr<Real>> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    nodes.push_back(p.node());
  }
  std::vector<BasicTensor<Real>> inputs(parts.begin(), parts.end());
  const bool record = detail::should_record<Real>(inputs);
  return detail::finish<Real>(
      "concat_batch", os, std::move(out), record, nodes,
      [nodes](const std::vector<Real>& gout) {
        std::size_t offset = 0;
        for (const auto& node : nodes) {
          const std::size_t len = node->value.size();
          if (detail::wants_grad(node)) {
            auto& g = node->grad_buffer();
            for (std::size_t k = 0; k < len; ++k) g[k] += gout[offset + k];
          }
          offset += len;
        }
      });
}

template <class Real>
BasicTensor<Real> weighted_sum(std::span<const BasicTensor<Real>> parts,
                               std::span<const Real> weights) {
  if (parts.empty() || parts.size() != weights.size()) {
    throw ContractError("weighted_sum: need one weight per input");
  }
  const Shape os = parts[0].shape();
  for (const auto& p : parts) require_same_shape(p, parts[0], "weighted_sum");
  std::vector<Real> out(static_cast<std::size_t>(os.numel()), Real(0));
  std::vector<NodePtr<Real>> nodes;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    const Real wk = weights[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * v[i];
    nodes.push_back(parts[k].node());
  }
  std::vector<BasicTensor<Real>> inputs(parts.begin(), parts.end());
  const bool record = detail::should_record<Real>(inputs);
  std::vector<Real> w(weights.begin(), weights.end());
  return detail::finish<Real>(
      "weighted_sum", os, std::move(out), record, nodes,
      [nodes, w = std::move(w)](const std::vector<Real>& gout) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!detail::wants_grad(nodes[k])) continue;
          auto& g = nodes[k]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[k] * gout[i];
        }
      });
}

template <class Real>
BasicTensor<Real> add(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  const BasicTensor<Real> parts[] = {a, b};
  const Real weights[] = {Real(1), Real(1)};
  return weighted_sum<Real>(parts, weights);
}

template <class Real>
BasicTensor<Real> scale(const BasicTensor<Real>& x, Real factor) {
  const BasicTensor<Real> parts[] = {x};
  const Real weights[] = {factor};
  return weighted_sum<Real>(parts, weights);
}

template <class Real>
BasicTensor<Real> sum(const BasicTensor<Real>& x) {
  double acc = 0.0;
  for (Real v : x.values()) acc += v;
  const bool record = detail::should_record<Real>({&x});
  auto xn = x.node();
  return detail::finish<Real>("sum", Shape{}, {static_cast<Real>(acc)}, record, {xn},
                              [xn](const std::vector<Real>& gout) {
                                if (!detail::wants_grad(xn)) return;
                                for (auto& g : xn->grad_buffer()) g += gout[0];
                              });
}

template <class Real>
BasicTensor<Real> mean(const BasicTensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

template <class Real>
BasicTensor<Real> multiply(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_same_shape(a, b, "multiply");
  std::vector<Real> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  const bool record = detail::should_record<Real>({&a, &b});
  auto an = a.node();
  auto bn = b.node();
  return detail::finish<Real>("multiply", a.shape(), std::move(out), record, {an, bn},
                              [an, bn](const std::vector<Real>& gout) {
                                if (detail::wants_grad(an)) {
                                  auto& g = an->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * bn->value[i];
                                }
                                if (detail::wants_grad(bn)) {
                                  auto& g = bn->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * an->value[i];
                                }
                              });
}

template <class Real>
BasicTensor<Real> detach(const BasicTensor<Real>& x) {
  return BasicTensor<Real>::from(x.shape(), x.vector());
}

template <class Real>
LabelMap argmax_channels(const BasicTensor<Real>& x) {
  const Shape s = x.shape();
  LabelMap out{s.n, s.h, s.w, std::vector<std::int32_t>(static_cast<std::size_t>(s.n * s.plane()))};
  const Real* in = x.values().data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t k = 0; k < s.plane(); ++k) {
      std::int32_t best = 0;
      Real best_v = in[n * s.image() + k];
      for (std::int64_t c = 1; c < s.c; ++c) {
        const Real v = in[n * s.image() + c * s.plane() + k];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::int32_t>(c);
        }
      }
      out.labels[static_cast<std::size_t>(n * s.plane() + k)] = best;
    }
  }
  return out;
}

template <class Real>
BasicTensor<Real> one_hot(const LabelMap& labels, int num_classes) {
  const Shape s{labels.n, num_classes, labels.h, labels.w};
  std::vector<Real> out(static_cast<std::size_t>(s.numel()), Real(0));
  for (std::int64_t n = 0; n < labels.n; ++n) {
    for (std::int64_t k = 0; k < s.plane(); ++k) {
      const auto label = labels.labels[static_cast<std::size_t>(n * s.plane() + k)];
      if (label < 0 || label >= num_classes) {
        throw ParameterError("one_hot: label " + std::to_string(label) +
                             " outside [0, " + std::to_string(num_classes) + ")");
      }
      out[static_cast<std::size_t>(n * s.image() + label * s.plane() + k)] = Real(1);
    }
  }
  return BasicTensor<Real>::from(s, std::move(out));
}

#define MIXMATCH_INSTANTIATE_OPS(Real)                                               \
  template BasicTensor<Real> conv2d(const BasicTensor<Real>&, const BasicTensor<Real>&, \
                                    const BasicTensor<Real>&, int, int);             \
  template BasicTensor<Real> conv2d_transpose(const BasicTensor<Real>&,              \
                                              const BasicTensor<Real>&,              \
                                              const BasicTensor<Real>&, int, int, int); \
  template std::pair<BasicTensor<Real>, PoolingIndices> maxpool2_indices(            \
      const BasicTensor<Real>&);                                                     \
  template BasicTensor<Real> maxunpool2(const BasicTensor<Real>&,                    \
                                        const PoolingIndices&, const Shape&);        \
  template BasicTensor<Real> batchnorm(const BasicTensor<Real>&,                     \
                                       const BasicTensor<Real>&,                     \
                                       const BasicTensor<Real>&,                     \
                                       RunningStats<Real>*, const BatchNormOptions&); \
  template BasicTensor<Real> relu(const BasicTensor<Real>&);                         \
  template BasicTensor<Real> leaky_relu(const BasicTensor<Real>&, Real);             \
  template BasicTensor<Real> tanh_act(const BasicTensor<Real>&);                     \
  template BasicTensor<Real> add_gaussian_noise(const BasicTensor<Real>&, double,    \
                                                std::mt19937_64&);                   \
  template BasicTensor<Real> upsample_nearest2(const BasicTensor<Real>&);            \
  template BasicTensor<Real> concat_channels(const BasicTensor<Real>&,               \
                                             const BasicTensor<Real>&);              \
  template BasicTensor<Real> concat_batch(std::span<const BasicTensor<Real>>);       \
  template BasicTensor<Real> weighted_sum(std::span<const BasicTensor<Real>>,        \
                                          std::span<const Real>);                    \
  template BasicTensor<Real> add(const BasicTensor<Real>&, const BasicTensor<Real>&); \
  template BasicTensor<Real> scale(const BasicTensor<Real>&, Real);                  \
  template BasicTensor<Real> sum(const BasicTensor<Real>&);                          \
  template BasicTensor<Real> mean(const BasicTensor<Real>&);                         \
  template BasicTensor<Real> multiply(const BasicTensor<Real>&, const BasicTensor<Real>&); \
  template BasicTensor<Real> detach(const BasicTensor<Real>&);                       \
  template LabelMap argmax_channels(const BasicTensor<Real>&);                       \
  template BasicTensor<Real> one_hot(const LabelMap&, int);

MIXMATCH_INSTANTIATE_OPS(float)
MIXMATCH_INSTANTIATE_OPS(double)

#undef MIXMATCH_INSTANTIATE_OPS

}  // namespace mixmatch
