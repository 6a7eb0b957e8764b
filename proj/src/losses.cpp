#include "mixmatch/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "autograd.hpp"

namespace mixmatch {

void LossWeights::validate() const {
  for (double v : {lambda_r, lambda_s, lambda_d, lambda_a, lambda_l2}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
}

namespace {

template <class Real>
void require_same(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
  }
}

// mean((x - target)^2) against a constant.
template <class Real>
BasicTensor<Real> mean_squared_to(const BasicTensor<Real>& x, Real target) {
  const auto v = x.values();
  double acc = 0.0;
  for (Real a : v) acc += static_cast<double>(a - target) * (a - target);
  const Real n = static_cast<Real>(v.size());
  const bool record = detail::should_record<Real>({&x});
  auto xn = x.node();
  return detail::finish<Real>("mean_squared_to", Shape{}, {static_cast<Real>(acc / v.size())},
                              record, {xn}, [xn, target, n](const std::vector<Real>& gout) {
                                if (!detail::wants_grad(xn)) return;
                                auto& g = xn->grad_buffer();
                                const Real k = Real(2) * gout[0] / n;
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                  g[i] += k * (xn->value[i] - target);
                                }
                              });
}

}  // namespace

template <class Real>
BasicTensor<Real> l2_loss(const BasicTensor<Real>& pred, const BasicTensor<Real>& target) {
  require_same(pred, target, "l2_loss");
  const auto p = pred.values();
  const auto t = target.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    acc += d * d;
  }
  const Real n = static_cast<Real>(p.size());
  const bool record = detail::should_record<Real>({&pred, &target});
  auto pn = pred.node();
  auto tn = target.node();
  return detail::finish<Real>(
      "l2_loss", Shape{}, {static_cast<Real>(acc / p.size())}, record, {pn, tn},
      [pn, tn, n](const std::vector<Real>& gout) {
        const Real k = Real(2) * gout[0] / n;
        const bool gp = detail::wants_grad(pn);
        const bool gt = detail::wants_grad(tn);
        for (std::size_t i = 0; i < pn->value.size(); ++i) {
          const Real d = k * (pn->value[i] - tn->value[i]);
          if (gp) pn->grad_buffer()[i] += d;
          if (gt) tn->grad_buffer()[i] -= d;
        }
      });
}

template <class Real>
BasicTensor<Real> berhu_loss(const BasicTensor<Real>& pred, const BasicTensor<Real>& target) {
  require_same(pred, target, "berhu_loss");
  const auto p = pred.values();
  const auto t = target.values();
  const std::size_t n = p.size();
  std::vector<Real> e(n);
  std::size_t arg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = p[i] - t[i];
    if (std::abs(e[i]) > std::abs(e[arg])) arg = i;
  }
  const Real c = Real(0.2) * std::abs(e[arg]);
  double acc = 0.0;
  if (c > Real(0)) {
    for (Real v : e) {
      const Real a = std::abs(v);
      acc += a <= c ? a : (v * v + c * c) / (Real(2) * c);
    }
  } else if (std::isnan(c)) {
    acc = std::numeric_limits<double>::quiet_NaN();
  }
  const bool record = detail::should_record<Real>({&pred, &target});
  auto pn = pred.node();
  auto tn = target.node();
  return detail::finish<Real>(
      "berhu_loss", Shape{}, {static_cast<Real>(acc / n)}, record, {pn, tn},
      [pn, tn, e = std::move(e), arg, c](const std::vector<Real>& gout) {
        if (!(c > Real(0))) return;
        const std::size_t n = e.size();
        const Real k = gout[0] / static_cast<Real>(n);
        std::vector<Real> de(n);
        Real dc = 0;  // d(sum of terms)/dc
        for (std::size_t i = 0; i < n; ++i) {
          const Real a = std::abs(e[i]);
          if (a <= c) {
            de[i] = e[i] > 0 ? Real(1) : (e[i] < 0 ? Real(-1) : Real(0));
          } else {
            de[i] = e[i] / c;
            dc += Real(0.5) - e[i] * e[i] / (Real(2) * c * c);
          }
        }
        // c = 0.2 |e_arg|
        de[arg] += dc * Real(0.2) * (e[arg] > 0 ? Real(1) : Real(-1));
        const bool gp = detail::wants_grad(pn);
        const bool gt = detail::wants_grad(tn);
        for (std::size_t i = 0; i < n; ++i) {
          if (gp) pn->grad_buffer()[i] += k * de[i];
          if (gt) tn->grad_buffer()[i] -= k * de[i];
        }
      });
}

template <class Real>
BasicTensor<Real> cross_entropy_loss(const BasicTensor<Real>& logits, const LabelMap& labels,
                                     int num_classes) {
  const Shape s = logits.shape();
  if (s.c != num_classes) {
    throw DimensionError("cross_entropy_loss: logits have " + std::to_string(s.c) +
                         " channels, expected " + std::to_string(num_classes));
  }
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w ||
      static_cast<std::int64_t>(labels.labels.size()) != labels.size()) {
    throw DimensionError("cross_entropy_loss: labels [" + std::to_string(labels.n) + "," +
                         std::to_string(labels.h) + "," + std::to_string(labels.w) +
                         "] do not match logits " + s.str());
  }
  for (auto l : labels.labels) {
    if (l < 0 || l >= num_classes) {
      throw ParameterError("cross_entropy_loss: label " + std::to_string(l) + " outside [0, " +
                           std::to_string(num_classes) + ")");
    }
  }
  const Real* x = logits.values().data();
  const std::int64_t pixels = s.n * s.plane();
  std::vector<Real> probs(static_cast<std::size_t>(s.numel()));
  double acc = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t k = 0; k < s.plane(); ++k) {
      const std::int64_t base = n * s.image() + k;
      Real mx = x[base];
      for (std::int64_t c = 1; c < s.c; ++c) mx = std::max(mx, x[base + c * s.plane()]);
      double z = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        const double ev = std::exp(static_cast<double>(x[base + c * s.plane()] - mx));
        probs[static_cast<std::size_t>(base + c * s.plane())] = static_cast<Real>(ev);
        z += ev;
      }
      for (std::int64_t c = 0; c < s.c; ++c) {
        auto& pr = probs[static_cast<std::size_t>(base + c * s.plane())];
        pr = static_cast<Real>(pr / z);
      }
      const auto label = labels.labels[static_cast<std::size_t>(n * s.plane() + k)];
      acc += std::log(z) - static_cast<double>(x[base + label * s.plane()] - mx);
    }
  }
  const bool record = detail::should_record<Real>({&logits});
  auto ln = logits.node();
  return detail::finish<Real>(
      "cross_entropy_loss", Shape{}, {static_cast<Real>(acc / pixels)}, record, {ln},
      [ln, labels, probs = std::move(probs), s, pixels](const std::vector<Real>& gout) {
        if (!detail::wants_grad(ln)) return;
        auto& g = ln->grad_buffer();
        const Real k = gout[0] / static_cast<Real>(pixels);
        for (std::int64_t n = 0; n < s.n; ++n) {
          for (std::int64_t p = 0; p < s.plane(); ++p) {
            const auto label = labels.labels[static_cast<std::size_t>(n * s.plane() + p)];
            for (std::int64_t c = 0; c < s.c; ++c) {
              const auto i = static_cast<std::size_t>(n * s.image() + c * s.plane() + p);
              g[i] += k * (probs[i] - (c == label ? Real(1) : Real(0)));
            }
          }
        }
      });
}

template <class Real>
BasicTensor<Real> lsgan_d_loss(const BasicTensor<Real>& scores_real,
                               const BasicTensor<Real>& scores_fake) {
  return add(mean_squared_to(scores_real, Real(1)), mean_squared_to(scores_fake, Real(0)));
}

template <class Real>
BasicTensor<Real> lsgan_g_loss(const BasicTensor<Real>& scores_fake) {
  return mean_squared_to(scores_fake, Real(1));
}

template <class Real>
BasicTensor<Real> latent_consistency_loss(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_same(a, b, "latent_consistency_loss");
  return l2_loss(a, b);
}

std::string_view term_name(LossTerm term) {
  switch (term) {
    case LossTerm::kSrL2: return "SR_L2";
    case LossTerm::kDrL2: return "DR_L2";
    case LossTerm::kRrL2: return "RR_L2";
    case LossTerm::kGan: return "GAN";
    case LossTerm::kRdBerhu: return "RD_Berhu";
    case LossTerm::kDdBerhu: return "DD_Berhu";
    case LossTerm::kRsCe: return "RS_CE";
    case LossTerm::kSsCe: return "SS_CE";
    case LossTerm::kLat: return "LAT";
  }
  return "?";
}

double term_weight(LossTerm term, const LossWeights& w) {
  switch (term) {
    case LossTerm::kSrL2:
    case LossTerm::kDrL2:
    case LossTerm::kRrL2: return w.lambda_r * w.lambda_l2;
    case LossTerm::kGan: return w.lambda_r;
    case LossTerm::kRdBerhu:
    case LossTerm::kDdBerhu: return w.lambda_d;
    case LossTerm::kRsCe:
    case LossTerm::kSsCe: return w.lambda_s;
    case LossTerm::kLat: return w.lambda_a;
  }
  return 0.0;
}

template <class Real>
CombinedLoss<Real> combined_loss(const SegPairBatch<Real>& d1, const DepthPairBatch<Real>& d2,
                                 TranslationGraph<Real>& graph, const LossWeights& weights,
                                 const LossOptions& options) {
  weights.validate();
  const std::string& r = graph.name_for(LossKind::kRgbL2Gan);
  const std::string& d = graph.name_for(LossKind::kDepthBerhu);
  const std::string& s = graph.name_for(LossKind::kSegmentationCe);
  auto& enc_r = graph.encoder(r);
  auto& enc_d = graph.encoder(d);
  auto& enc_s = graph.encoder(s);
  auto& dec_r = graph.decoder(r);
  auto& dec_d = graph.decoder(d);
  auto& dec_s = graph.decoder(s);
  const int num_classes = graph.modality(s).channels;
  const Mode mode = options.mode;
  const double sigma = options.noise_sigma;

  auto h_r1 = enc_r.encode(d1.rgb, sigma, mode, options.rng);
  auto h_s1 = enc_s.encode(d1.seg_onehot, sigma, mode, options.rng);
  auto h_r2 = enc_r.encode(d2.rgb, sigma, mode, options.rng);
  auto h_d2 = enc_d.encode(d2.depth, sigma, mode, options.rng);

  auto side = [](Decoder<Real>& dec, const EncoderOutput<Real>& e) {
    return dec.spec().decoder_side_info == SideInfo::kNone ? nullptr : &e;
  };

  std::vector<std::pair<LossTerm, BasicTensor<Real>>> terms;
  auto t_rs = dec_s.decode(h_r1.latent, side(dec_s, h_r1), mode);
  terms.emplace_back(LossTerm::kRsCe, cross_entropy_loss(t_rs, d1.labels, num_classes));
  auto t_sr = dec_r.decode(h_s1.latent, nullptr, mode);
  terms.emplace_back(LossTerm::kSrL2, l2_loss(t_sr, d1.rgb));
  auto t_rd = dec_d.decode(h_r2.latent, side(dec_d, h_r2), mode);
  terms.emplace_back(LossTerm::kRdBerhu, berhu_loss(t_rd, d2.depth));
  auto t_dr = dec_r.decode(h_d2.latent, nullptr, mode);
  terms.emplace_back(LossTerm::kDrL2, l2_loss(t_dr, d2.rgb));

  std::vector<BasicTensor<Real>> fakes = {t_sr, t_dr};
  if (options.autoencoders) {
    auto t_ss = dec_s.decode(h_s1.latent, side(dec_s, h_s1), mode);
    terms.emplace_back(LossTerm::kSsCe, cross_entropy_loss(t_ss, d1.labels, num_classes));
    auto t_dd = dec_d.decode(h_d2.latent, side(dec_d, h_d2), mode);
    terms.emplace_back(LossTerm::kDdBerhu, berhu_loss(t_dd, d2.depth));
    auto t_rr1 = dec_r.decode(h_r1.latent, nullptr, mode);
    auto t_rr2 = dec_r.decode(h_r2.latent, nullptr, mode);
    const BasicTensor<Real> rr_parts[] = {t_rr1, t_rr2};
    const BasicTensor<Real> x_parts[] = {d1.rgb, d2.rgb};
    terms.emplace_back(LossTerm::kRrL2, l2_loss(concat_batch<Real>(rr_parts),
                                                concat_batch<Real>(x_parts)));
    fakes.push_back(t_rr1);
    fakes.push_back(t_rr2);
  }
  if (options.latent_loss) {
    terms.emplace_back(LossTerm::kLat,
                       add(latent_consistency_loss(h_r1.clean_latent, h_s1.clean_latent),
                           latent_consistency_loss(h_r2.clean_latent, h_d2.clean_latent)));
  }
  CombinedLoss<Real> result;
  result.fakes = concat_batch<Real>(fakes);
  if (options.adversarial) {
    auto scores = graph.discriminator().discriminate(result.fakes, mode);
    terms.emplace_back(LossTerm::kGan, lsgan_g_loss(scores));
  }

  std::vector<BasicTensor<Real>> parts;
  std::vector<Real> factors;
  for (auto& [term, value] : terms) {
    const auto idx = static_cast<std::size_t>(term);
    const double w = term_weight(term, weights);
    result.breakdown.raw[idx] = value.item();
    result.breakdown.weighted[idx] = w * value.item();
    parts.push_back(value);
    factors.push_back(static_cast<Real>(w));
  }
  result.total = weighted_sum<Real>(parts, factors);
  result.breakdown.total = result.total.item();
  return result;
}

#define MIXMATCH_INSTANTIATE_LOSSES(Real)                                                      \
  template BasicTensor<Real> l2_loss(const BasicTensor<Real>&, const BasicTensor<Real>&);     \
  template BasicTensor<Real> berhu_loss(const BasicTensor<Real>&, const BasicTensor<Real>&);  \
  template BasicTensor<Real> cross_entropy_loss(const BasicTensor<Real>&, const LabelMap&, int); \
  template BasicTensor<Real> lsgan_d_loss(const BasicTensor<Real>&, const BasicTensor<Real>&); \
  template BasicTensor<Real> lsgan_g_loss(const BasicTensor<Real>&);                           \
  template BasicTensor<Real> latent_consistency_loss(const BasicTensor<Real>&,                \
                                                     const BasicTensor<Real>&);               \
  template CombinedLoss<Real> combined_loss(const SegPairBatch<Real>&,                        \
                                            const DepthPairBatch<Real>&,                      \
                                            TranslationGraph<Real>&, const LossWeights&,      \
                                            const LossOptions&);

MIXMATCH_INSTANTIATE_LOSSES(float)
MIXMATCH_INSTANTIATE_LOSSES(double)

#undef MIXMATCH_INSTANTIATE_LOSSES

}  // namespace mixmatch
