#pragma once

#include <array>
#include <optional>
#include <random>
#include <string_view>

#include "mixmatch/graph.hpp"
#include "mixmatch/ops.hpp"

namespace mixmatch {

struct LossWeights {
  double lambda_r = 1.0;
  double lambda_s = 100.0;
  double lambda_d = 10.0;
  double lambda_a = 1.0;
  double lambda_l2 = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Mean squared error; both arguments receive gradient.
template <class Real>
BasicTensor<Real> l2_loss(const BasicTensor<Real>& pred, const BasicTensor<Real>& target);

// Reverse Huber with cutoff c = 0.2 * max|pred - target| over the batch:
// |e| for |e| <= c, (e^2 + c^2) / (2c) above. The gradient includes the
// dependence of c on the largest residual.
template <class Real>
BasicTensor<Real> berhu_loss(const BasicTensor<Real>& pred, const BasicTensor<Real>& target);

// Mean over pixels of -log softmax(logits)[label].
template <class Real>
BasicTensor<Real> cross_entropy_loss(const BasicTensor<Real>& logits, const LabelMap& labels,
                                     int num_classes);

// mean((real - 1)^2) + mean(fake^2)
template <class Real>
BasicTensor<Real> lsgan_d_loss(const BasicTensor<Real>& scores_real,
                               const BasicTensor<Real>& scores_fake);

// mean((fake - 1)^2)
template <class Real>
BasicTensor<Real> lsgan_g_loss(const BasicTensor<Real>& scores_fake);

template <class Real>
BasicTensor<Real> latent_consistency_loss(const BasicTensor<Real>& a, const BasicTensor<Real>& b);

enum class LossTerm : int {
  kSrL2 = 0,
  kDrL2,
  kRrL2,
  kGan,
  kRdBerhu,
  kDdBerhu,
  kRsCe,
  kSsCe,
  kLat,
};
inline constexpr std::size_t kNumLossTerms = 9;
inline constexpr std::array<LossTerm, kNumLossTerms> kAllLossTerms = {
    LossTerm::kSrL2,    LossTerm::kDrL2, LossTerm::kRrL2, LossTerm::kGan, LossTerm::kRdBerhu,
    LossTerm::kDdBerhu, LossTerm::kRsCe, LossTerm::kSsCe, LossTerm::kLat};

std::string_view term_name(LossTerm term);
// Effective multiplier of a raw term in the total objective.
double term_weight(LossTerm term, const LossWeights& weights);

struct LossBreakdown {
  std::array<std::optional<double>, kNumLossTerms> raw{};
  std::array<std::optional<double>, kNumLossTerms> weighted{};
  double total = 0.0;

  bool has(LossTerm t) const { return raw[static_cast<std::size_t>(t)].has_value(); }
  double raw_of(LossTerm t) const { return raw[static_cast<std::size_t>(t)].value(); }
};

template <class Real>
struct SegPairBatch {
  BasicTensor<Real> rgb;
  BasicTensor<Real> seg_onehot;
  LabelMap labels;
};

template <class Real>
struct DepthPairBatch {
  BasicTensor<Real> rgb;
  BasicTensor<Real> depth;
};

struct LossOptions {
  Mode mode = Mode::kTrain;
  bool autoencoders = true;
  bool latent_loss = true;
  bool adversarial = true;
  double noise_sigma = 0.0;
  std::mt19937_64* rng = nullptr;
};

template <class Real>
struct CombinedLoss {
  BasicTensor<Real> total;
  LossBreakdown breakdown;
  // Generated RGB images (SR, DR and RR outputs), for the discriminator step.
  BasicTensor<Real> fakes;
};

/// Generator objective over one (rgb, seg) batch and one (rgb, depth) batch.
/// Disabled terms are absent from the breakdown and contribute nothing.
template <class Real>
CombinedLoss<Real> combined_loss(const SegPairBatch<Real>& d1, const DepthPairBatch<Real>& d2,
                                 TranslationGraph<Real>& graph, const LossWeights& weights,
                                 const LossOptions& options);

}  // namespace mixmatch
