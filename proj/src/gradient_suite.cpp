#include <cmath>
#include <random>

#include "mixmatch/gradcheck.hpp"
#include "mixmatch/graph.hpp"
#include "mixmatch/losses.hpp"
#include "mixmatch/ops.hpp"

namespace mixmatch {
namespace {

using T = Tensor64;

class Maker {
 public:
  explicit Maker(std::uint64_t seed) : rng_(seed) {}

  T normal(Shape s, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    auto t = T::zeros(s);
    for (auto& v : t.mutable_values()) v = dist(rng_);
    return t;
  }

  // Values bounded away from zero, for kinked activations.
  T away_from_zero(Shape s) {
    auto t = normal(s);
    for (auto& v : t.mutable_values()) v = std::copysign(0.05 + std::abs(v), v);
    return t;
  }

  // A shuffled ladder with gaps of 0.01, so no pooling window is near a tie.
  T distinct(Shape s) {
    auto t = T::zeros(s);
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i) - 1.0;
    std::shuffle(vals.begin(), vals.end(), rng_);
    return t;
  }

  LabelMap labels(std::int64_t n, std::int64_t h, std::int64_t w, int classes) {
    LabelMap m{n, h, w, {}};
    for (std::int64_t i = 0; i < n * h * w; ++i) {
      m.labels.push_back(static_cast<std::int32_t>(rng_() % static_cast<std::uint64_t>(classes)));
    }
    return m;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Scalar read-out of a tensor through a fixed random projection.
T project(const T& y, const T& weights) { return sum(multiply(y, weights)); }

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed) {
  Maker mk(seed);
  std::vector<GradSuiteEntry> out;
  auto check = [&](std::string name, const std::function<T()>& fn, std::vector<T> leaves) {
    out.push_back({std::move(name), grad_check(fn, std::move(leaves)).max_relative_error});
  };

  {
    auto x = mk.normal({2, 3, 6, 6});
    auto w = mk.normal({4, 3, 3, 3}, 0.3);
    auto b = mk.normal({1, 4, 1, 1});
    auto r = mk.normal({2, 4, 6, 6});
    check("conv2d", [=] { return project(conv2d(x, w, b, 1, 1), r); }, {x, w, b});
    auto r2 = mk.normal({2, 4, 3, 3});
    check("conv2d_stride2", [=] { return project(conv2d(x, w, b, 2, 1), r2); }, {x, w, b});
  }
  {
    auto x = mk.normal({2, 3, 4, 4});
    auto w = mk.normal({3, 2, 3, 3}, 0.3);
    auto b = mk.normal({1, 2, 1, 1});
    auto r = mk.normal({2, 2, 8, 8});
    check("conv2d_transpose",
          [=] { return project(conv2d_transpose(x, w, b, 2, 1, 1), r); }, {x, w, b});
  }
  {
    auto x = mk.distinct({2, 2, 6, 6});
    auto r1 = mk.normal({2, 2, 3, 3});
    auto r2 = mk.normal({2, 2, 6, 6});
    check("maxpool_unpool",
          [=] {
            auto [pooled, idx] = maxpool2_indices(x);
            return project(maxunpool2(multiply(pooled, r1), idx, x.shape()), r2);
          },
          {x});
  }
  {
    auto x = mk.normal({4, 3, 3, 3});
    auto gamma = mk.normal({1, 3, 1, 1});
    auto beta = mk.normal({1, 3, 1, 1});
    auto r = mk.normal({4, 3, 3, 3});
    check("batchnorm_train",
          [=] {
            BatchNormOptions opts;
            opts.update_running = false;
            return project(batchnorm<double>(x, gamma, beta, nullptr, opts), r);
          },
          {x, gamma, beta});
    auto stats = RunningStats<double>::create(3);
    for (auto& v : stats.var.mutable_values()) v = 0.5 + std::abs(v);
    check("batchnorm_eval",
          [=] {
            auto s = stats;
            BatchNormOptions opts;
            opts.mode = Mode::kEval;
            return project(batchnorm(x, gamma, beta, &s, opts), r);
          },
          {x, gamma, beta});
  }
  {
    auto x = mk.away_from_zero({2, 3, 4, 4});
    auto r = mk.normal({2, 3, 4, 4});
    check("relu", [=] { return project(relu(x), r); }, {x});
    check("leaky_relu", [=] { return project(leaky_relu(x, 0.2), r); }, {x});
    check("tanh", [=] { return project(tanh_act(x), r); }, {x});
    auto noise_seed = mk.rng()();
    check("gaussian_noise",
          [=] {
            std::mt19937_64 rng(noise_seed);
            return project(add_gaussian_noise(x, 0.5, rng), r);
          },
          {x});
    auto r_up = mk.normal({2, 3, 8, 8});
    check("upsample_nearest", [=] { return project(upsample_nearest2(x), r_up); }, {x});
    auto y = mk.normal({2, 2, 4, 4});
    auto r_cat = mk.normal({2, 5, 4, 4});
    check("concat_channels", [=] { return project(concat_channels(x, y), r_cat); }, {x, y});
    auto z = mk.normal({2, 3, 4, 4});
    check("weighted_sum",
          [=] {
            const T parts[] = {x, z};
            const double weights[] = {0.8, 0.2};
            return project(weighted_sum<double>(parts, weights), r);
          },
          {x, z});
  }

  // Losses behind a one-layer micro-network.
  auto micro = [&](int out_ch) {
    return std::make_pair(mk.normal({out_ch, 3, 3, 3}, 0.3), mk.normal({1, out_ch, 1, 1}, 0.1));
  };
  {
    auto x = mk.normal({2, 3, 5, 5});
    auto [w, b] = micro(2);
    auto target = mk.normal({2, 2, 5, 5});
    check("l2_loss", [=] { return l2_loss(conv2d(x, w, b, 1, 1), target); }, {x, w, b});
    check("berhu_loss", [=] { return berhu_loss(conv2d(x, w, b, 1, 1), target); }, {x, w, b});
  }
  {
    auto x = mk.normal({2, 3, 4, 4});
    auto [w, b] = micro(5);
    auto labels = mk.labels(2, 4, 4, 5);
    check("cross_entropy_loss",
          [=] { return cross_entropy_loss(conv2d(x, w, b, 1, 1), labels, 5); }, {x, w, b});
  }
  {
    auto real = mk.normal({2, 3, 4, 4});
    auto fake = mk.normal({2, 3, 4, 4});
    auto [w, b] = micro(1);
    check("lsgan_d_loss",
          [=] { return lsgan_d_loss(conv2d(real, w, b, 1, 1), conv2d(fake, w, b, 1, 1)); },
          {real, fake, w, b});
    check("lsgan_g_loss", [=] { return lsgan_g_loss(conv2d(fake, w, b, 1, 1)); }, {fake, w, b});
  }
  {
    auto a = mk.normal({2, 3, 4, 4});
    auto c = mk.normal({2, 3, 4, 4});
    auto [wa, ba] = micro(4);
    auto [wc, bc] = micro(4);
    check("latent_consistency_loss",
          [=] {
            return latent_consistency_loss(conv2d(a, wa, ba, 1, 1), conv2d(c, wc, bc, 1, 1));
          },
          {a, c, wa, wc});
  }

  // The full generator objective on a two-stage graph.
  {
    ArchConfig arch;
    arch.stages = {{1, 3}, {1, 4}};
    arch.height = 8;
    arch.width = 8;
    auto graph = std::make_shared<TranslationGraph<double>>(arch, seed);
    graph->register_modality(ModalitySpec::rgb());
    graph->register_modality(ModalitySpec::depth(SideInfo::kPoolingIndices));
    graph->register_modality(ModalitySpec::segmentation(4, SideInfo::kPoolingIndices));
    graph->register_training_pair("rgb", "seg");
    graph->register_training_pair("rgb", "depth");
    SegPairBatch<double> d1;
    d1.rgb = mk.normal({2, 3, 8, 8});
    d1.labels = mk.labels(2, 8, 8, 4);
    d1.seg_onehot = one_hot<double>(d1.labels, 4);
    DepthPairBatch<double> d2;
    d2.rgb = mk.normal({2, 3, 8, 8});
    d2.depth = mk.normal({2, 1, 8, 8});
    const auto noise_seed = mk.rng()();
    auto objective = [graph, d1, d2, noise_seed] {
      std::mt19937_64 rng(noise_seed);
      LossOptions opts;
      opts.noise_sigma = 0.5;
      opts.rng = &rng;
      return combined_loss(d1, d2, *graph, LossWeights{}, opts).total;
    };
    std::vector<T> leaves = {graph->encoder("depth").stages()[0][0].weight,
                             graph->encoder("rgb").stages()[1][0].gamma,
                             graph->decoder("seg").head().weight,
                             graph->decoder("depth").stages()[0][0].weight,
                             graph->decoder("rgb").head().bias};
    check("combined_objective", objective, leaves);
  }
  return out;
}

}  // namespace mixmatch
