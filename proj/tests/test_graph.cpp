#include <doctest.h>

#include <cmath>
#include <random>

#include "mixmatch/data.hpp"
#include "mixmatch/experiment.hpp"
#include "mixmatch/trainer.hpp"
#include "test_util.hpp"

using namespace mixmatch;
using test::random_tensor;

namespace {

std::unique_ptr<TranslationGraph<float>> desk_graph(std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.seed = seed;
  return build_graph(cfg, 8);
}

SplitSpec small_split() {
  SplitSpec spec;
  spec.n_d1 = 32;
  spec.n_d2 = 32;
  spec.n_d3 = 16;
  spec.n_val = 8;
  return spec;
}

TrainConfig short_config(std::int64_t p1, std::int64_t p2) {
  TrainConfig cfg;
  cfg.iters_phase1 = p1;
  cfg.iters_phase2 = p2;
  cfg.batch_size = 4;
  cfg.log_interval = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("translation-graph") {
TEST_CASE("registration and trained pairs") {
  auto g = desk_graph();
  CHECK(g->trained_pairs().size() == 4);
  CHECK(g->trained_pairs().count({"depth", "rgb"}) == 1);
  CHECK(g->trained_pairs().count({"depth", "seg"}) == 0);
  CHECK_THROWS_AS(g->register_modality(ModalitySpec::rgb()), ConfigError);
  CHECK_THROWS_AS(g->register_training_pair("rgb", "thermal"), CompositionError);
  CHECK_THROWS_AS(g->register_training_pair("rgb", "rgb"), ConfigError);
  CHECK(g->has_discriminator());
  CHECK(canonical_modality("D") == "depth");
  CHECK(canonical_modality("S") == "seg");
  CHECK(canonical_modality("R") == "rgb");
}

TEST_CASE("composition") {
  auto g = desk_graph();
  std::mt19937_64 rng(1);
  auto z = random_tensor<float>({2, 1, 32, 32}, rng);
  auto ds = g->compose("depth", "seg");
  CHECK(ds(z).shape() == Shape{2, 8, 32, 32});
  CHECK(g->compose("rgb", "rgb")(random_tensor<float>({2, 3, 32, 32}, rng)).shape() == Shape{2, 3, 32, 32});
  CHECK_THROWS_AS(g->compose("depth", "thermal"), CompositionError);
  CHECK_THROWS_AS(g->compose_cascade({"depth"}), CompositionError);

  // Cascade [D, S] is the direct composition.
  CHECK(g->compose_cascade({"depth", "seg"})(z).vector() == ds(z).vector());
  CHECK(g->compose_cascade({"depth", "rgb", "seg"})(z).shape() == Shape{2, 8, 32, 32});

  auto seg_input = one_hot<float>(argmax_channels(ds(z)), 8);
  CHECK(g->compose("seg", "depth")(seg_input).shape() == Shape{2, 1, 32, 32});
}

TEST_CASE("composition names the untrained side") {
  TranslationGraph<float> g(ArchConfig::desk(), 0);
  g.register_modality(ModalitySpec::rgb());
  g.register_modality(ModalitySpec::depth(SideInfo::kPoolingIndices));
  g.register_modality(ModalitySpec::segmentation(8, SideInfo::kPoolingIndices));
  g.register_training_pair("rgb", "seg");
  g.set_autoencoders_enabled(false);
  try {
    g.compose("depth", "seg");
    FAIL("expected a composition error");
  } catch (const CompositionError& e) {
    CHECK(std::string(e.what()).find("encoder 'depth'") != std::string::npos);
  }
  try {
    g.compose("rgb", "depth");
    FAIL("expected a composition error");
  } catch (const CompositionError& e) {
    CHECK(std::string(e.what()).find("decoder 'depth'") != std::string::npos);
  }
  CHECK_NOTHROW(g.compose("seg", "rgb"));
}

TEST_CASE("fusion boundaries") {
  auto g = desk_graph(3);
  std::mt19937_64 rng(2);
  auto x = random_tensor<float>({2, 3, 32, 32}, rng);
  auto z = random_tensor<float>({2, 1, 32, 32}, rng);
  const auto hx = g->encode_eval("rgb", x);
  const auto hz = g->encode_eval("depth", z);

  auto fused_seg = [&](double alpha, const std::string& source) {
    const WeightedEncoding<float> in[] = {{"rgb", &hx, 1.0 - alpha}, {"depth", &hz, alpha}};
    return g->decode_eval("seg", fuse_latents<float>(in, source));
  };
  CHECK(fused_seg(0.0, "rgb").vector() == g->compose("rgb", "seg")(x).vector());
  CHECK(fused_seg(1.0, "depth").vector() == g->compose("depth", "seg")(z).vector());

  const auto mid = fused_seg(0.2, "rgb");
  CHECK(mid.shape() == Shape{2, 8, 32, 32});
  CHECK(mid.vector() != fused_seg(0.0, "rgb").vector());

  const WeightedEncoding<float> in[] = {{"rgb", &hx, 0.8}, {"depth", &hz, 0.2}};
  auto fused = fuse_latents<float>(in, "depth");
  CHECK(fused.indices == hz.indices);
  for (std::size_t i = 0; i < fused.latent.values().size(); ++i) {
    const float expect = 0.8f * hx.latent.values()[i] + 0.2f * hz.latent.values()[i];
    CHECK(fused.latent.values()[i] == doctest::Approx(expect).epsilon(1e-6));
  }
  CHECK_THROWS_AS(fuse_latents<float>(in, "seg"), ParameterError);
  CHECK_THROWS_AS((FusionSpec{1.5, "rgb"}.validate()), ParameterError);
  CHECK_THROWS_AS((FusionSpec{-0.1, "rgb"}.validate()), ParameterError);
}

TEST_CASE("module counts") {
  const auto check = [](std::int64_t n, ModuleStrategy s, std::int64_t e, std::int64_t d, std::int64_t p) {
    const auto c = count_trained_modules(n, s);
    CHECK(c.encoders == e);
    CHECK(c.decoders == d);
    CHECK(c.trained_pairs == p);
  };
  check(2, ModuleStrategy::kMixMatchAnchor, 2, 2, 1);
  check(2, ModuleStrategy::kPairwise, 1, 1, 1);
  check(3, ModuleStrategy::kMixMatchAnchor, 3, 3, 2);
  check(3, ModuleStrategy::kPairwise, 3, 3, 3);
  check(11, ModuleStrategy::kMixMatchAnchor, 11, 11, 10);
  check(11, ModuleStrategy::kPairwise, 55, 55, 55);
  CHECK_THROWS_AS(count_trained_modules(1, ModuleStrategy::kPairwise), ParameterError);
  const auto ratio = [](std::int64_t n) {
    return static_cast<double>(count_trained_modules(n, ModuleStrategy::kMixMatchAnchor).trained_pairs) /
           static_cast<double>(count_trained_modules(n, ModuleStrategy::kPairwise).trained_pairs);
  };
  CHECK(ratio(1000) == doctest::Approx(2.0 / 1000.0).epsilon(1e-12));
}

TEST_CASE("save and load") {
  test::TempDir dir;
  auto g = desk_graph(5);
  g->save(dir.path());
  CHECK(std::filesystem::exists(dir.path() / "graph.json"));
  CHECK(std::filesystem::exists(dir.path() / "enc_depth.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "dec_seg.ckpt"));
  CHECK(std::filesystem::exists(dir.path() / "disc_rgb.ckpt"));
  auto loaded = TranslationGraph<float>::load(dir.path());
  std::mt19937_64 rng(3);
  auto z = random_tensor<float>({2, 1, 32, 32}, rng);
  CHECK(loaded->compose("depth", "seg")(z).vector() == g->compose("depth", "seg")(z).vector());
  CHECK(loaded->trained_pairs() == g->trained_pairs());

  std::filesystem::remove(dir.path() / "dec_seg.ckpt");
  CHECK_THROWS_AS(TranslationGraph<float>::load(dir.path()), FormatError);
  test::TempDir empty;
  CHECK_THROWS_AS(TranslationGraph<float>::load(empty.path()), FormatError);
}

TEST_CASE("zero-pair protocol guard") {
  auto g = desk_graph();
  CHECK_NOTHROW(check_zero_pair_protocol(*g));
  g->register_training_pair("depth", "seg");
  CHECK_THROWS_AS(check_zero_pair_protocol(*g), ProtocolError);
  const auto splits = make_splits(small_split());
  CHECK_THROWS_AS(train(*g, splits.d1, splits.d2, short_config(1, 0)), ProtocolError);

  // Every experiment trains only graphs built from the anchor pairs.
  for (const auto& name : kExperimentNames) {
    for (const auto& [label, cfg] : experiment_runs(name, TrainConfig{})) {
      CHECK_NOTHROW(check_zero_pair_protocol(*build_graph(cfg, 8)));
    }
  }
}

TEST_CASE("experiment run grids") {
  const auto ablation = experiment_runs("ablation", TrainConfig{});
  REQUIRE(ablation.size() == 4);
  CHECK(ablation[0].second.ablation == AblationFlags{false, false, false});
  CHECK(ablation[3].second.ablation == AblationFlags{true, true, true});
  const auto sides = experiment_runs("sidesweep", TrainConfig{});
  REQUIRE(sides.size() == 3);
  CHECK(sides[0].second.side_info_mode == SideInfo::kNone);
  CHECK(sides[1].second.side_info_mode == SideInfo::kSkipConnections);
  CHECK(sides[2].second.side_info_mode == SideInfo::kPoolingIndices);
  CHECK_THROWS(experiment_runs("nope", TrainConfig{}));
}

TEST_CASE("training is deterministic") {
  const auto splits = make_splits(small_split());
  const auto cfg = short_config(4, 4);
  const ValidationSets val{&splits.val_seg, &splits.val_depth};
  auto g1 = build_graph(cfg, 8);
  auto g2 = build_graph(cfg, 8);
  const auto r1 = train(*g1, splits.d1, splits.d2, cfg, val);
  const auto r2 = train(*g2, splits.d1, splits.d2, cfg, val);
  CHECK(r1.csv() == r2.csv());
  CHECK(r1.rows.size() == 2);
  const auto files1 = g1->checkpoint_files();
  const auto files2 = g2->checkpoint_files();
  REQUIRE(files1.size() == files2.size());
  for (std::size_t f = 0; f < files1.size(); ++f)
    for (std::size_t t = 0; t < files1[f].second.size(); ++t)
      CHECK(files1[f].second[t].second.vector() == files2[f].second[t].second.vector());
}

TEST_CASE("the RGB encoder stays fixed through phase 2") {
  const auto splits = make_splits(small_split());
  const auto cfg = short_config(3, 4);
  auto g = build_graph(cfg, 8);
  std::vector<std::vector<float>> snapshot;
  std::vector<std::vector<float>> depth_snapshot;
  bool changed = false;
  bool depth_moved = false;
  TrainCallbacks cb;
  cb.on_iteration = [&](std::int64_t it, int phase, const LossBreakdown&) {
    const auto params = g->encoder("rgb").parameters();
    const auto depth_params = g->encoder("depth").parameters();
    if (it == 3) {
      for (const auto& p : params) snapshot.push_back(p.vector());
      for (const auto& p : depth_params) depth_snapshot.push_back(p.vector());
    }
    if (phase == 2) {
      for (std::size_t i = 0; i < params.size(); ++i) changed |= params[i].vector() != snapshot[i];
      for (std::size_t i = 0; i < depth_params.size(); ++i) {
        depth_moved |= depth_params[i].vector() != depth_snapshot[i];
      }
    }
  };
  train(*g, splits.d1, splits.d2, cfg, {}, cb);
  CHECK_FALSE(changed);
  CHECK(depth_moved);
}

TEST_CASE("ablation flags remove their terms") {
  const auto splits = make_splits(small_split());
  auto cfg = short_config(2, 0);
  cfg.ablation = {false, false, false};
  auto g = build_graph(cfg, 8);
  std::vector<LossBreakdown> seen;
  TrainCallbacks cb;
  cb.on_iteration = [&](std::int64_t, int, const LossBreakdown& b) { seen.push_back(b); };
  train(*g, splits.d1, splits.d2, cfg, {}, cb);
  for (const auto& b : seen) {
    CHECK_FALSE(b.has(LossTerm::kRrL2));
    CHECK_FALSE(b.has(LossTerm::kDdBerhu));
    CHECK_FALSE(b.has(LossTerm::kSsCe));
    CHECK_FALSE(b.has(LossTerm::kLat));
    CHECK(b.has(LossTerm::kRsCe));
  }
  const auto header = TrainingReport{}.csv();
  CHECK(header.rfind("iteration,phase,raw_SR_L2", 0) == 0);
}

TEST_CASE("segmentation loss trends down over 200 iterations") {
  SplitSpec spec = small_split();
  spec.n_d1 = 256;
  spec.n_d2 = 256;
  const auto splits = make_splits(spec);
  auto cfg = short_config(200, 0);
  cfg.batch_size = 8;
  auto g = build_graph(cfg, 8);
  std::vector<double> ce;
  TrainCallbacks cb;
  cb.on_iteration = [&](std::int64_t, int, const LossBreakdown& b) { ce.push_back(b.raw_of(LossTerm::kRsCe)); };
  train(*g, splits.d1, splits.d2, cfg, {}, cb);
  REQUIRE(ce.size() == 200);
  // Means over consecutive 50-iteration windows decrease.
  std::vector<double> windows;
  for (std::size_t w = 0; w < 4; ++w) {
    double s = 0;
    for (std::size_t i = 50 * w; i < 50 * (w + 1); ++i) s += ce[i];
    windows.push_back(s / 50);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) CHECK(windows[w] < windows[w - 1]);
}

TEST_CASE("a non-finite loss term aborts training with its name") {
  auto splits = make_splits(small_split());
  for (auto& item : splits.d2.items) item.depth[0] = std::nanf("");
  auto g = build_graph(short_config(1, 0), 8);
  try {
    train(*g, splits.d1, splits.d2, short_config(1, 0));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("loss term DR_L2") != std::string::npos);
  }
  CHECK_THROWS_AS(train(*g, Dataset<SegSample>{}, splits.d2, short_config(1, 0)), ContractError);
}
}
