#include <doctest.h>

#include <random>

#include "mixmatch/gradcheck.hpp"
#include "mixmatch/network.hpp"
#include "test_util.hpp"

using namespace mixmatch;
using test::random_tensor;

namespace {

ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.stages = {{1, 3}, {1, 4}};
  arch.height = 8;
  arch.width = 8;
  return arch;
}

}  // namespace

TEST_SUITE("network-blocks") {
TEST_CASE("presets") {
  const auto desk = ArchConfig::desk();
  CHECK(desk.stages == std::vector<StageSpec>{{2, 16}, {2, 32}, {2, 64}});
  CHECK(desk.latent_height() == 4);
  CHECK(desk.latent_width() == 4);
  CHECK(desk.discriminator_blocks() == 3);
  const auto paper = ArchConfig::paper();
  CHECK(paper.num_stages() == 5);
  CHECK(paper.height == 256);
  CHECK(paper.discriminator_blocks() == 4);
  CHECK_THROWS_AS(ArchConfig::from_name("huge"), ConfigError);

  ArchConfig odd = desk;
  odd.height = 36;  // not divisible by 2^3
  CHECK_THROWS_AS(odd.validate(), DimensionError);
}

TEST_CASE("paper-preset first layers") {
  std::mt19937_64 rng(1);
  Encoder<float> rgb(ModalitySpec::rgb(), ArchConfig::paper(), rng);
  CHECK(rgb.stages()[0][0].weight.shape() == Shape{64, 3, 3, 3});
  Encoder<float> seg(ModalitySpec::segmentation(14, SideInfo::kPoolingIndices), ArchConfig::paper(), rng);
  CHECK(seg.stages()[0][0].weight.shape() == Shape{64, 14, 3, 3});
  CHECK(seg.stages().size() == 5);
  CHECK(seg.stages()[2].size() == 3);

  Decoder<float> depth_dec(ModalitySpec::depth(SideInfo::kPoolingIndices), ArchConfig::paper(), rng);
  CHECK(depth_dec.head().weight.shape() == Shape{1, 64, 3, 3});
  Decoder<float> seg_dec(ModalitySpec::segmentation(14, SideInfo::kPoolingIndices), ArchConfig::paper(), rng);
  CHECK(seg_dec.head().weight.shape() == Shape{14, 64, 3, 3});
}

TEST_CASE("paper-preset discriminator feature size") {
  std::mt19937_64 rng(2);
  Discriminator<float> d(ArchConfig::paper(), rng);
  CHECK(d.blocks().size() == 5);
  CHECK(d.blocks()[3].weight.shape().n == 512);
  auto x = random_tensor<float>({1, 3, 256, 256}, rng);
  auto score = d.discriminate(x, Mode::kEval);
  CHECK(score.shape() == Shape{1, 1, 16, 16});
}

TEST_CASE("desk discriminator") {
  std::mt19937_64 rng(3);
  Discriminator<float> d(ArchConfig::desk(), rng);
  auto score = d.discriminate(random_tensor<float>({2, 3, 32, 32}, rng), Mode::kTrain);
  CHECK(score.shape() == Shape{2, 1, 4, 4});
  for (float v : score.values()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(d.discriminate(Tensor::zeros({2, 1, 32, 32}), Mode::kEval), DimensionError);
}

TEST_CASE("encoder outputs") {
  std::mt19937_64 rng(4);
  Encoder<float> enc(ModalitySpec::depth(SideInfo::kPoolingIndices), ArchConfig::desk(), rng);
  auto x = random_tensor<float>({2, 1, 32, 32}, rng);
  auto a = enc.encode(x, 0.5, Mode::kEval);
  auto b = enc.encode(x, 0.5, Mode::kEval);
  CHECK(a.latent.shape() == Shape{2, 64, 4, 4});
  CHECK(a.latent.vector() == b.latent.vector());
  REQUIRE(a.indices.size() == 3);
  CHECK(a.indices[0].input_shape == Shape{2, 16, 32, 32});
  CHECK(a.skip_features[2].shape() == Shape{2, 64, 8, 8});

  std::mt19937_64 n1(10), n2(11);
  auto t1 = enc.encode(x, 0.5, Mode::kTrain, &n1);
  auto t2 = enc.encode(x, 0.5, Mode::kTrain, &n2);
  CHECK(t1.latent.vector() != t2.latent.vector());
  CHECK(t1.clean_latent.vector() == t2.clean_latent.vector());
  CHECK_THROWS_AS(enc.encode(x, 0.5, Mode::kTrain), ContractError);
  CHECK_THROWS_AS(enc.encode(Tensor::zeros({2, 3, 32, 32}), 0.0, Mode::kEval), DimensionError);

  std::mt19937_64 ra(5), rb(5);
  Encoder<float> e1(ModalitySpec::rgb(), ArchConfig::desk(), ra);
  Encoder<float> e2(ModalitySpec::rgb(), ArchConfig::desk(), rb);
  auto img = random_tensor<float>({2, 3, 32, 32}, rng);
  auto o1 = e1.encode(img, 0.0, Mode::kEval);
  auto o2 = e2.encode(img, 0.0, Mode::kEval);
  CHECK(o1.latent.vector() == o2.latent.vector());
  CHECK(o1.indices == o2.indices);
}

TEST_CASE("segmentation decoder consumes depth-encoder indices") {
  std::mt19937_64 rng(6);
  Encoder<float> depth_enc(ModalitySpec::depth(SideInfo::kPoolingIndices), ArchConfig::desk(), rng);
  Decoder<float> seg_dec(ModalitySpec::segmentation(14, SideInfo::kPoolingIndices), ArchConfig::desk(), rng);
  auto z = random_tensor<float>({3, 1, 32, 32}, rng);
  auto h = depth_enc.encode(z, 0.0, Mode::kEval);
  auto y = seg_dec.decode(h.latent, &h, Mode::kEval);
  CHECK(y.shape() == Shape{3, 14, 32, 32});
  CHECK_THROWS_AS(seg_dec.decode(h.latent, nullptr, Mode::kEval), ContractError);
}

TEST_CASE("decoder output channels and ranges") {
  std::mt19937_64 rng(7);
  const auto arch = ArchConfig::desk();
  Encoder<float> enc(ModalitySpec::rgb(), arch, rng);
  auto h = enc.encode(random_tensor<float>({2, 3, 32, 32}, rng), 0.0, Mode::kEval);

  Decoder<float> depth(ModalitySpec::depth(SideInfo::kPoolingIndices), arch, rng);
  CHECK(depth.decode(h.latent, &h, Mode::kEval).shape() == Shape{2, 1, 32, 32});

  Decoder<float> rgb(ModalitySpec::rgb(), arch, rng);
  CHECK(ModalitySpec::rgb().decoder_side_info == SideInfo::kNone);
  auto scaled = h.latent.clone();
  for (auto& v : scaled.mutable_values()) v *= 100.0f;
  auto img = rgb.decode(scaled, nullptr, Mode::kEval);
  CHECK(img.shape() == Shape{2, 3, 32, 32});
  for (float v : img.values()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("none mode maps a zero latent to a constant map") {
  std::mt19937_64 rng(8);
  Decoder<double> dec(ModalitySpec::depth(SideInfo::kNone), tiny_arch(), rng);
  for (auto& v : dec.head().bias.mutable_values()) v = 0.37;
  auto y = dec.decode(Tensor64::zeros({1, 4, 2, 2}), nullptr, Mode::kEval);
  CHECK(y.shape() == Shape{1, 1, 8, 8});
  for (double v : y.values()) CHECK(v == 0.37);
}

TEST_CASE("skip mode") {
  std::mt19937_64 rng(9);
  const auto arch = tiny_arch();
  Encoder<double> enc(ModalitySpec::rgb(), arch, rng);
  Decoder<double> dec(ModalitySpec::depth(SideInfo::kSkipConnections), arch, rng);
  CHECK(dec.stages()[0][0].weight.shape().c == 8);  // doubled input for the concatenation
  auto h = enc.encode(random_tensor<double>({2, 3, 8, 8}, rng), 0.0, Mode::kEval);
  CHECK(dec.decode(h.latent, &h, Mode::kEval).shape() == Shape{2, 1, 8, 8});

  auto short_side = h;
  short_side.skip_features.pop_back();
  CHECK_THROWS_AS(dec.decode(h.latent, &short_side, Mode::kEval), DimensionError);

  auto short_idx = h;
  short_idx.indices.pop_back();
  Decoder<double> pool_dec(ModalitySpec::depth(SideInfo::kPoolingIndices), arch, rng);
  CHECK_THROWS_AS(pool_dec.decode(h.latent, &short_idx, Mode::kEval), DimensionError);
}

TEST_CASE("shared encoder sums gradients over both uses") {
  std::mt19937_64 rng(10);
  const auto arch = tiny_arch();
  auto enc = std::make_shared<Encoder<double>>(ModalitySpec::rgb(), arch, rng);
  auto dec_a = std::make_shared<Decoder<double>>(ModalitySpec::depth(SideInfo::kPoolingIndices), arch, rng);
  auto dec_b = std::make_shared<Decoder<double>>(ModalitySpec::rgb(), arch, rng);
  auto x = random_tensor<double>({2, 3, 8, 8}, rng);
  auto ra = random_tensor<double>({2, 1, 8, 8}, rng);
  auto rb = random_tensor<double>({2, 3, 8, 8}, rng);
  auto fn = [=] {
    auto h = enc->encode(x, 0.0, Mode::kEval);
    auto a = sum(multiply(dec_a->decode(h.latent, &h, Mode::kEval), ra));
    auto b = sum(multiply(dec_b->decode(h.latent, nullptr, Mode::kEval), rb));
    return add(a, b);
  };
  auto err = grad_check(fn, {enc->stages()[0][0].weight, enc->stages()[1][0].gamma});
  CHECK(err.max_relative_error < 1e-4);
}

TEST_CASE("freeze") {
  std::mt19937_64 rng(11);
  Encoder<float> enc(ModalitySpec::rgb(), ArchConfig::desk(), rng);
  enc.set_frozen(true);
  for (const auto& p : enc.parameters()) CHECK_FALSE(p.requires_grad());
  auto x = random_tensor<float>({2, 3, 32, 32}, rng);
  const auto mean_before = enc.stages()[0][0].stats.mean.vector();
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    enc.encode(x, 0.0, Mode::kTrain);
  }
  CHECK(tape.size() == 0);
  CHECK(enc.stages()[0][0].stats.mean.vector() == mean_before);
  enc.set_frozen(false);
  for (const auto& p : enc.parameters()) CHECK(p.requires_grad());
}

TEST_CASE("modality spec validation") {
  auto bad = ModalitySpec::rgb();
  bad.decoder_side_info = SideInfo::kPoolingIndices;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_side_info("skip") == SideInfo::kSkipConnections);
  CHECK_THROWS_AS(parse_side_info("bogus"), ConfigError);
}
}
