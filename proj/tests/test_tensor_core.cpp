#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mixmatch/checkpoint.hpp"
#include "mixmatch/gradcheck.hpp"
#include "mixmatch/ops.hpp"
#include "mixmatch/optim.hpp"
#include "test_util.hpp"

using namespace mixmatch;
using test::random_tensor;

namespace {

// Direct-loop convolution used as an oracle.
Tensor64 conv_oracle(const Tensor64& x, const Tensor64& w, const Tensor64& b, int stride, int pad) {
  const auto xs = x.shape();
  const auto ws = w.shape();
  const std::int64_t ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const std::int64_t wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  auto y = Tensor64::zeros({xs.n, ws.n, ho, wo});
  auto out = y.mutable_values();
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t o = 0; o < ws.n; ++o)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          double acc = b.defined() ? b.values()[static_cast<std::size_t>(o)] : 0.0;
          for (std::int64_t c = 0; c < xs.c; ++c)
            for (std::int64_t ki = 0; ki < ws.h; ++ki)
              for (std::int64_t kj = 0; kj < ws.w; ++kj) {
                const std::int64_t yi = i * stride - pad + ki;
                const std::int64_t xj = j * stride - pad + kj;
                if (yi < 0 || yi >= xs.h || xj < 0 || xj >= xs.w) continue;
                acc += x.at(n, c, yi, xj) * w.at(o, c, ki, kj);
              }
          out[static_cast<std::size_t>(((n * ws.n + o) * ho + i) * wo + j)] = acc;
        }
  return y;
}

// Scatter form of the transposed convolution.
Tensor64 conv_transpose_oracle(const Tensor64& x, const Tensor64& w, int stride, int pad, int out_pad) {
  const auto xs = x.shape();
  const auto ws = w.shape();
  const std::int64_t ho = (xs.h - 1) * stride - 2 * pad + ws.h + out_pad;
  const std::int64_t wo = (xs.w - 1) * stride - 2 * pad + ws.w + out_pad;
  auto y = Tensor64::zeros({xs.n, ws.c, ho, wo});
  auto out = y.mutable_values();
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t c = 0; c < xs.c; ++c)
      for (std::int64_t i = 0; i < xs.h; ++i)
        for (std::int64_t j = 0; j < xs.w; ++j)
          for (std::int64_t o = 0; o < ws.c; ++o)
            for (std::int64_t ki = 0; ki < ws.h; ++ki)
              for (std::int64_t kj = 0; kj < ws.w; ++kj) {
                const std::int64_t yi = i * stride - pad + ki;
                const std::int64_t yj = j * stride - pad + kj;
                if (yi < 0 || yi >= ho || yj < 0 || yj >= wo) continue;
                out[static_cast<std::size_t>(((n * ws.c + o) * ho + yi) * wo + yj)] +=
                    x.at(n, c, i, j) * w.at(c, o, ki, kj);
              }
  return y;
}

}  // namespace

TEST_SUITE("tensor-core") {
TEST_CASE("tensor construction validates shapes") {
  CHECK_THROWS_AS(Tensor::zeros({0, 1, 2, 2}), DimensionError);
  CHECK_THROWS_AS(Tensor::from({1, 1, 2, 2}, {1, 2, 3}), DimensionError);
  auto s = Tensor::scalar(3.5f);
  CHECK(s.item() == 3.5f);
  CHECK_THROWS_AS(Tensor::zeros({1, 1, 2, 2}).item(), ContractError);
}

TEST_CASE("conv2d hand examples") {
  auto ones = Tensor64::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(ones, Tensor64::full({1, 1, 3, 3}, 1.0), Tensor64{}, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.at(0, 0, 1, 1) == 9.0);

  auto eye = Tensor64::from({1, 1, 2, 2}, {1, 0, 0, 1});
  auto z = conv2d(eye, Tensor64::full({1, 1, 1, 1}, 2.0), Tensor64{}, 1, 0);
  CHECK(z.vector() == std::vector<double>{2, 0, 0, 2});
}

TEST_CASE("conv2d matches the direct-loop oracle") {
  std::mt19937_64 rng(1);
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, {2, 1, 3}, {1, 0, 1}, {2, 2, 5}, {1, 2, 5}}) {
    auto x = random_tensor<double>({2, 3, 8, 8}, rng);
    auto w = random_tensor<double>({4, 3, k, k}, rng);
    auto b = random_tensor<double>({1, 4, 1, 1}, rng);
    auto y = conv2d(x, w, b, stride, pad);
    auto ref = conv_oracle(x, w, b, stride, pad);
    REQUIRE(y.shape() == ref.shape());
    CHECK(test::max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("conv2d output shape and gradient") {
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>({2, 3, 8, 8}, rng);
  auto w = random_tensor<double>({4, 3, 3, 3}, rng, 0.3);
  auto b = random_tensor<double>({1, 4, 1, 1}, rng);
  auto r = random_tensor<double>({2, 4, 8, 8}, rng);
  CHECK(conv2d(x, w, b, 1, 1).shape() == Shape{2, 4, 8, 8});
  auto err = grad_check([&] { return sum(multiply(conv2d(x, w, b, 1, 1), r)); }, {x, w, b});
  CHECK(err.max_relative_error < 1e-4);
}

TEST_CASE("conv2d rejects mismatched channels") {
  auto x = Tensor::zeros({1, 3, 4, 4});
  auto w = Tensor::zeros({2, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor{}, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor{}, 0, 1), ParameterError);
}

TEST_CASE("conv2d_transpose single tap and shapes") {
  auto x = Tensor64::full({1, 1, 1, 1}, 1.0);
  auto y = conv2d_transpose(x, Tensor64::full({1, 1, 2, 2}, 1.0), Tensor64{}, 2, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.vector() == std::vector<double>{1, 1, 1, 1});

  auto big = Tensor::zeros({6, 8, 8, 8});
  auto wt = Tensor::zeros({8, 5, 5, 5});
  CHECK(conv2d_transpose(big, wt, Tensor{}, 2, 2, 1).shape() == Shape{6, 5, 16, 16});
  CHECK_THROWS_AS(conv2d_transpose(big, wt, Tensor{}, 2, 2, 2), ParameterError);
}

TEST_CASE("conv2d_transpose matches the scatter oracle and is the adjoint of conv2d") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  auto y = conv2d_transpose(x, w, Tensor64{}, 2, 1, 1);
  auto ref = conv_transpose_oracle(x, w, 2, 1, 1);
  REQUIRE(y.shape() == ref.shape());
  CHECK(test::max_abs_diff(y, ref) < 1e-12);

  // <conv_t(x), u> == <x, conv(u)> with the same weights.
  auto u = random_tensor<double>(y.shape(), rng);
  auto lhs = sum(multiply(y, u)).item();
  auto rhs = sum(multiply(x, conv2d(u, w, Tensor64{}, 2, 1))).item();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  auto small = random_tensor<double>({1, 2, 4, 4}, rng);
  auto ws = random_tensor<double>({2, 3, 3, 3}, rng);
  auto r = random_tensor<double>({1, 3, 8, 8}, rng);
  auto err = grad_check(
      [&] { return sum(multiply(conv2d_transpose(small, ws, Tensor64{}, 2, 1, 1), r)); },
      {small, ws});
  CHECK(err.max_relative_error < 1e-4);
}

TEST_CASE("maxpool2 values, indices and tie-break") {
  auto [v, idx] = maxpool2_indices(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(v.item() == 4.0f);
  CHECK(idx.offsets == std::vector<std::uint8_t>{3});

  auto [tv, tidx] = maxpool2_indices(Tensor::full({1, 1, 2, 2}, 5.0f));
  CHECK(tv.item() == 5.0f);
  CHECK(tidx.offsets == std::vector<std::uint8_t>{0});

  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
  auto [rv, ridx] = maxpool2_indices(Tensor::from({1, 1, 4, 4}, ramp));
  CHECK(rv.vector() == std::vector<float>{5, 7, 13, 15});
  CHECK(ridx.offsets == std::vector<std::uint8_t>{3, 3, 3, 3});

  CHECK_THROWS_AS(maxpool2_indices(Tensor::zeros({1, 1, 3, 4})), DimensionError);
}

TEST_CASE("maxunpool2 placement and errors") {
  PoolingIndices idx{{1, 1, 2, 2}, {3}};
  auto up = maxunpool2(Tensor::full({1, 1, 1, 1}, 4.0f), idx, {1, 1, 2, 2});
  CHECK(up.vector() == std::vector<float>{0, 0, 0, 4});

  PoolingIndices many{{1, 2, 4, 4}, std::vector<std::uint8_t>(8, 1)};
  auto zeros = maxunpool2(Tensor::zeros({1, 2, 2, 2}), many, {1, 2, 4, 4});
  for (float v : zeros.values()) CHECK(v == 0.0f);

  CHECK_THROWS_AS(maxunpool2(Tensor::zeros({1, 1, 1, 1}), idx, {1, 1, 4, 4}), DimensionError);
  CHECK_THROWS_AS(maxunpool2(Tensor::zeros({1, 2, 1, 1}), idx, {1, 1, 2, 2}), DimensionError);
}

TEST_CASE("pool/unpool round trip on positive tensors") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> pos(0.01f, 2.0f);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = Tensor::zeros({2, 3, 6, 8});
    for (auto& v : x.mutable_values()) v = pos(rng);
    auto [pooled, idx] = maxpool2_indices(x);
    auto up = maxunpool2(pooled, idx, x.shape());
    auto [again, idx2] = maxpool2_indices(up);
    REQUIRE(again.vector() == pooled.vector());
    REQUIRE(idx2 == idx);
  }
}

TEST_CASE("pool gradient routes only to the argmax") {
  auto x = Tensor64::from({1, 1, 2, 2}, {1, 7, 3, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto [v, idx] = maxpool2_indices(x);
    tape.backward(sum(v));
  }
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("batchnorm statistics") {
  auto constant = Tensor::full({4, 1, 2, 2}, 3.0f);
  auto beta = Tensor::full({1, 1, 1, 1}, 0.7f);
  auto out = batchnorm<float>(constant, Tensor::full({1, 1, 1, 1}, 1.0f), beta, nullptr, {});
  for (float v : out.values()) CHECK(v == doctest::Approx(0.7f));

  std::mt19937_64 rng(5);
  auto x = random_tensor<double>({64, 2, 8, 8}, rng);
  auto stats = RunningStats<double>::create(2);
  auto y = batchnorm(x, Tensor64::full({1, 2, 1, 1}, 1.0), Tensor64::zeros({1, 2, 1, 1}), &stats, {});
  for (int c = 0; c < 2; ++c) {
    double m = 0, s = 0;
    const std::int64_t count = 64 * 64;
    for (std::int64_t n = 0; n < 64; ++n)
      for (std::int64_t i = 0; i < 64; ++i) m += y.values()[static_cast<std::size_t>((n * 2 + c) * 64 + i)];
    m /= count;
    for (std::int64_t n = 0; n < 64; ++n)
      for (std::int64_t i = 0; i < 64; ++i) {
        const double d = y.values()[static_cast<std::size_t>((n * 2 + c) * 64 + i)] - m;
        s += d * d;
      }
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(s / count - 1.0) < 0.05);
  }
  // Running mean moved 10% of the way from 0 toward the batch mean.
  double batch_mean = 0;
  for (std::int64_t n = 0; n < 64; ++n)
    for (std::int64_t i = 0; i < 64; ++i) batch_mean += x.values()[static_cast<std::size_t>(n * 128 + i)];
  batch_mean /= 64 * 64;
  CHECK(stats.mean.values()[0] == doctest::Approx(0.1 * batch_mean).epsilon(1e-9));

  BatchNormOptions eval;
  eval.mode = Mode::kEval;
  auto fixed = RunningStats<double>::create(2);
  auto e = batchnorm(x, Tensor64::full({1, 2, 1, 1}, 1.0), Tensor64::zeros({1, 2, 1, 1}), &fixed, eval);
  CHECK(e.values()[0] == doctest::Approx(x.values()[0] / std::sqrt(1.0 + 1e-5)));
  CHECK_THROWS(batchnorm(x, Tensor64::full({1, 3, 1, 1}, 1.0), Tensor64::zeros({1, 2, 1, 1}), &fixed, eval));
}

TEST_CASE("batchnorm gradient") {
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>({4, 2, 3, 3}, rng);
  auto g = random_tensor<double>({1, 2, 1, 1}, rng);
  auto b = random_tensor<double>({1, 2, 1, 1}, rng);
  auto r = random_tensor<double>({4, 2, 3, 3}, rng);
  auto err = grad_check([&] { return sum(multiply(batchnorm<double>(x, g, b, nullptr, {}), r)); }, {x, g, b});
  CHECK(err.max_relative_error < 1e-3);
}

TEST_CASE("activations") {
  auto x = Tensor::from({1, 1, 1, 3}, {-1.0f, 0.0f, 2.0f});
  CHECK(relu(x).vector() == std::vector<float>{0, 0, 2});
  CHECK(leaky_relu(x, 0.2f).vector() == std::vector<float>{-0.2f, 0, 2});
  CHECK(tanh_act(x).values()[2] == doctest::Approx(std::tanh(2.0f)));

  std::mt19937_64 rng(7);
  auto mixed = random_tensor<double>({2, 2, 3, 3}, rng);
  for (auto& v : mixed.mutable_values()) v = std::copysign(0.05 + std::abs(v), v);
  auto r = random_tensor<double>({2, 2, 3, 3}, rng);
  CHECK(grad_check([&] { return sum(multiply(relu(mixed), r)); }, {mixed}).max_relative_error < 1e-6);
  CHECK(grad_check([&] { return sum(multiply(leaky_relu(mixed, 0.2), r)); }, {mixed}).max_relative_error < 1e-6);

  // Subgradient 0 at exactly 0.
  auto zero = Tensor64::zeros({1, 1, 1, 1}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(relu(zero)));
  }
  CHECK(zero.grad()[0] == 0.0);
}

TEST_CASE("gaussian noise") {
  std::mt19937_64 rng(8);
  auto x = random_tensor<float>({1, 1, 4, 4}, rng);
  auto same = add_gaussian_noise(x, 0.0, rng);
  CHECK(same.vector() == x.vector());
  CHECK_THROWS_AS(add_gaussian_noise(x, -0.1, rng), ParameterError);
  CHECK_THROWS_AS(add_gaussian_noise(x, std::nan(""), rng), ParameterError);

  auto big = Tensor64::zeros({1, 1, 1000, 1000});
  std::mt19937_64 r1(9), r2(9);
  auto a = add_gaussian_noise(big, 0.5, r1);
  auto b = add_gaussian_noise(big, 0.5, r2);
  CHECK(a.vector() == b.vector());
  double m = 0, s = 0;
  for (double v : a.values()) m += v;
  m /= 1e6;
  for (double v : a.values()) s += (v - m) * (v - m);
  const double sd = std::sqrt(s / 1e6);
  CHECK(sd >= 0.497);
  CHECK(sd <= 0.503);
}

TEST_CASE("tape accumulates gradients of reused inputs") {
  std::mt19937_64 rng(10);
  auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  auto w = random_tensor<double>({2, 2, 3, 3}, rng, 0.3);
  // w is applied twice; its gradient must be the sum over both uses.
  auto err = grad_check(
      [&] { return mean(multiply(conv2d(conv2d(x, w, Tensor64{}, 1, 1), w, Tensor64{}, 1, 1), x)); },
      {x, w});
  CHECK(err.max_relative_error < 1e-6);

  auto p = Tensor64::scalar(3.0, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(add(multiply(p, p), p));
  }
  CHECK(p.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("tape visits ops in reverse order") {
  auto x = Tensor64::full({1, 1, 2, 2}, 1.0, true);
  Tape<double> tape;
  std::vector<std::string> visits;
  tape.set_visit_hook([&](std::string_view op) { visits.emplace_back(op); });
  {
    TapeScope<double> scope(tape);
    auto y = scale(relu(x), 2.0);
    tape.backward(sum(y));
  }
  REQUIRE(visits.size() == 3);
  std::vector<std::string> recorded;
  for (const auto& e : tape.entries()) recorded.emplace_back(e.op);
  CHECK(std::vector<std::string>(recorded.rbegin(), recorded.rend()) == visits);
}

TEST_CASE("no tape, no recording") {
  auto x = Tensor::full({1, 1, 2, 2}, 1.0f, true);
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    NoGradScope<float> off;
    relu(x);
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("adam") {
  auto p = Tensor::scalar(1.0f, true);
  std::vector<Tensor> params{p};
  AdamState<float> state;
  AdamHyper h;
  adam_step<float>(params, state, h);
  CHECK(p.item() == 1.0f);  // no gradient yet

  p.mutable_grad()[0] = 1.0f;
  AdamState<float> fresh;
  adam_step<float>(params, fresh, h);
  CHECK(p.item() == doctest::Approx(1.0 - 2e-4).epsilon(1e-6));
  CHECK(fresh.step == 1);

  auto q = Tensor64::scalar(1.0, true);
  std::vector<Tensor64> qs{q};
  AdamState<double> qstate;
  AdamHyper fast;
  fast.lr = 0.1;
  for (int i = 0; i < 100; ++i) {
    q.zero_grad();
    q.mutable_grad()[0] = 2.0 * q.item();
    adam_step<double>(qs, qstate, fast);
  }
  CHECK(std::abs(q.item()) < 0.05);

  std::vector<Tensor64> other{Tensor64::zeros({1, 1, 2, 2}, true)};
  CHECK_THROWS_AS(adam_step<double>(other, qstate, fast), DimensionError);

  // Frozen parameters never move, even with live moments.
  q.set_requires_grad(false);
  const double before = q.item();
  adam_step<double>(qs, qstate, fast);
  CHECK(q.item() == before);
}

TEST_CASE("grad_check contract and exactness") {
  std::mt19937_64 rng(11);
  auto x = random_tensor<double>({1, 2, 3, 3}, rng);
  CHECK(grad_check([](const Tensor64& t) { return sum(t); }, x) < 1e-9);
  CHECK_THROWS_AS(grad_check([](const Tensor64& t) { return relu(t); }, x), ContractError);
}

TEST_CASE("checkpoint round trip and corruption") {
  test::TempDir dir;
  std::mt19937_64 rng(12);
  NamedTensors<float> tensors = {{"a", random_tensor<float>({2, 3, 1, 1}, rng)},
                                 {"b.weight", random_tensor<float>({4, 2, 3, 3}, rng)}};
  const auto path = dir.path() / "x.ckpt";
  save_tensors(path, tensors);
  NamedTensors<float> loaded = {{"a", Tensor::zeros({2, 3, 1, 1})}, {"b.weight", Tensor::zeros({4, 2, 3, 3})}};
  load_tensors(path, loaded);
  CHECK(loaded[0].second.vector() == tensors[0].second.vector());
  CHECK(loaded[1].second.vector() == tensors[1].second.vector());

  NamedTensors<float> wrong_shape = {{"a", Tensor::zeros({3, 2, 1, 1})}, {"b.weight", Tensor::zeros({4, 2, 3, 3})}};
  CHECK_THROWS_AS(load_tensors(path, wrong_shape), FormatError);
  NamedTensors<double> wrong_type = {{"a", Tensor64::zeros({2, 3, 1, 1})}, {"b.weight", Tensor64::zeros({4, 2, 3, 3})}};
  CHECK_THROWS_AS(load_tensors(path, wrong_type), FormatError);

  auto bytes = test::read_bytes(path);
  test::write_bytes(dir.path() / "trunc.ckpt", {bytes.begin(), bytes.end() - 5});
  CHECK_THROWS_AS(read_checkpoint(dir.path() / "trunc.ckpt"), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  test::write_bytes(dir.path() / "ver.ckpt", bad_version);
  CHECK_THROWS_AS(read_checkpoint(dir.path() / "ver.ckpt"), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  test::write_bytes(dir.path() / "magic.ckpt", bad_magic);
  CHECK_THROWS_AS(read_checkpoint(dir.path() / "magic.ckpt"), FormatError);

  // Documented layout: magic, version, count, then the first record's name.
  CHECK(std::string(bytes.begin(), bytes.begin() + 6) == "MMCKPT");
  CHECK(bytes[8] == 1);
  CHECK(bytes[12] == 2);
  CHECK(bytes[16] == 1);
  CHECK(bytes[20] == 'a');
  CHECK(bytes[21] == 1);  // float32 tag
}
}
