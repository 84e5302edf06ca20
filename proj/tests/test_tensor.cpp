#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "plroad/checkpoint.hpp"
#include "plroad/errors.hpp"
#include "plroad/gradcheck.hpp"
#include "plroad/nn_ops.hpp"
#include "plroad/rng.hpp"
#include "plroad/sgd.hpp"
#include "plroad/tensor.hpp"

using namespace plroad;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data_mut()) v = scale * rng.normal();
  return t;
}

// Direct convolution: one loop per index of the output and of the kernel.
std::vector<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, std::size_t stride,
                               std::size_t pad, std::size_t& ho, std::size_t& wo) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  ho = (H + 2 * pad - KH) / stride + 1;
  wo = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> out(N * O * ho * wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t a = 0; a < KH; ++a)
              for (std::size_t b = 0; b < KW; ++b) {
                const long y = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                out[((n * O + o) * ho + i) * wo + j] +=
                    x.data()[((n * C + c) * H + y) * W + xx] * w.data()[((o * C + c) * KH + a) * KW + b];
              }
  return out;
}

}  // namespace

TEST_CASE("conv2d of ones sums the window") {
  Tensor<double> x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(3);
  auto x = random_tensor({2, 1, 4, 5}, rng);
  Tensor<double> w({1, 1, 1, 1}, 1.0);
  auto y = conv2d(x, w);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d matches the direct convolution oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t stride = 1 + trial % 2, pad = trial % 3 == 0 ? 0 : 1;
    auto x = random_tensor({2, 3, 5, 7}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto y = conv2d(x, w, {{stride, stride}, {pad, pad}});
    std::size_t ho = 0, wo = 0;
    auto expect = naive_conv(x, w, stride, pad, ho, wo);
    REQUIRE(y.shape() == Shape{2, 4, ho, wo});
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::abs(y[i] - expect[i]) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Tensor<double> x({1, 2, 4, 4}), w({1, 3, 3, 3});
  try {
    conv2d(x, w);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x2x4x4]") != std::string::npos);
    CHECK(msg.find("[1x3x3x3]") != std::string::npos);
  }
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor<double>::scalar(-2.0)).item() == 0.0);
  CHECK(relu(Tensor<double>::scalar(3.0)).item() == 3.0);
  Tensor<double> a({2, 2}), b({3});
  CHECK_THROWS_AS(add(a, b), ConfigError);
  auto s = mul(a, Tensor<double>::scalar(2.0));
  CHECK(s.shape() == a.shape());
  auto e = elementwise(Elementwise::kSigmoid, Tensor<double>::scalar(0.0));
  CHECK(e.item() == 0.5);
}

TEST_CASE("add gradient is one everywhere by finite differences") {
  Rng rng(5);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  auto r = gradcheck([](const std::vector<Tensor<double>>& in) { return sum(add(in[0], in[1])); },
                     {a, b});
  CHECK(r.max_rel_error < 1e-8);
  a.zero_grad();
  backward(sum(add(a, b)));
  for (double g : a.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward basics") {
  auto x = Tensor<double>::scalar(3.0);
  x.set_requires_grad(true);
  backward(x);
  CHECK(x.grad()[0] == 1.0);

  Rng rng(8);
  auto v = random_tensor({5}, rng);
  v.set_requires_grad(true);
  backward(sum(mul(v, v)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(v.grad()[i] == doctest::Approx(2.0 * v[i]).epsilon(1e-15));

  Tensor<double> m({2, 2});
  m.set_requires_grad(true);
  CHECK_THROWS_AS(backward(m), ConfigError);
}

TEST_CASE("non-finite forward values fail fast") {
  CHECK_THROWS_AS(log(Tensor<double>::scalar(0.0)), NumericalError);
  CHECK_THROWS_AS(div(Tensor<double>::scalar(1.0), Tensor<double>::scalar(0.0)), NumericalError);
}

TEST_CASE("pool and resize") {
  Rng rng(2);
  auto x = random_tensor({1, 2, 4, 6}, rng);
  auto same = pool_and_resize(x, PoolResize::kBilinearResize, 4, 6);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

  auto g = pool_and_resize(x, PoolResize::kAvgPoolToBins, 1, 1);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0;
    for (std::size_t i = 0; i < 24; ++i) m += x[c * 24 + i];
    CHECK(g[c] == doctest::Approx(m / 24).epsilon(1e-14));
  }
  CHECK_THROWS_AS(avg_pool_to_bins(x, 5, 1), ConfigError);
}

TEST_CASE("bilinear 2x2 to 4x4 ramp matches direct sampling") {
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  auto y = bilinear_resize(x, 4, 4);
  // Half-pixel source coordinate per output index: -0.25 (clamped), 0.25, 0.75, 1.25.
  const double w1[4] = {0.0, 0.25, 0.75, 1.0};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(y[i * 4 + j] == doctest::Approx(2.0 * w1[i] + w1[j]).epsilon(1e-15));
  CHECK(y[1 * 4 + 2] == doctest::Approx(1.25));
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits give ln 2") {
    Tensor<double> z({1, 2, 3, 3}, 0.0), y({1, 3, 3}, 1.0);
    CHECK(softmax_cross_entropy(z, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("confident correct logits give ~0") {
    Tensor<double> z({1, 2, 1, 2}, std::vector<double>{50, -50, -50, 50});
    Tensor<double> y({1, 1, 2}, std::vector<double>{0, 1});
    CHECK(softmax_cross_entropy(z, y).item() < 1e-40);
  }
  SUBCASE("matches log-sum-exp oracle") {
    Rng rng(17);
    auto z = random_tensor({1, 2, 4, 4}, rng, 3.0);
    Tensor<double> y({1, 4, 4});
    for (auto& v : y.data_mut()) v = static_cast<double>(rng.below(2));
    double expect = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      const double a = z[i], b = z[16 + i];
      const double lse = std::log(std::exp(a) + std::exp(b));
      expect += lse - (y[i] == 1.0 ? b : a);
    }
    expect /= 16;
    CHECK(std::abs(softmax_cross_entropy(z, y).item() - expect) < 1e-10);
    const auto p = channel_softmax(z);
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(p[i] + p[16 + i] - 1.0) <= 1e-12);
  }
  SUBCASE("mask excludes pixels and an empty set is rejected") {
    Tensor<double> z({1, 2, 1, 2}, std::vector<double>{0, 0, 0, 0});
    Tensor<double> y({1, 1, 2}, std::vector<double>{0, 1});
    Tensor<double> none({1, 1, 2}, 0.0);
    CHECK_THROWS_AS(softmax_cross_entropy(z, y, &none), ConfigError);
    Tensor<double> bad({1, 1, 2}, std::vector<double>{0, 2});
    CHECK_THROWS_AS(softmax_cross_entropy(z, bad), ConfigError);
  }
}

TEST_CASE("sgd updates") {
  SUBCASE("plain step") {
    auto p = Tensor<double>::scalar(0.0);
    p.set_requires_grad(true);
    Sgd<double> opt({p}, {0.1, 0.0, 4, 0.0, 1});
    backward(p);
    opt.step();
    CHECK(p.item() == doctest::Approx(-0.1));
  }
  SUBCASE("momentum recurrence") {
    auto p = Tensor<double>::scalar(0.0);
    p.set_requires_grad(true);
    Sgd<double> opt({p}, {0.1, 0.9, 4, 0.0, 1});
    backward(p);
    opt.step();
    const double after_first = p.item();
    opt.zero_grad();
    backward(p);
    opt.step();
    CHECK(p.item() - after_first == doctest::Approx(-0.19).epsilon(1e-12));
  }
  SUBCASE("quadratic bowl converges") {
    auto p = Tensor<double>(Shape{3}, std::vector<double>{2.0, -1.5, 0.7});
    p.set_requires_grad(true);
    Sgd<double> opt({p}, {0.1, 0.9, 4, 0.0, 1});
    int steps = 0;
    double worst = 1;
    for (; steps < 200; ++steps) {
      opt.zero_grad();
      backward(sum(square(p)));
      opt.step();
      worst = 0;
      for (double v : p.data()) worst = std::max(worst, std::abs(v));
      if (worst < 1e-3) break;
    }
    CHECK(worst < 1e-3);
    CHECK(steps < 200);
  }
  SUBCASE("nan gradient aborts before the update") {
    Tensor<double> p({1}, 1.0);
    p.set_requires_grad(true);
    Sgd<double> opt({p}, {0.1, 0.9, 4, 0.0, 1});
    backward(p);
    const_cast<double&>(p.grad()[0]) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(), NumericalError);
    CHECK(p.item() == 1.0);
  }
  SUBCASE("config validation") {
    CHECK_THROWS_AS((SgdConfig{0.0, 0.9, 4, 0.0, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((SgdConfig{0.1, 1.0, 4, 0.0, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((SgdConfig{0.1, 0.9, 4, -1.0, 1}.validate()), ConfigError);
  }
  SUBCASE("clipping rescales to the global norm") {
    auto a = Tensor<double>::scalar(0.0), b = Tensor<double>::scalar(0.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Sgd<double> opt({a, b}, {1.0, 0.0, 4, 1.0, 1});
    backward(mul_scalar(a, 3.0) + mul_scalar(b, 4.0));  // norm 5
    opt.step();
    CHECK(a.item() == doctest::Approx(-0.6).epsilon(1e-12));
    CHECK(b.item() == doctest::Approx(-0.8).epsilon(1e-12));
    opt.zero_grad();
    backward(mul_scalar(a, 0.3));  // below the limit: untouched
    opt.step();
    CHECK(a.item() == doctest::Approx(-0.9).epsilon(1e-12));
  }
}

TEST_CASE("training determinism for a fixed seed") {
  auto run = [] {
    Rng rng(99);
    auto w = random_tensor({4, 2, 3, 3}, rng, 0.3);
    w.set_requires_grad(true);
    auto x = random_tensor({2, 2, 6, 6}, rng);
    Tensor<double> y({2, 4, 4});
    for (auto& v : y.data_mut()) v = static_cast<double>(rng.below(2));
    Sgd<double> opt({w}, {0.05, 0.9, 2, 0.0, 1});
    for (int s = 0; s < 10; ++s) {
      opt.zero_grad();
      backward(softmax_cross_entropy(slice_channels(conv2d(x, w), 1, 2), y));
      opt.step();
    }
    return std::vector<double>(w.data().begin(), w.data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint encoding") {
  std::vector<CheckpointRecord> recs{{"a.w", {2, 3}, {1, 2, 3, 4, 5, 6.5f}}, {"b", {1}, {-0.0f}}};
  const auto bytes = encode_checkpoint(recs);
  CHECK(bytes[0] == 'P');
  CHECK(bytes[3] == 'D');
  const auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "a.w");
  CHECK(back[0].dims == std::vector<std::uint32_t>{2, 3});
  CHECK(back[0].values == recs[0].values);
  CHECK(encode_checkpoint(back) == bytes);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 2);
  CHECK_THROWS_AS(decode_checkpoint(truncated), IoError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), IoError);

  const auto path = std::filesystem::temp_directory_path() / "plroad_ckpt_test.plrd";
  save_checkpoint(path, recs);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("gradcheck skips stencils that straddle a relu kink") {
  const Tensor<double> x(Shape{3}, std::vector<double>{0.5, 3e-6, -0.7});
  auto loss = [](const std::vector<Tensor<double>>& in) { return sum(relu(in[0])); };
  GradcheckOptions opt;
  const auto r = gradcheck(loss, {x}, opt);
  CHECK(r.skipped == 1);
  CHECK(r.entries == 2);
  CHECK(r.max_rel_error < 1e-8);
  opt.skip_kinks = false;
  CHECK(gradcheck(loss, {x}, opt).max_rel_error > 0.1);
  BranchProbe outer;
  {
    BranchProbe a;
    relu(x);
    BranchProbe b;
    relu(x);
    CHECK(a.value() != BranchProbe().value());
  }
  CHECK(outer.value() == BranchProbe().value());
}

TEST_CASE("gradient suite passes") {
  const auto cases = run_gradcheck_suite(2, 3);
  CHECK(cases.size() >= 30);
  for (const auto& c : cases) {
    CHECK_MESSAGE(c.result.max_rel_error < 1e-4, c.name << ": " << c.result.worst);
    CHECK(c.instances == 2);
  }
}
