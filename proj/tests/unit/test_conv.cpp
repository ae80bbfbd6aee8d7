#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "convnorm/ops.hpp"
#include "oracles.hpp"

using namespace convnorm;
using oracle::random_tensor;

namespace {

std::vector<double> to_double(const Tensor<double>& t) {
  return {t.values().begin(), t.values().end()};
}

double max_rel(const std::vector<double>& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max(std::abs(want[i]), 1.0);
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("edge filter on a constant image is zero") {
  Tensor<float> x(Shape{1, 1, 5, 5}, 0.7f);
  Tensor<float> k(Shape{1, 1, 3, 3}, std::vector<float>{-1, -1, -1, -1, 8, -1, -1, -1, -1});
  const auto y = conv2d(x, k, Tensor<float>{});
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.values()) CHECK(std::abs(v) < 1e-6f);
}

TEST_CASE("unit 1x1 kernel is the identity") {
  Rng rng(1);
  const auto x = random_tensor<float>({2, 1, 4, 3}, rng);
  const auto y = conv2d(x, Tensor<float>(Shape{1, 1, 1, 1}, 1.0f), Tensor<float>(Shape{1, 1, 1, 1}, 0.0f));
  CHECK(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST_CASE("conv2d matches the six-loop oracle on 3x8x8 with a 4x3x3x3 kernel") {
  Rng rng(2);
  const oracle::ConvCase k{1, 3, 8, 8, 4, 3, 3, 1, 1, 0, 0};
  const auto x = random_tensor<double>({1, 3, 8, 8}, rng);
  const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
  const auto y = conv2d(x, w, Tensor<double>{});
  CHECK(max_rel(to_double(y), oracle::conv2d(k, to_double(x), to_double(w), {})) < 1e-6);
}

TEST_CASE("conv2d matches the oracle on 50 random configurations") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    oracle::ConvCase k{};
    k.n = 1 + rng.below(3);
    k.c_in = 1 + rng.below(4);
    k.c_out = 1 + rng.below(4);
    k.k_h = 1 + rng.below(4);
    k.k_w = 1 + rng.below(4);
    k.p_h = rng.below(3);
    k.p_w = rng.below(3);
    k.s_h = 1 + rng.below(3);
    k.s_w = 1 + rng.below(3);
    k.h = std::max<std::size_t>(k.k_h, 1 + rng.below(16));
    k.w = std::max<std::size_t>(k.k_w, 1 + rng.below(16));
    CAPTURE(trial);
    const auto x = random_tensor<double>({k.n, k.c_in, k.h, k.w}, rng);
    const auto w = random_tensor<double>({k.c_out, k.c_in, k.k_h, k.k_w}, rng);
    const auto b = random_tensor<double>({1, k.c_out, 1, 1}, rng);
    const auto y = conv2d(x, w, b, {k.s_h, k.s_w, k.p_h, k.p_w});
    REQUIRE(y.shape() == Shape{k.n, k.c_out, k.out_h(), k.out_w()});
    CHECK(max_rel(to_double(y), oracle::conv2d(k, to_double(x), to_double(w), to_double(b))) <
          1e-6);

    // float kernels against the same oracle at float tolerance
    Tensor<float> xf(x.shape()), wf(w.shape()), bf(b.shape());
    std::copy(x.values().begin(), x.values().end(), xf.mutable_values().begin());
    std::copy(w.values().begin(), w.values().end(), wf.mutable_values().begin());
    std::copy(b.values().begin(), b.values().end(), bf.mutable_values().begin());
    const auto yf = conv2d(xf, wf, bf, {k.s_h, k.s_w, k.p_h, k.p_w});
    const auto want = oracle::conv2d(k, to_double(x), to_double(w), to_double(b));
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(std::abs(yf.values()[i] - want[i]) <= 1e-5 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST_CASE("conv2d shape errors name both shapes") {
  Tensor<float> x(Shape{1, 3, 8, 8});
  Tensor<float> w(Shape{4, 2, 3, 3});
  try {
    conv2d(x, w, Tensor<float>{});
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find(x.shape().str()) != std::string::npos);
    CHECK(msg.find(w.shape().str()) != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(Tensor<float>(Shape{1, 1, 2, 2}), Tensor<float>(Shape{1, 1, 3, 3}),
                         Tensor<float>{}),
                  std::invalid_argument);
}

TEST_CASE("depthwise 2x2 stride 2 reproduces the A entries") {
  std::vector<double> xs(16);
  for (std::size_t i = 0; i < 16; ++i) xs[i] = static_cast<double>(i + 1);
  const Tensor<double> x(Shape{1, 1, 4, 4}, xs);
  const Tensor<double> p(Shape{1, 1, 2, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const auto a = depthwise_conv2d(x, p, 2, 2);
  REQUIRE(a.shape() == Shape{1, 1, 2, 2});
  auto entry = [&](std::size_t r, std::size_t c) {
    return 0.1 * x.at(0, 0, r, c) + 0.2 * x.at(0, 0, r, c + 1) + 0.3 * x.at(0, 0, r + 1, c) +
           0.4 * x.at(0, 0, r + 1, c + 1);
  };
  CHECK(a.at(0, 0, 0, 0) == doctest::Approx(entry(0, 0)));
  CHECK(a.at(0, 0, 0, 1) == doctest::Approx(entry(0, 2)));
  CHECK(a.at(0, 0, 1, 0) == doctest::Approx(entry(2, 0)));
  CHECK(a.at(0, 0, 1, 1) == doctest::Approx(entry(2, 2)));
}

TEST_CASE("depthwise ones kernel is the identity and channels do not mix") {
  Rng rng(4);
  auto x = random_tensor<float>({2, 2, 3, 3}, rng);
  const auto id = depthwise_conv2d(x, Tensor<float>(Shape{2, 1, 1, 1}, 1.0f), 1, 1);
  CHECK(std::equal(x.values().begin(), x.values().end(), id.values().begin()));

  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i) x.mutable_values()[(n * 2 + 0) * 9 + i] = 0.0f;
  const auto k = random_tensor<float>({2, 1, 2, 2}, rng, 1.0, 2.0);
  const auto y = depthwise_conv2d(x, k, 1, 1);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) CHECK(y.at(n, 0, h, w) == 0.0f);

  CHECK_THROWS_AS(depthwise_conv2d(x, Tensor<float>(Shape{3, 1, 1, 1}, 1.0f), 1, 1),
                  std::invalid_argument);
}
