#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <numeric>

#include "convnorm/gradcheck.hpp"
#include "convnorm/ops.hpp"
#include "convnorm/rng.hpp"
#include "oracles.hpp"

using namespace convnorm;
using oracle::random_tensor;

TEST_CASE("shape extents and numel") {
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  CHECK(t.numel() == 120);
  CHECK(t.values().size() == 120);
  CHECK(t.at(1, 2, 3, 4) == 1.5f);
  CHECK(Shape{2, 3, 4, 5}.index(1, 2, 3, 4) == 119);
  CHECK_THROWS_AS(Tensor<float>(Shape{0, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)),
                  std::invalid_argument);
}

TEST_CASE("rng streams are reproducible and forks differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  CHECK(c.fork(1).next_u64() != c.fork(2).next_u64());
  CHECK(c.fork(1).next_u64() == Rng(42).fork(1).next_u64());
  Rng d(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = d.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(d.below(10) < 10);
  }
}

TEST_CASE("backward of sum gives ones") {
  Rng rng(1);
  auto x = random_tensor<double>({2, 3, 2, 2}, rng, -1, 1, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor<double> x(Shape{1, 2, 1, 1}, 1.0, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), std::invalid_argument);
}

TEST_CASE("disjoint subgraph gradients stay zero") {
  Rng rng(2);
  auto a = random_tensor<double>({1, 2, 2, 2}, rng, -1, 1, true);
  auto b = random_tensor<double>({1, 2, 2, 2}, rng, -1, 1, true);
  const auto unused = square(b);
  backward(sum(square(a)));
  for (double g : b.grad()) CHECK(g == 0.0);
  (void)unused;
}

TEST_CASE("shared parent accumulates from both uses") {
  Tensor<double> x(Shape{1, 1, 1, 1}, 3.0, true);
  // x * x + x -> 2x + 1 = 7
  backward(sum(add(mul(x, x), x)));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("repeated backward resets interior nodes and accumulates leaves") {
  Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{1.0, 2.0}, true);
  const auto loss = sum(square(x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("tape order puts parents before children") {
  Rng rng(3);
  auto x = random_tensor<double>({1, 2, 3, 3}, rng, -1, 1, true);
  auto w = random_tensor<double>({2, 2, 1, 1}, rng, -1, 1, true);
  const auto y = sum(relu(add(conv2d(x, w, Tensor<double>{}), x)));
  Tape<double> tape(y);
  const auto& order = tape.order();
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (const auto& p : order[i]->parents) {
      if (!p->requires_grad) continue;
      const auto pos = std::find(order.begin(), order.end(), p.get()) - order.begin();
      CHECK(static_cast<std::size_t>(pos) < i);
    }
  }
  // Each node exactly once.
  std::vector<const void*> seen(order.begin(), order.end());
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("no-grad guard records nothing") {
  Tensor<double> x(Shape{1, 1, 2, 2}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(square(x).requires_grad());
  }
  CHECK(square(x).requires_grad());
}

TEST_CASE("broadcasting binary ops") {
  Tensor<float> a(Shape{2, 2, 1, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Tensor<float> b(Shape{1, 2, 1, 1}, std::vector<float>{10, 100});
  const auto s = add(a, b);
  CHECK(s.shape() == Shape{2, 2, 1, 3});
  CHECK(s.at(0, 0, 0, 0) == 11.0f);
  CHECK(s.at(1, 1, 0, 2) == 112.0f);
  CHECK(div(a, b).at(0, 1, 0, 0) == doctest::Approx(0.04f));
  CHECK_THROWS_AS(add(a, Tensor<float>(Shape{1, 3, 1, 1})), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one, including large logits") {
  Rng rng(4);
  for (double shift : {0.0, 1000.0, -1000.0}) {
    auto logits = random_tensor<double>({5, 10, 1, 1}, rng, -5, 5);
    for (auto& v : logits.mutable_values()) v += shift;
    const auto p = softmax(logits);
    for (std::size_t n = 0; n < 5; ++n) {
      double s = 0.0;
      for (std::size_t c = 0; c < 10; ++c) {
        CHECK(std::isfinite(p.at(n, c, 0, 0)));
        s += p.at(n, c, 0, 0);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  const auto uniform = softmax(Tensor<float>(Shape{1, 10, 1, 1}, 0.0f));
  for (float v : uniform.values()) CHECK(v == doctest::Approx(0.1f));
  // float logits shifted by +1000 as well
  Tensor<float> big(Shape{1, 10, 1, 1}, 1000.0f);
  big.mutable_values()[3] = 1001.0f;
  const auto pb = softmax(big);
  double s = 0.0;
  for (float v : pb.values()) s += v;
  CHECK(std::abs(s - 1.0) < 1e-6);
}

TEST_CASE("cross entropy values") {
  Tensor<double> onehot(Shape{2, 10, 1, 1}, 0.0);
  onehot.mutable_values()[3] = 1.0;
  onehot.mutable_values()[10 + 7] = 1.0;
  CHECK(cross_entropy(Tensor<double>(Shape{2, 10, 1, 1}, 0.1), onehot).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(cross_entropy(onehot, onehot).item() == doctest::Approx(0.0));
  // Zero probability on the true class is floored, not infinite.
  Tensor<double> wrong(Shape{2, 10, 1, 1}, 0.0);
  wrong.mutable_values()[0] = 1.0;
  wrong.mutable_values()[10] = 1.0;
  CHECK(cross_entropy(wrong, onehot).item() == doctest::Approx(-std::log(kLogFloor)));
  Tensor<double> bad(Shape{2, 10, 1, 1}, 0.0);
  bad.mutable_values()[0] = 1.0;
  CHECK_THROWS_AS(cross_entropy(onehot, bad), std::invalid_argument);
}

TEST_CASE("pooling") {
  Tensor<float> x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(global_avg_pool(x).item() == doctest::Approx(2.5f));
  Tensor<float> c(Shape{2, 3, 4, 5}, 1.75f);
  const auto out0 = global_avg_pool(c);
  for (float v : out0.values()) CHECK(v == 1.75f);
  const auto ap = avg_pool(Tensor<float>(Shape{1, 1, 4, 4}, std::vector<float>{
                                                 1, 2, 3, 4, 5, 6, 7, 8,
                                                 9, 10, 11, 12, 13, 14, 15, 16}),
                           2, 2, 2, 2);
  CHECK(ap.shape() == Shape{1, 1, 2, 2});
  CHECK(ap.at(0, 0, 0, 0) == doctest::Approx(3.5f));
  CHECK(ap.at(0, 0, 1, 1) == doctest::Approx(13.5f));
  CHECK_THROWS_AS(avg_pool(x, 3, 1, 1, 1), std::invalid_argument);
}

TEST_CASE("avg_pool gradient scatters one over the window size") {
  Tensor<double> x(Shape{1, 1, 4, 4}, 0.0, true);
  backward(sum(avg_pool(x, 2, 2, 2, 2)));
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("zero_pad and reshape") {
  Tensor<float> x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const auto p = zero_pad(x, Padding{1, 0, 0, 2});
  CHECK(p.shape() == Shape{1, 1, 3, 4});
  CHECK(p.at(0, 0, 0, 0) == 0.0f);
  CHECK(p.at(0, 0, 1, 0) == 1.0f);
  CHECK(p.at(0, 0, 2, 1) == 4.0f);
  CHECK(p.at(0, 0, 2, 3) == 0.0f);
  CHECK(reshape(x, Shape{1, 4, 1, 1}).at(0, 3, 0, 0) == 4.0f);
  CHECK_THROWS_AS(reshape(x, Shape{1, 3, 1, 1}), std::invalid_argument);
}

TEST_CASE("mean over selected axes") {
  Tensor<double> x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 6});
  const auto m = mean(x, kAxisBatch);
  CHECK(m.shape() == Shape{1, 1, 1, 2});
  CHECK(m.at(0, 0, 0, 0) == 2.0);
  CHECK(m.at(0, 0, 0, 1) == 4.0);
  CHECK(mean(x, kAxisBatch | kAxisWidth).item() == 3.0);
}

TEST_CASE("grad_check simple cases") {
  const auto r = grad_check<double>([](const Tensor<double>& x) { return sum(square(x)); },
                                    Tensor<double>(Shape{1, 1, 1, 3}, 1.0, true));
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.elements == 3);

  Rng rng(5);
  Tensor<double> x(Shape{2, 2, 3, 3}, 0.0, true);
  for (auto& v : x.mutable_values()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  const auto w = random_tensor<double>({2, 2, 3, 3}, rng);
  const auto rr = grad_check<double>(
      [&](const Tensor<double>& t) { return sum(mul(relu(t), w)); }, x);
  CHECK(rr.max_rel_error < 1e-6);
}

TEST_CASE("grad_check reports the non-finite element") {
  Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{1.0, -1.0, 2.0}, true);
  try {
    grad_check<double>([](const Tensor<double>& t) { return sum(rsqrt(t)); }, x);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.index() == 1);
  }
}

TEST_CASE("forward values are deterministic for a seed") {
  auto make = [] {
    Rng rng(99);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng);
    auto w = random_tensor<float>({4, 3, 3, 3}, rng);
    return softmax(global_avg_pool(relu(conv2d(x, w, Tensor<float>{}, {1, 1, 1, 1}))));
  };
  const auto a = make(), b = make();
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}
