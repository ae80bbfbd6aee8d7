#include "convnorm/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "convnorm/batch_norm.hpp"
#include "convnorm/dwck.hpp"
#include "convnorm/gradcheck.hpp"
#include "convnorm/learned_stats.hpp"
#include "convnorm/ops.hpp"
#include "convnorm/rng.hpp"

namespace convnorm {

namespace {

using D = double;
using TensorD = Tensor<D>;

TensorD random_tensor(Shape s, Rng& rng, double lo, double hi, bool requires_grad) {
  TensorD t(s, D(0), requires_grad);
  for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

// Uniform in [lo, hi] but at least `margin` away from zero.
TensorD away_from_zero(Shape s, Rng& rng, double margin) {
  TensorD t(s, D(0), true);
  for (auto& v : t.mutable_values()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

class Suite {
 public:
  void check(const std::string& name, std::vector<TensorD> inputs,
             const std::function<TensorD()>& loss) {
    GradCheckEntry& e = entry(name);
    e.tensors = std::max(e.tensors, inputs.size());
    for (auto& x : inputs) {
      const auto r = grad_check<D>([&](const TensorD&) { return loss(); }, x, 1e-3);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
    }
  }
  void finish_seed() {
    for (auto& e : entries_) ++e.seeds;
  }
  std::vector<GradCheckEntry> take() { return std::move(entries_); }

 private:
  GradCheckEntry& entry(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return e;
    }
    entries_.push_back({name, 0.0, 0, 0});
    return entries_.back();
  }
  std::vector<GradCheckEntry> entries_;
};

// sum(R * y) with R fixed per call site.
struct Projector {
  TensorD weights;
  TensorD operator()(const TensorD& y) const { return sum(mul(y, weights)); }
};

Projector projector(Shape s, Rng& rng) {
  return {random_tensor(s, rng, -1.0, 1.0, false)};
}

void run_seed(Suite& suite, Rng& rng) {
  // --- tensor-core ops ---
  {
    TensorD x = random_tensor({2, 2, 6, 5}, rng, -1, 1, true);
    TensorD k = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    TensorD b = random_tensor({1, 3, 1, 1}, rng, -1, 1, true);
    const Conv2dOptions opt{2, 1, 1, 1};
    const Shape out{2, 3, (6 + 2 - 3) / 2 + 1, (5 + 2 - 3) / 1 + 1};
    const Projector p = projector(out, rng);
    suite.check("conv2d", {x, k, b}, [&] { return p(conv2d(x, k, b, opt)); });
  }
  {
    TensorD x = random_tensor({2, 4, 3, 3}, rng, -1, 1, true);
    TensorD k = random_tensor({5, 4, 1, 1}, rng, -1, 1, true);
    TensorD b = random_tensor({1, 5, 1, 1}, rng, -1, 1, true);
    const Projector p = projector({2, 5, 3, 3}, rng);
    suite.check("conv2d_pointwise", {x, k, b}, [&] { return p(conv2d(x, k, b)); });
  }
  {
    TensorD x = random_tensor({2, 3, 6, 6}, rng, -1, 1, true);
    TensorD k = random_tensor({3, 1, 2, 3}, rng, -1, 1, true);
    const Projector p = projector({2, 3, 3, 2}, rng);
    suite.check("depthwise_conv2d", {x, k}, [&] { return p(depthwise_conv2d(x, k, 2, 2)); });
  }
  {
    TensorD x = random_tensor({2, 2, 3, 4}, rng, -1, 1, true);
    const Projector p = projector({2, 2, 6, 5}, rng);
    suite.check("zero_pad", {x}, [&] { return p(zero_pad(x, Padding{1, 2, 0, 1})); });
  }
  {
    TensorD x = away_from_zero({2, 3, 4, 4}, rng, 0.05);
    const Projector p = projector({2, 3, 4, 4}, rng);
    suite.check("relu", {x}, [&] { return p(relu(x)); });
  }
  {
    TensorD x = random_tensor({2, 3, 3, 3}, rng, -3, 3, true);
    const Projector p = projector({2, 3, 3, 3}, rng);
    suite.check("softplus", {x}, [&] { return p(softplus(x)); });
    suite.check("square", {x}, [&] { return p(square(x)); });
    suite.check("scale_add_scalar", {x}, [&] { return p(add_scalar(scale(x, D(1.7)), D(0.3))); });
  }
  {
    TensorD x = random_tensor({2, 3, 3, 3}, rng, 0.5, 2.0, true);
    const Projector p = projector({2, 3, 3, 3}, rng);
    suite.check("rsqrt", {x}, [&] { return p(rsqrt(x)); });
  }
  {
    TensorD a = random_tensor({2, 3, 4, 4}, rng, -1, 1, true);
    TensorD b = random_tensor({1, 3, 1, 4}, rng, 0.5, 1.5, true);
    const Projector p = projector({2, 3, 4, 4}, rng);
    suite.check("add_broadcast", {a, b}, [&] { return p(add(a, b)); });
    suite.check("sub_broadcast", {a, b}, [&] { return p(sub(a, b)); });
    suite.check("mul_broadcast", {a, b}, [&] { return p(mul(a, b)); });
    suite.check("div_broadcast", {a, b}, [&] { return p(div(a, b)); });
  }
  {
    TensorD x = random_tensor({3, 2, 4, 5}, rng, -1, 1, true);
    const Projector pm = projector({1, 2, 1, 5}, rng);
    const Projector pg = projector({3, 2, 1, 1}, rng);
    suite.check("mean", {x}, [&] { return pm(mean(x, kAxisBatch | kAxisHeight)); });
    suite.check("sum", {x}, [&] { return sum(x); });
    suite.check("global_avg_pool", {x}, [&] { return pg(global_avg_pool(x)); });
    const Projector pr = projector({3, 1, 8, 5}, rng);
    suite.check("reshape", {x}, [&] { return pr(reshape(x, Shape{3, 1, 8, 5})); });
  }
  {
    TensorD x = random_tensor({2, 2, 5, 6}, rng, -1, 1, true);
    const Projector p = projector({2, 2, 2, 3}, rng);
    suite.check("avg_pool", {x}, [&] { return p(avg_pool(x, 2, 2, 2, 2)); });
    const Projector q = projector({2, 2, 4, 4}, rng);
    suite.check("avg_pool_overlapping", {x}, [&] { return q(avg_pool(x, 2, 3, 1, 1)); });
  }
  {
    TensorD x = random_tensor({3, 2, 3, 4}, rng, -1, 2, true);
    TensorD mu = random_tensor({1, 2, 1, 1}, rng, -0.5, 0.5, true);
    TensorD mu_n = random_tensor({3, 2, 1, 1}, rng, -0.5, 0.5, true);
    TensorD inv = random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5, true);
    TensorD inv_n = random_tensor({3, 2, 1, 1}, rng, 0.5, 1.5, true);
    TensorD g = random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5, true);
    TensorD b = random_tensor({1, 2, 1, 1}, rng, -0.5, 0.5, true);
    const Projector pc = projector({1, 2, 1, 1}, rng);
    const Projector px = projector({3, 2, 3, 4}, rng);
    suite.check("channel_central_moment", {x, mu},
                [&] { return pc(channel_central_moment(x, mu)); });
    suite.check("normalize_channels", {x, mu, inv, g, b},
                [&] { return px(normalize_channels(x, mu, inv, g, b)); });
    suite.check("normalize_channels_per_image", {x, mu_n, inv_n},
                [&] { return px(normalize_channels(x, mu_n, inv_n, TensorD{}, TensorD{})); });
  }
  {
    TensorD logits = random_tensor({4, 10, 1, 1}, rng, -2, 2, true);
    std::vector<D> hot(40, 0.0);
    for (std::size_t n = 0; n < 4; ++n) hot[n * 10 + rng.below(10)] = 1.0;
    const TensorD onehot({4, 10, 1, 1}, hot);
    const Projector p = projector({4, 10, 1, 1}, rng);
    suite.check("softmax", {logits}, [&] { return p(softmax(logits)); });
    suite.check("softmax_cross_entropy", {logits},
                [&] { return cross_entropy(softmax(logits), onehot); });
  }
  {
    TensorD x = random_tensor({2, 2, 6, 6}, rng, -1, 1, true);
    TensorD k = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    TensorD b = random_tensor({1, 3, 1, 1}, rng, -0.2, 0.2, true);
    const Projector p = projector({2, 3, 1, 1}, rng);
    // Central differences straddling a ReLU kink are meaningless; this draw
    // keeps every pre-activation at least 2 * eps away from zero.
    auto pre = [&] { return conv2d(x, k, b, {1, 1, 1, 1}); };
    std::size_t guard = 0;
    for (;;) {
      NoGradGuard ng;
      const auto v = pre().values();
      if (std::all_of(v.begin(), v.end(), [](D e) { return std::abs(e) > 2e-2; })) break;
      for (auto& e : b.mutable_values()) e = rng.uniform(-0.2, 0.2);
      for (auto& e : x.mutable_values()) e = rng.uniform(-1, 1);
      if (++guard > 1000) break;
    }
    suite.check("conv2d_relu_gap_composite", {x, k, b},
                [&] { return p(global_avg_pool(relu(pre()))); });
  }

  // --- normalization layers ---
  {
    BatchNormState<D> s = BatchNormState<D>::create(3);
    for (auto& v : s.gamma.mutable_values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : s.beta.mutable_values()) v = rng.uniform(-0.5, 0.5);
    TensorD x = random_tensor({3, 3, 4, 4}, rng, -1, 2, true);
    const Projector p = projector({3, 3, 4, 4}, rng);
    suite.check("batch_norm_train", {x, s.gamma, s.beta},
                [&] { return p(batch_norm_forward(x, s, true)); });
    for (std::size_t c = 0; c < 3; ++c) {
      s.running_mean[c] = rng.uniform(-0.5, 0.5);
      s.running_var[c] = rng.uniform(0.5, 2.0);
    }
    suite.check("batch_norm_eval", {x, s.gamma, s.beta},
                [&] { return p(batch_norm_forward(x, s, false)); });
  }
  for (bool weighted : {false, true}) {
    DwckOptions opt;
    opt.jitter = 0.3;
    opt.weighted_var = weighted;
    // 7x6 pads to 8x6 and exercises asymmetric padding and mixed stages.
    DwckNormState<D> s = DwckNormState<D>::create(2, 7, 6, rng, opt);
    for (auto& v : s.gamma.mutable_values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : s.beta.mutable_values()) v = rng.uniform(-0.5, 0.5);
    TensorD x = random_tensor({2, 2, 7, 6}, rng, -1, 2, true);
    const Projector p = projector({2, 2, 7, 6}, rng);
    std::vector<TensorD> inputs{x, s.gamma, s.beta};
    inputs.insert(inputs.end(), s.stage_weights.begin(), s.stage_weights.end());
    suite.check(weighted ? "dwck_norm_weighted_var" : "dwck_norm", inputs,
                [&] { return p(dwck_norm_forward(x, s, true)); });
  }
  {
    LearnedStatsState<D> s = build_stat_nets<D>(2, 5, rng);
    for (auto& v : s.gamma.mutable_values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : s.beta.mutable_values()) v = rng.uniform(-0.5, 0.5);
    for (auto* net : {&s.mean_net, &s.std_net}) {
      for (auto& st : net->stages) {
        for (auto& v : st.bias.mutable_values()) v = rng.uniform(-0.3, 0.3);
      }
    }
    TensorD x = random_tensor({2, 5, 4, 3}, rng, -1, 2, true);
    const Projector p = projector({2, 5, 4, 3}, rng);
    std::vector<TensorD> inputs{x, s.gamma, s.beta};
    for (const auto& t : s.mean_net.parameters()) inputs.push_back(t);
    for (const auto& t : s.std_net.parameters()) inputs.push_back(t);
    suite.check("learned_stats", inputs,
                [&] { return p(learned_stats_forward(x, s, true)); });
  }
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::size_t seeds, std::uint64_t base_seed) {
  Suite suite;
  for (std::size_t i = 0; i < seeds; ++i) {
    Rng rng = Rng(base_seed).fork(i);
    run_seed(suite, rng);
    suite.finish_seed();
  }
  return suite.take();
}

}  // namespace convnorm
