#include "convnorm/dwck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace convnorm {

bool is_admissible(std::size_t n) {
  if (n == 0) return false;
  for (std::size_t p : {2u, 3u, 5u}) {
    while (n % p == 0) n /= p;
  }
  return n == 1;
}

std::size_t admissible_size(std::size_t n) {
  std::size_t m = std::max<std::size_t>(n, 1);
  while (!is_admissible(m)) ++m;
  return m;
}

std::vector<std::size_t> split_extent(std::size_t n) {
  if (!is_admissible(n)) {
    throw std::invalid_argument("split_extent: " + std::to_string(n) +
                                " does not factor into {2, 3, 4, 5}");
  }
  std::vector<std::size_t> factors;
  std::size_t twos = 0;
  for (std::size_t p : {5u, 3u}) {
    while (n % p == 0) {
      factors.push_back(p);
      n /= p;
    }
  }
  while (n % 2 == 0) {
    ++twos;
    n /= 2;
  }
  if (twos >= 2 && factors.size() + twos - 1 >= 2) {
    factors.push_back(4);
    twos -= 2;
  }
  factors.insert(factors.end(), twos, 2);
  std::sort(factors.begin(), factors.end(), std::greater<>());
  return factors;
}

std::size_t DwckPlan::weights_per_channel() const {
  std::size_t total = 0;
  for (const auto& st : stages) total += st.kernel_h * st.kernel_w;
  return total;
}

std::string DwckPlan::str() const {
  std::string out = "input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                    ", padded " + std::to_string(pad_h) + "x" +
                    std::to_string(pad_w) + ", stages";
  for (const auto& st : stages) {
    out += " (" + std::to_string(st.kernel_h) + "," + std::to_string(st.kernel_w) +
           "," + std::to_string(st.stride_h) + "," + std::to_string(st.stride_w) + ")";
  }
  return out;
}

DwckPlan plan_dwck(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) {
    throw std::invalid_argument("plan_dwck: extents must be >= 1");
  }
  DwckPlan plan;
  plan.in_h = h;
  plan.in_w = w;
  plan.pad_h = admissible_size(h);
  plan.pad_w = admissible_size(w);
  std::vector<std::size_t> fh = split_extent(plan.pad_h);
  std::vector<std::size_t> fw = split_extent(plan.pad_w);
  const std::size_t n = std::max<std::size_t>({fh.size(), fw.size(), 1});
  fh.resize(n, 1);
  fw.resize(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    plan.stages.push_back({fh[i], fw[i], fh[i], fw[i]});
  }
  return plan;
}

Padding plan_padding(const DwckPlan& plan, std::size_t h, std::size_t w) {
  if (h > plan.pad_h || w > plan.pad_w) {
    throw std::invalid_argument("dwck: feature map " + std::to_string(h) + "x" +
                                std::to_string(w) + " exceeds plan extents " +
                                std::to_string(plan.pad_h) + "x" +
                                std::to_string(plan.pad_w) + "; rebuild the plan");
  }
  const std::size_t dh = plan.pad_h - h;
  const std::size_t dw = plan.pad_w - w;
  return {dh / 2, dh - dh / 2, dw / 2, dw - dw / 2};
}

template <typename T>
std::vector<Tensor<T>> init_dwck(const DwckPlan& plan, std::size_t channels,
                                 std::size_t full_h, std::size_t full_w,
                                 Rng& rng, double jitter) {
  if (!(jitter >= 0.0 && jitter < 0.5)) {
    throw std::invalid_argument("init_dwck: jitter must lie in [0, 0.5), got " +
                                std::to_string(jitter));
  }
  if (plan.stages.empty()) throw std::invalid_argument("init_dwck: empty plan");
  const double n = static_cast<double>(plan.stages.size());
  const double root =
      std::pow(1.0 / static_cast<double>(full_h * full_w), 1.0 / n);
  std::vector<Tensor<T>> weights;
  for (const auto& st : plan.stages) {
    Tensor<T> k(Shape{channels, 1, st.kernel_h, st.kernel_w}, T(0), true);
    for (auto& v : k.mutable_values()) {
      const double u = jitter == 0.0 ? 0.0 : rng.uniform(-1.0, 1.0);
      v = static_cast<T>(root * (1.0 + jitter * u));
    }
    weights.push_back(std::move(k));
  }
  return weights;
}

template <typename T>
DwckNormState<T> DwckNormState<T>::create(std::size_t channels, std::size_t h,
                                          std::size_t w, Rng& rng,
                                          const DwckOptions& opt) {
  if (channels == 0) throw std::invalid_argument("dwck norm: zero channels");
  if (!(opt.momentum > 0.0 && opt.momentum < 1.0)) {
    throw std::invalid_argument("dwck norm: momentum must lie in (0, 1)");
  }
  if (!(opt.eps > 0.0)) throw std::invalid_argument("dwck norm: eps must be > 0");
  DwckNormState s;
  s.plan = plan_dwck(h, w);
  s.stage_weights = init_dwck<T>(s.plan, channels, h, w, rng, opt.jitter);
  s.affine = opt.affine;
  if (opt.affine) {
    s.gamma = Tensor<T>(Shape{1, channels, 1, 1}, T(1), true);
    s.beta = Tensor<T>(Shape{1, channels, 1, 1}, T(0), true);
  }
  s.weighted_var = opt.weighted_var;
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  s.momentum = static_cast<T>(opt.momentum);
  s.eps = static_cast<T>(opt.eps);
  return s;
}

namespace {

template <typename T>
void check_input(const Tensor<T>& x, const DwckNormState<T>& s) {
  if (x.shape().c != s.channels()) {
    throw std::invalid_argument("dwck norm: input " + x.shape().str() + " has " +
                                std::to_string(x.shape().c) +
                                " channels, state has " +
                                std::to_string(s.channels()));
  }
}

// (N, C, h, w) -> (1, C, 1, 1): stage stack per image, then batch average.
template <typename T>
Tensor<T> collapse(const Tensor<T>& x, const DwckNormState<T>& s) {
  Tensor<T> y = zero_pad(x, plan_padding(s.plan, x.shape().h, x.shape().w));
  for (std::size_t i = 0; i < s.plan.stages.size(); ++i) {
    const auto& st = s.plan.stages[i];
    y = depthwise_conv2d(y, s.stage_weights[i], st.stride_h, st.stride_w);
  }
  return mean(y, kAxisBatch);
}

template <typename T>
Tensor<T> channel_constant(const std::vector<T>& v) {
  return Tensor<T>(Shape{1, v.size(), 1, 1}, v, false);
}

}  // namespace

template <typename T>
Tensor<T> dwck_mean(const Tensor<T>& x, const DwckNormState<T>& s) {
  check_input(x, s);
  return collapse(x, s);
}

template <typename T>
Tensor<T> weighted_var(const Tensor<T>& x, const DwckNormState<T>& s,
                       const Tensor<T>& mu) {
  check_input(x, s);
  return collapse(square(sub(x, mu)), s);
}

template <typename T>
Tensor<T> dwck_norm_forward(const Tensor<T>& x, DwckNormState<T>& s,
                            bool training) {
  check_input(x, s);
  const Tensor<T> gamma = s.affine ? s.gamma : Tensor<T>{};
  const Tensor<T> beta = s.affine ? s.beta : Tensor<T>{};
  if (!training) {
    std::vector<T> inv(s.channels());
    for (std::size_t c = 0; c < inv.size(); ++c) {
      inv[c] = T(1) / std::sqrt(s.running_var[c] + s.eps);
    }
    return normalize_channels(x, channel_constant(s.running_mean), channel_constant(inv),
                              gamma, beta);
  }
  const Tensor<T> mu = collapse(x, s);
  const Tensor<T> var = s.weighted_var ? collapse(square(sub(x, mu)), s)
                                       : channel_central_moment(x, mu);
  const auto mv = mu.values();
  const auto vv = var.values();
  s.batch_mean.assign(mv.begin(), mv.end());
  s.batch_var.assign(vv.begin(), vv.end());
  for (std::size_t c = 0; c < s.channels(); ++c) {
    s.running_mean[c] = (T(1) - s.momentum) * s.running_mean[c] + s.momentum * mv[c];
    s.running_var[c] = (T(1) - s.momentum) * s.running_var[c] + s.momentum * vv[c];
  }
  return normalize_channels(x, mu, rsqrt(add_scalar(var, s.eps)), gamma, beta);
}

template <typename T>
void project_nonneg(DwckNormState<T>& s) {
  for (auto& k : s.stage_weights) {
    for (auto& v : k.mutable_values()) v = std::max(v, T(0));
  }
}

template <typename T>
T min_stage_weight(const DwckNormState<T>& s) {
  T m = std::numeric_limits<T>::infinity();
  for (const auto& k : s.stage_weights) {
    for (T v : k.values()) m = std::min(m, v);
  }
  return m;
}

template <typename T>
std::vector<std::vector<double>> effective_weights(const DwckNormState<T>& s) {
  const DwckPlan& plan = s.plan;
  std::vector<std::vector<double>> out(s.channels(),
                                       std::vector<double>(plan.pad_h * plan.pad_w, 1.0));
  for (std::size_t c = 0; c < s.channels(); ++c) {
    for (std::size_t i = 0; i < plan.pad_h; ++i) {
      for (std::size_t j = 0; j < plan.pad_w; ++j) {
        double prod = 1.0;
        std::size_t ri = i;
        std::size_t rj = j;
        for (std::size_t st = 0; st < plan.stages.size(); ++st) {
          const auto& stage = plan.stages[st];
          const std::size_t oi = ri % stage.kernel_h;
          const std::size_t oj = rj % stage.kernel_w;
          ri /= stage.kernel_h;
          rj /= stage.kernel_w;
          const auto kv = s.stage_weights[st].values();
          prod *= static_cast<double>(
              kv[(c * stage.kernel_h + oi) * stage.kernel_w + oj]);
        }
        out[c][i * plan.pad_w + j] = prod;
      }
    }
  }
  return out;
}

template <typename T>
double weight_sum_drift(const DwckNormState<T>& s) {
  const auto eff = effective_weights(s);
  const Padding pad = plan_padding(s.plan, s.plan.in_h, s.plan.in_w);
  double drift = 0.0;
  for (const auto& ch : eff) {
    double total = 0.0;
    for (std::size_t i = pad.top; i < pad.top + s.plan.in_h; ++i) {
      for (std::size_t j = pad.left; j < pad.left + s.plan.in_w; ++j) {
        total += ch[i * s.plan.pad_w + j];
      }
    }
    drift = std::max(drift, std::abs(total - 1.0));
  }
  return drift;
}

#define CONVNORM_INSTANTIATE(T)                                                   \
  template std::vector<Tensor<T>> init_dwck<T>(const DwckPlan&, std::size_t,      \
                                               std::size_t, std::size_t, Rng&,    \
                                               double);                           \
  template struct DwckNormState<T>;                                               \
  template Tensor<T> dwck_mean<T>(const Tensor<T>&, const DwckNormState<T>&);     \
  template Tensor<T> weighted_var<T>(const Tensor<T>&, const DwckNormState<T>&,   \
                                     const Tensor<T>&);                           \
  template Tensor<T> dwck_norm_forward<T>(const Tensor<T>&, DwckNormState<T>&,    \
                                          bool);                                  \
  template void project_nonneg<T>(DwckNormState<T>&);                             \
  template T min_stage_weight<T>(const DwckNormState<T>&);                        \
  template std::vector<std::vector<double>> effective_weights<T>(                 \
      const DwckNormState<T>&);                                                   \
  template double weight_sum_drift<T>(const DwckNormState<T>&);

CONVNORM_INSTANTIATE(float)
CONVNORM_INSTANTIATE(double)

#undef CONVNORM_INSTANTIATE

}  // namespace convnorm
