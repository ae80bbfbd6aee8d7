#include "convnorm/learned_stats.hpp"

#include <cmath>
#include <stdexcept>

#include "convnorm/ops.hpp"

namespace convnorm {

StatNetSpec stat_net_spec(std::size_t layer_index) {
  if (layer_index == 0) {
    throw std::invalid_argument("stat_net_spec: layer index starts at 1");
  }
  if (layer_index == 1) return {{4, 4, 1}, {4, 3, 3}};
  return {{4, 4, 2, 1}, {4, 3, 2, 3}};
}

template <typename T>
StatNet<T> StatNet<T>::create(const StatNetSpec& spec, Rng& rng) {
  if (spec.channels.size() != spec.kernels.size() || spec.channels.empty()) {
    throw std::invalid_argument("stat net: channel and kernel lists must match");
  }
  StatNet net;
  std::size_t in = 1;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    const std::size_t out = spec.channels[i];
    const std::size_t k = spec.kernels[i];
    const double limit = std::sqrt(6.0 / static_cast<double>((in + out) * k));
    Conv1dStage<T> st;
    st.kernel = k;
    st.weight = Tensor<T>(Shape{out, in, 1, k}, T(0), true);
    for (auto& v : st.weight.mutable_values()) {
      v = static_cast<T>(rng.uniform(-limit, limit));
    }
    st.bias = Tensor<T>(Shape{1, out, 1, 1}, T(0), true);
    net.stages.push_back(std::move(st));
    in = out;
  }
  return net;
}

template <typename T>
Tensor<T> StatNet<T>::forward(const Tensor<T>& pooled) const {
  const Shape ps = pooled.shape();
  // Features become a length-C sequence with one input channel.
  Tensor<T> y = reshape(pooled, Shape{ps.n, 1, 1, ps.c});
  for (const auto& st : stages) {
    const std::size_t left = (st.kernel - 1) / 2;
    y = zero_pad(y, Padding{0, 0, left, st.kernel - 1 - left});
    y = conv2d(y, st.weight, st.bias);
  }
  y = mean(y, kAxisChannel);
  return reshape(y, Shape{ps.n, ps.c, 1, 1});
}

template <typename T>
std::size_t StatNet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& st : stages) total += st.weight.numel() + st.bias.numel();
  return total;
}

template <typename T>
std::vector<Tensor<T>> StatNet<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& st : stages) {
    out.push_back(st.weight);
    out.push_back(st.bias);
  }
  return out;
}

template <typename T>
LearnedStatsState<T> build_stat_nets(std::size_t layer_index,
                                     std::size_t n_channels, Rng& rng,
                                     bool affine, double eps) {
  if (n_channels == 0) throw std::invalid_argument("learned stats: zero channels");
  if (!(eps > 0.0)) throw std::invalid_argument("learned stats: eps must be > 0");
  const StatNetSpec spec = stat_net_spec(layer_index);
  LearnedStatsState<T> s;
  s.channels = n_channels;
  s.mean_net = StatNet<T>::create(spec, rng);
  s.std_net = StatNet<T>::create(spec, rng);
  s.eps = static_cast<T>(eps);
  s.affine = affine;
  if (affine) {
    s.gamma = Tensor<T>(Shape{1, n_channels, 1, 1}, T(1), true);
    s.beta = Tensor<T>(Shape{1, n_channels, 1, 1}, T(0), true);
  }
  return s;
}

template <typename T>
Tensor<T> learned_stats_forward(const Tensor<T>& x, const LearnedStatsState<T>& s,
                                bool /*training*/) {
  if (x.shape().c != s.channels) {
    throw std::invalid_argument("learned stats: input " + x.shape().str() +
                                " has " + std::to_string(x.shape().c) +
                                " channels, state has " + std::to_string(s.channels));
  }
  const Tensor<T> pooled = global_avg_pool(x);
  const Tensor<T> mu = s.mean_net.forward(pooled);
  const Tensor<T> sigma = add_scalar(softplus(s.std_net.forward(pooled)), s.eps);
  const Tensor<T> inv_sigma = div(Tensor<T>(Shape{1, 1, 1, 1}, T(1)), sigma);
  if (!s.affine) return normalize_channels(x, mu, inv_sigma, Tensor<T>{}, Tensor<T>{});
  return normalize_channels(x, mu, inv_sigma, s.gamma, s.beta);
}

#define CONVNORM_INSTANTIATE(T)                                                  \
  template struct StatNet<T>;                                                    \
  template LearnedStatsState<T> build_stat_nets<T>(std::size_t, std::size_t,     \
                                                   Rng&, bool, double);          \
  template Tensor<T> learned_stats_forward<T>(const Tensor<T>&,                  \
                                              const LearnedStatsState<T>&, bool);

CONVNORM_INSTANTIATE(float)
CONVNORM_INSTANTIATE(double)

#undef CONVNORM_INSTANTIATE

}  // namespace convnorm
