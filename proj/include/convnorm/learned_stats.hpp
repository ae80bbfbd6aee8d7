#pragma once

// Normalization whose per-channel mean and standard deviation are produced by
// two small networks: global average pool, a stack of 1-D convolutions along
// the channel axis, then an average over the last stage's channels.

#include <cstddef>
#include <vector>

#include "convnorm/rng.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

struct StatNetSpec {
  std::vector<std::size_t> channels;
  std::vector<std::size_t> kernels;
};

// Layer 1 uses (4, 4, 1) channels with kernels (4, 3, 3); deeper layers use
// (4, 4, 2, 1) with kernels (4, 3, 2, 3).
StatNetSpec stat_net_spec(std::size_t layer_index);

template <typename T>
struct Conv1dStage {
  Tensor<T> weight;  // (out, in, 1, k)
  Tensor<T> bias;    // (1, out, 1, 1)
  std::size_t kernel = 1;
};

template <typename T>
struct StatNet {
  std::vector<Conv1dStage<T>> stages;

  static StatNet create(const StatNetSpec& spec, Rng& rng);
  // (N, C, 1, 1) pooled features -> (N, C, 1, 1) statistic, one per map.
  Tensor<T> forward(const Tensor<T>& pooled) const;
  std::size_t parameter_count() const;
  std::vector<Tensor<T>> parameters() const;
};

template <typename T>
struct LearnedStatsState {
  std::size_t channels = 0;
  StatNet<T> mean_net;
  StatNet<T> std_net;
  T eps = T(1e-5);
  bool affine = true;
  Tensor<T> gamma;  // (1, C, 1, 1) when affine
  Tensor<T> beta;
};

template <typename T>
LearnedStatsState<T> build_stat_nets(std::size_t layer_index,
                                     std::size_t n_channels, Rng& rng,
                                     bool affine = true, double eps = 1e-5);

// mu = mean_net(gap(x)), sigma = softplus(std_net(gap(x))) + eps, both per
// image and channel; output (x - mu) / sigma, then the optional affine map.
// The computation does not depend on `training`.
template <typename T>
Tensor<T> learned_stats_forward(const Tensor<T>& x, const LearnedStatsState<T>& s,
                                bool training);

}  // namespace convnorm
