#pragma once

#include <cstddef>
#include <vector>

#include "convnorm/tensor.hpp"

namespace convnorm {

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;  // (1, C, 1, 1), init 1
  Tensor<T> beta;   // (1, C, 1, 1), init 0
  std::vector<T> running_mean;
  std::vector<T> running_var;
  // Statistics of the most recent training-mode batch.
  std::vector<T> batch_mean;
  std::vector<T> batch_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNormState create(std::size_t channels, T momentum = T(0.1),
                               T eps = T(1e-5));
  std::size_t channels() const { return running_mean.size(); }
};

// Per-channel mean and biased variance over batch, height and width.
struct ChannelMoments {
  std::vector<double> mean;
  std::vector<double> var;
};

template <typename T>
ChannelMoments channel_moments(const Tensor<T>& x);

// Training mode normalizes by the batch moments and updates the running
// averages r <- (1 - m) r + m batch; eval mode normalizes by the running
// averages. Output is gamma * (x - mu) / sqrt(var + eps) + beta.
template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& x, BatchNormState<T>& s,
                             bool training);

}  // namespace convnorm
