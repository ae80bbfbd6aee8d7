#pragma once

// Differentiable tensor operations. All functions throw std::invalid_argument
// on shape mismatches, naming the offending shapes.

#include <cstddef>
#include <cstdint>

#include "convnorm/tensor.hpp"

namespace convnorm {

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
};

struct Padding {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;
};

enum Axis : std::uint8_t {
  kAxisBatch = 1,
  kAxisChannel = 2,
  kAxisHeight = 4,
  kAxisWidth = 8,
};
using AxisSet = std::uint8_t;

// Cross-correlation. weight is (C_out, C_in, k_h, k_w); bias is (1, C_out, 1,
// 1) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions opt = {});

// Per-channel convolution, no padding. weight is (C, 1, k_h, k_w).
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                           std::size_t stride_h, std::size_t stride_w);

template <typename T>
Tensor<T> zero_pad(const Tensor<T>& x, Padding pad);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Elementwise binary ops with broadcasting: each extent must match or be 1.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);
template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x);
// log(1 + exp(x)), evaluated without overflow.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

// Sum of all elements, shape (1, 1, 1, 1).
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
// Mean over the given axes; reduced extents become 1.
template <typename T>
Tensor<T> mean(const Tensor<T>& x, AxisSet axes);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t window_h,
                   std::size_t window_w, std::size_t stride_h,
                   std::size_t stride_w);

// Softmax over the channel axis, independently per (n, h, w).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Per-channel mean over (N, H, W) of (x - mu)^2; mu is (1, C, 1, 1).
template <typename T>
Tensor<T> channel_central_moment(const Tensor<T>& x, const Tensor<T>& mu);

// (x - mu) * inv_scale * gamma + beta. mu and inv_scale are (1, C, 1, 1) or
// (N, C, 1, 1); gamma and beta are (1, C, 1, 1) or both undefined.
template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& x, const Tensor<T>& mu,
                             const Tensor<T>& inv_scale, const Tensor<T>& gamma,
                             const Tensor<T>& beta);

inline constexpr double kLogFloor = 1e-12;

// -1/N * sum c * log(max(p, kLogFloor)); rows are the channel axis.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot);

}  // namespace convnorm
