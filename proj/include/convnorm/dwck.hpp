#pragma once

// Weighted-mean normalization built from stacked depthwise kernels (DWCK).
//
// A plan tiles the (zero-padded) feature map with non-overlapping kernels,
// kernel == stride at every stage, so the stack collapses each channel of each
// image to a single scalar. The coefficient a pixel receives is the product of
// the stage weights covering it; at initialization every such product equals
// 1 / (H * W), which reproduces the arithmetic mean.

#include <cstddef>
#include <string>
#include <vector>

#include "convnorm/ops.hpp"
#include "convnorm/rng.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

struct DwckStage {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;

  bool operator==(const DwckStage&) const = default;
};

struct DwckPlan {
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t pad_h = 1;
  std::size_t pad_w = 1;
  std::vector<DwckStage> stages;

  std::size_t weights_per_channel() const;
  std::string str() const;
};

// Stage factors admitted when splitting an extent.
inline constexpr std::size_t kMaxStageFactor = 5;

// True iff n factors into {2, 3, 4, 5}.
bool is_admissible(std::size_t n);
// Smallest admissible integer >= n.
std::size_t admissible_size(std::size_t n);
// Stage kernel sizes for an admissible extent, largest first. Two factors of
// 2 merge into a leading 4 whenever the stack keeps at least two stages.
std::vector<std::size_t> split_extent(std::size_t n);

DwckPlan plan_dwck(std::size_t h, std::size_t w);

// Zero padding that centres an (h, w) map inside the plan's padded extents;
// the odd pixel goes to the bottom/right.
Padding plan_padding(const DwckPlan& plan, std::size_t h, std::size_t w);

// One (channels, 1, k_h, k_w) tensor per stage, each weight drawn uniformly
// from (1 +- jitter) * (1 / (full_h * full_w))^(1 / n_stages).
template <typename T>
std::vector<Tensor<T>> init_dwck(const DwckPlan& plan, std::size_t channels,
                                 std::size_t full_h, std::size_t full_w,
                                 Rng& rng, double jitter);

struct DwckOptions {
  double jitter = 0.1;
  bool affine = true;
  bool weighted_var = false;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename T>
struct DwckNormState {
  DwckPlan plan;
  std::vector<Tensor<T>> stage_weights;
  bool affine = true;
  Tensor<T> gamma;  // (1, C, 1, 1) when affine
  Tensor<T> beta;
  bool weighted_var = false;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static DwckNormState create(std::size_t channels, std::size_t h,
                              std::size_t w, Rng& rng,
                              const DwckOptions& opt = {});
  std::size_t channels() const { return running_mean.size(); }
};

// Per-image weighted mean through the stage stack, averaged over the batch.
// Shape (1, C, 1, 1).
template <typename T>
Tensor<T> dwck_mean(const Tensor<T>& x, const DwckNormState<T>& s);

// The stage stack applied to (x - mu)^2, averaged over the batch.
template <typename T>
Tensor<T> weighted_var(const Tensor<T>& x, const DwckNormState<T>& s,
                       const Tensor<T>& mu);

// (x - mu) / sqrt(var + eps) with mu from dwck_mean and var the plain
// mean-square deviation around mu (or weighted_var when enabled), then the
// optional affine map.
template <typename T>
Tensor<T> dwck_norm_forward(const Tensor<T>& x, DwckNormState<T>& s,
                            bool training);

// Clamps every stage weight at zero.
template <typename T>
void project_nonneg(DwckNormState<T>& s);

template <typename T>
T min_stage_weight(const DwckNormState<T>& s);

// Per-channel effective kernel over the padded map (pad_h * pad_w values,
// row-major): the product of the stage weights covering each pixel.
template <typename T>
std::vector<std::vector<double>> effective_weights(const DwckNormState<T>& s);

// max over channels of |sum of effective weights on unpadded pixels - 1|.
template <typename T>
double weight_sum_drift(const DwckNormState<T>& s);

}  // namespace convnorm
