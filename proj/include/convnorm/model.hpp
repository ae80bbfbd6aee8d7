#pragma once

// ALL-CNN-C classifier with a pluggable normalization after every ReLU conv.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "convnorm/batch_norm.hpp"
#include "convnorm/dwck.hpp"
#include "convnorm/learned_stats.hpp"
#include "convnorm/ops.hpp"
#include "convnorm/rng.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm {

enum class NormKind : std::uint8_t { kNone = 0, kBatch = 1, kDwck = 2, kLearned = 3 };

std::string_view to_string(NormKind kind);
std::optional<NormKind> parse_norm_kind(std::string_view name);

struct ClassifierConfig {
  NormKind norm = NormKind::kNone;
  double width_scale = 1.0;
  std::size_t in_c = 3;
  std::size_t in_h = 32;
  std::size_t in_w = 32;
  std::size_t n_classes = 10;
  bool affine = true;
  bool weighted_var = false;
  double jitter = 0.1;
};

using Real = float;

enum class ParamRole : std::uint8_t { kConv, kNormAffine, kDwckStage, kStatNet };

struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
  ParamRole role;
};

// Non-trainable state that checkpoints must carry (running statistics).
struct NamedBuffer {
  std::string name;
  std::vector<Real>* values;
};

struct ConvLayer {
  Tensor<Real> weight;  // (C_out, C_in, k, k)
  Tensor<Real> bias;    // (1, C_out, 1, 1)
  Conv2dOptions options;
  bool relu = true;
};

class NormLayer {
 public:
  using State = std::variant<std::monostate, BatchNormState<Real>,
                             DwckNormState<Real>, LearnedStatsState<Real>>;

  NormLayer() = default;
  explicit NormLayer(State state) : state_(std::move(state)) {}

  NormKind kind() const;
  Tensor<Real> forward(const Tensor<Real>& x, bool training);
  void append_parameters(const std::string& prefix, std::vector<NamedParam>& out);
  void append_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

  State& state() { return state_; }
  const State& state() const { return state_; }

 private:
  State state_;
};

class AllCnn {
 public:
  static AllCnn build(const ClassifierConfig& cfg, Rng& rng);

  // Class probabilities, shape (N, n_classes, 1, 1).
  Tensor<Real> forward(const Tensor<Real>& x, bool training);
  // Argmax per row of an eval-mode forward; ties go to the lowest index.
  std::vector<std::size_t> predict(const Tensor<Real>& x);

  const ClassifierConfig& config() const { return cfg_; }
  std::vector<NamedParam> parameters();
  std::vector<NamedBuffer> buffers();
  std::size_t parameter_count();
  // Parameters belonging to the normalization layers.
  std::size_t normalization_parameter_count();
  std::size_t dwck_stage_weight_count();

  std::vector<ConvLayer>& convs() { return convs_; }
  std::vector<NormLayer>& norms() { return norms_; }
  // Spatial extent (h, w) at each normalized layer's input.
  const std::vector<std::pair<std::size_t, std::size_t>>& norm_dims() const {
    return norm_dims_;
  }

  void zero_grad();
  void project_nonneg();
  // Inf when the model has no DWCK layer.
  double min_dwck_weight() const;
  // Max over DWCK layers; 0 for other kinds.
  double weight_sum_drift() const;

 private:
  ClassifierConfig cfg_;
  std::vector<ConvLayer> convs_;
  std::vector<NormLayer> norms_;  // one per conv except the classifier conv
  std::vector<std::pair<std::size_t, std::size_t>> norm_dims_;
};

// Predicted class per row of an (N, C, 1, 1) probability tensor.
std::vector<std::size_t> argmax_rows(const Tensor<Real>& probs);

// Filter count after width scaling, floored, at least 1.
std::size_t scaled_width(std::size_t base, double width_scale);

}  // namespace convnorm
