#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "convnorm/data.hpp"
#include "convnorm/model.hpp"

namespace convnorm {

struct TrainConfig {
  double lr = 0.01;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  bool project_nonneg = true;  // DWCK stage weights only
  std::size_t eval_batch_size = 100;
};

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double wall_time_s = 0.0;
  double weight_sum_drift = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in " + param), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

// p <- p - lr * g for every parameter. All gradients are validated before any
// parameter moves; a non-finite one throws NonFiniteGradient naming it.
void sgd_step(std::vector<NamedParam>& params, double lr);

// Fraction of predictions equal to labels.
double accuracy(std::span<const std::size_t> predictions,
                std::span<const std::uint8_t> labels);

// Eval-mode loss (per-image mean cross-entropy) and accuracy.
EvalResult evaluate(AllCnn& model, const Dataset& ds, std::size_t batch_size = 100);

using EpochCallback = std::function<void(const MetricsRow&, AllCnn&)>;

// Per epoch: shuffled training pass with an SGD step per batch, then
// eval-mode metrics on both sets.
std::vector<MetricsRow> train_model(AllCnn& model, const Dataset& train,
                                    const Dataset& val, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch = {});

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,train_acc,val_loss,val_acc,wall_time_s,weight_sum_drift";

std::string format_metrics_row(const MetricsRow& row);
// Writes `# <comment>`, the header and one line per row through a temporary
// file renamed into place.
void write_metrics_csv(const std::filesystem::path& path, const std::string& comment,
                       const std::vector<MetricsRow>& rows);

// Shortest round-trip decimal form, independent of the C++ locale.
std::string format_real(double v);

// Replaces `path` atomically with `contents`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace convnorm
