#include "convnorm/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>

#include "convnorm/ops.hpp"

namespace convnorm {

void sgd_step(std::vector<NamedParam>& params, double lr) {
  for (const auto& p : params) {
    for (Real g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient(p.name);
    }
  }
  const Real step = static_cast<Real>(lr);
  for (auto& p : params) {
    auto v = p.tensor.mutable_values();
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * g[i];
  }
}

double accuracy(std::span<const std::size_t> predictions,
                std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw std::invalid_argument("accuracy: prediction and label counts differ or are zero");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

EvalResult evaluate(AllCnn& model, const Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be >= 1");
  NoGradGuard no_grad;
  double loss_sum = 0.0;
  std::size_t hits = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, ds.size());
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Tensor<Real> probs = model.forward(ds.images(idx), false);
    const Tensor<Real> loss = cross_entropy(probs, ds.one_hot(idx));
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    const auto pred = argmax_rows(probs);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (pred[k] == ds.labels[idx[k]]) ++hits;
    }
  }
  const double n = static_cast<double>(ds.size());
  return {loss_sum / n, static_cast<double>(hits) / n};
}

std::vector<MetricsRow> train_model(AllCnn& model, const Dataset& train,
                                    const Dataset& val, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (cfg.epochs == 0) throw std::invalid_argument("train: epochs must be >= 1");
  if (train.size() == 0 || val.size() == 0) {
    throw std::invalid_argument("train: datasets must be nonempty");
  }
  const bool project = cfg.project_nonneg && model.config().norm == NormKind::kDwck;
  BatchIterator it(train, cfg.batch_size, cfg.seed);
  std::vector<NamedParam> params = model.parameters();
  std::vector<MetricsRow> rows;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    it.start_epoch(epoch);
    while (auto batch = it.next()) {
      model.zero_grad();
      const Tensor<Real> probs = model.forward(batch->images, true);
      const Tensor<Real> loss = cross_entropy(probs, batch->one_hot);
      backward(loss);
      sgd_step(params, cfg.lr);
      if (project) model.project_nonneg();
    }
    MetricsRow row;
    row.epoch = epoch;
    const EvalResult tr = evaluate(model, train, cfg.eval_batch_size);
    const EvalResult va = evaluate(model, val, cfg.eval_batch_size);
    row.train_loss = tr.loss;
    row.train_acc = tr.accuracy;
    row.val_loss = va.loss;
    row.val_acc = va.accuracy;
    row.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.weight_sum_drift = model.weight_sum_drift();
    rows.push_back(row);
    if (on_epoch) on_epoch(row, model);
  }
  return rows;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_metrics_row(const MetricsRow& row) {
  return std::to_string(row.epoch) + "," + format_real(row.train_loss) + "," +
         format_real(row.train_acc) + "," + format_real(row.val_loss) + "," +
         format_real(row.val_acc) + "," + format_real(row.wall_time_s) + "," +
         format_real(row.weight_sum_drift);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() +
                             ": " + ec.message());
  }
}

void write_metrics_csv(const std::filesystem::path& path, const std::string& comment,
                       const std::vector<MetricsRow>& rows) {
  std::string out = "# " + comment + "\n" + kMetricsHeader + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  write_file_atomic(path, out);
}

}  // namespace convnorm
