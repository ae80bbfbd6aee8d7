#include "convnorm/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace convnorm {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::kNone: return "none";
    case NormKind::kBatch: return "batch";
    case NormKind::kDwck: return "dwck";
    case NormKind::kLearned: return "learned";
  }
  return "unknown";
}

std::optional<NormKind> parse_norm_kind(std::string_view name) {
  for (NormKind k : {NormKind::kNone, NormKind::kBatch, NormKind::kDwck,
                     NormKind::kLearned}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

std::size_t scaled_width(std::size_t base, double width_scale) {
  const auto scaled = static_cast<std::size_t>(std::floor(static_cast<double>(base) * width_scale));
  return std::max<std::size_t>(scaled, 1);
}

NormKind NormLayer::kind() const {
  switch (state_.index()) {
    case 1: return NormKind::kBatch;
    case 2: return NormKind::kDwck;
    case 3: return NormKind::kLearned;
    default: return NormKind::kNone;
  }
}

Tensor<Real> NormLayer::forward(const Tensor<Real>& x, bool training) {
  return std::visit(
      [&](auto& s) -> Tensor<Real> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, std::monostate>) {
          return x;
        } else if constexpr (std::is_same_v<S, BatchNormState<Real>>) {
          return batch_norm_forward(x, s, training);
        } else if constexpr (std::is_same_v<S, DwckNormState<Real>>) {
          return dwck_norm_forward(x, s, training);
        } else {
          return learned_stats_forward(x, s, training);
        }
      },
      state_);
}

void NormLayer::append_parameters(const std::string& prefix,
                                  std::vector<NamedParam>& out) {
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, BatchNormState<Real>>) {
          out.push_back({prefix + ".gamma", s.gamma, ParamRole::kNormAffine});
          out.push_back({prefix + ".beta", s.beta, ParamRole::kNormAffine});
        } else if constexpr (std::is_same_v<S, DwckNormState<Real>>) {
          for (std::size_t i = 0; i < s.stage_weights.size(); ++i) {
            out.push_back({prefix + ".stage" + std::to_string(i), s.stage_weights[i],
                           ParamRole::kDwckStage});
          }
          if (s.affine) {
            out.push_back({prefix + ".gamma", s.gamma, ParamRole::kNormAffine});
            out.push_back({prefix + ".beta", s.beta, ParamRole::kNormAffine});
          }
        } else if constexpr (std::is_same_v<S, LearnedStatsState<Real>>) {
          auto add_net = [&](const StatNet<Real>& net, const std::string& name) {
            for (std::size_t i = 0; i < net.stages.size(); ++i) {
              const std::string p = prefix + "." + name + "." + std::to_string(i);
              out.push_back({p + ".weight", net.stages[i].weight, ParamRole::kStatNet});
              out.push_back({p + ".bias", net.stages[i].bias, ParamRole::kStatNet});
            }
          };
          add_net(s.mean_net, "mean_net");
          add_net(s.std_net, "std_net");
          if (s.affine) {
            out.push_back({prefix + ".gamma", s.gamma, ParamRole::kNormAffine});
            out.push_back({prefix + ".beta", s.beta, ParamRole::kNormAffine});
          }
        }
      },
      state_);
}

void NormLayer::append_buffers(const std::string& prefix,
                               std::vector<NamedBuffer>& out) {
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, BatchNormState<Real>> ||
                      std::is_same_v<S, DwckNormState<Real>>) {
          out.push_back({prefix + ".running_mean", &s.running_mean});
          out.push_back({prefix + ".running_var", &s.running_var});
        }
      },
      state_);
}

namespace {

struct LayerSpec {
  std::size_t filters;
  std::size_t kernel;
  std::size_t stride;
  bool relu;
};

ConvLayer make_conv(std::size_t c_in, const LayerSpec& spec, Rng rng) {
  ConvLayer layer;
  const std::size_t k = spec.kernel;
  layer.weight = Tensor<Real>(Shape{spec.filters, c_in, k, k}, Real(0), true);
  const double limit =
      std::sqrt(6.0 / static_cast<double>((c_in + spec.filters) * k * k));
  for (auto& v : layer.weight.mutable_values()) {
    v = static_cast<Real>(rng.uniform(-limit, limit));
  }
  layer.bias = Tensor<Real>(Shape{1, spec.filters, 1, 1}, Real(0), true);
  layer.options = Conv2dOptions{spec.stride, spec.stride, k / 2, k / 2};
  layer.relu = spec.relu;
  return layer;
}

}  // namespace

AllCnn AllCnn::build(const ClassifierConfig& cfg, Rng& rng) {
  if (cfg.in_h < 8 || cfg.in_w < 8) {
    throw std::invalid_argument("all-cnn: input " + std::to_string(cfg.in_h) + "x" +
                                std::to_string(cfg.in_w) +
                                " is too small for two stride-2 convolutions (need >= 8)");
  }
  if (!(cfg.width_scale > 0.0 && cfg.width_scale <= 1.0)) {
    throw std::invalid_argument("all-cnn: width_scale must lie in (0, 1]");
  }
  if (cfg.in_c == 0 || cfg.n_classes == 0) {
    throw std::invalid_argument("all-cnn: channel and class counts must be >= 1");
  }
  const std::size_t w96 = scaled_width(96, cfg.width_scale);
  const std::size_t w192 = scaled_width(192, cfg.width_scale);
  const std::vector<LayerSpec> specs{
      {w96, 3, 1, true},  {w96, 3, 1, true},  {w96, 3, 2, true},
      {w192, 3, 1, true}, {w192, 3, 1, true}, {w192, 3, 2, true},
      {w192, 3, 1, true}, {w192, 1, 1, true}, {cfg.n_classes, 1, 1, false},
  };

  AllCnn model;
  model.cfg_ = cfg;
  const Rng base = rng.fork(rng.next_u64());
  std::size_t c_in = cfg.in_c;
  std::size_t h = cfg.in_h;
  std::size_t w = cfg.in_w;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    model.convs_.push_back(make_conv(c_in, spec, base.fork(i)));
    const auto& opt = model.convs_.back().options;
    h = (h + 2 * opt.pad_h - spec.kernel) / opt.stride_h + 1;
    w = (w + 2 * opt.pad_w - spec.kernel) / opt.stride_w + 1;
    c_in = spec.filters;
    if (!spec.relu) break;

    Rng norm_rng = base.fork(1000 + i);
    const std::size_t layer_index = i + 1;
    switch (cfg.norm) {
      case NormKind::kNone:
        model.norms_.emplace_back();
        break;
      case NormKind::kBatch:
        model.norms_.emplace_back(BatchNormState<Real>::create(spec.filters));
        break;
      case NormKind::kDwck: {
        DwckOptions opt_dwck;
        opt_dwck.jitter = cfg.jitter;
        opt_dwck.affine = cfg.affine;
        opt_dwck.weighted_var = cfg.weighted_var;
        model.norms_.emplace_back(
            DwckNormState<Real>::create(spec.filters, h, w, norm_rng, opt_dwck));
        break;
      }
      case NormKind::kLearned:
        model.norms_.emplace_back(
            build_stat_nets<Real>(layer_index, spec.filters, norm_rng, cfg.affine));
        break;
    }
    model.norm_dims_.emplace_back(h, w);
  }
  return model;
}

Tensor<Real> AllCnn::forward(const Tensor<Real>& x, bool training) {
  const Shape xs = x.shape();
  if (xs.c != cfg_.in_c || xs.h != cfg_.in_h || xs.w != cfg_.in_w) {
    throw std::invalid_argument("all-cnn: input " + xs.str() + " does not match (N, " +
                                std::to_string(cfg_.in_c) + ", " +
                                std::to_string(cfg_.in_h) + ", " +
                                std::to_string(cfg_.in_w) + ")");
  }
  Tensor<Real> y = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const ConvLayer& conv = convs_[i];
    y = conv2d(y, conv.weight, conv.bias, conv.options);
    if (!conv.relu) break;
    y = relu(y);
    y = norms_[i].forward(y, training);
  }
  return softmax(global_avg_pool(y));
}

std::vector<std::size_t> argmax_rows(const Tensor<Real>& probs) {
  const Shape s = probs.shape();
  const auto v = probs.values();
  std::vector<std::size_t> out(s.n, 0);
  const std::size_t stride = s.c * s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.c; ++c) {
      if (v[n * stride + c] > v[n * stride + best]) best = c;
    }
    out[n] = best;
  }
  return out;
}

std::vector<std::size_t> AllCnn::predict(const Tensor<Real>& x) {
  NoGradGuard no_grad;
  return argmax_rows(forward(x, false));
}

std::vector<NamedParam> AllCnn::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string p = "conv" + std::to_string(i + 1);
    out.push_back({p + ".weight", convs_[i].weight, ParamRole::kConv});
    out.push_back({p + ".bias", convs_[i].bias, ParamRole::kConv});
    if (i < norms_.size()) norms_[i].append_parameters("norm" + std::to_string(i + 1), out);
  }
  return out;
}

std::vector<NamedBuffer> AllCnn::buffers() {
  std::vector<NamedBuffer> out;
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    norms_[i].append_buffers("norm" + std::to_string(i + 1), out);
  }
  return out;
}

std::size_t AllCnn::parameter_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

std::size_t AllCnn::normalization_parameter_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) {
    if (p.role != ParamRole::kConv) total += p.tensor.numel();
  }
  return total;
}

std::size_t AllCnn::dwck_stage_weight_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) {
    if (p.role == ParamRole::kDwckStage) total += p.tensor.numel();
  }
  return total;
}

void AllCnn::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

void AllCnn::project_nonneg() {
  for (auto& n : norms_) {
    if (auto* s = std::get_if<DwckNormState<Real>>(&n.state())) convnorm::project_nonneg(*s);
  }
}

double AllCnn::min_dwck_weight() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& n : norms_) {
    if (const auto* s = std::get_if<DwckNormState<Real>>(&n.state())) {
      m = std::min(m, static_cast<double>(min_stage_weight(*s)));
    }
  }
  return m;
}

double AllCnn::weight_sum_drift() const {
  double d = 0.0;
  for (const auto& n : norms_) {
    if (const auto* s = std::get_if<DwckNormState<Real>>(&n.state())) {
      d = std::max(d, convnorm::weight_sum_drift(*s));
    }
  }
  return d;
}

}  // namespace convnorm
