#include <stdexcept>
#include <string>
#include <vector>

#include "convnorm/ops.hpp"

namespace convnorm {

namespace {

// Offsets of a per-channel statistic: (1, C, 1, 1) is shared across the
// batch, (N, C, 1, 1) is per image.
struct StatLayout {
  bool per_image = false;
  std::size_t at(std::size_t n, std::size_t c, std::size_t channels) const {
    return per_image ? n * channels + c : c;
  }
};

StatLayout stat_layout(const Shape& x, const Shape& s, const char* op, const char* what) {
  if (s.c == x.c && s.h == 1 && s.w == 1 && (s.n == 1 || s.n == x.n)) {
    return {s.n == x.n && x.n != 1};
  }
  throw std::invalid_argument(std::string(op) + ": " + what + " " + s.str() +
                              " does not fit input " + x.str());
}

}  // namespace

template <typename T>
Tensor<T> channel_central_moment(const Tensor<T>& x, const Tensor<T>& mu) {
  const Shape xs = x.shape();
  if (mu.shape() != Shape{1, xs.c, 1, 1}) {
    throw std::invalid_argument("channel_central_moment: mean " + mu.shape().str() +
                                " does not fit input " + xs.str());
  }
  const std::size_t plane = xs.h * xs.w;
  const double count = static_cast<double>(xs.n * plane);
  const auto xv = x.values();
  const auto mv = mu.values();
  std::vector<T> v(xs.c);
  for (std::size_t c = 0; c < xs.c; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* p = xv.data() + (n * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(mv[c]);
        acc += d * d;
      }
    }
    v[c] = static_cast<T>(acc / count);
  }
  return make_result<T>(
      Shape{1, xs.c, 1, 1}, std::move(v), {x, mu}, "channel_central_moment",
      [xs, plane, count](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pm = *self.parents[1];
        for (std::size_t c = 0; c < xs.c; ++c) {
          const T m = pm.value[c];
          const T k = static_cast<T>(2.0 / count) * self.grad[c];
          double dmu = 0.0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T d = px.value[base + i] - m;
              if (px.requires_grad) px.grad[base + i] += k * d;
              dmu += static_cast<double>(d);
            }
          }
          if (pm.requires_grad) pm.grad[c] -= k * static_cast<T>(dmu);
        }
      });
}

template <typename T>
Tensor<T> normalize_channels(const Tensor<T>& x, const Tensor<T>& mu,
                             const Tensor<T>& inv_scale, const Tensor<T>& gamma,
                             const Tensor<T>& beta) {
  const Shape xs = x.shape();
  const StatLayout ml = stat_layout(xs, mu.shape(), "normalize_channels", "mean");
  const StatLayout sl = stat_layout(xs, inv_scale.shape(), "normalize_channels", "scale");
  const bool affine = gamma.defined();
  if (affine != beta.defined()) {
    throw std::invalid_argument("normalize_channels: gamma and beta must both be given or both omitted");
  }
  if (affine && (gamma.shape() != Shape{1, xs.c, 1, 1} || beta.shape() != Shape{1, xs.c, 1, 1})) {
    throw std::invalid_argument("normalize_channels: affine " + gamma.shape().str() + "/" +
                                beta.shape().str() + " does not fit input " + xs.str());
  }
  const std::size_t plane = xs.h * xs.w;
  const auto xv = x.values();
  const auto mv = mu.values();
  const auto sv = inv_scale.values();
  std::vector<T> v(xs.numel());
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T m = mv[ml.at(n, c, xs.c)];
      T k = sv[sl.at(n, c, xs.c)];
      T b = T(0);
      if (affine) {
        k *= gamma.values()[c];
        b = beta.values()[c];
      }
      const std::size_t base = (n * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) v[base + i] = (xv[base + i] - m) * k + b;
    }
  }
  std::vector<Tensor<T>> parents{x, mu, inv_scale};
  if (affine) {
    parents.push_back(gamma);
    parents.push_back(beta);
  }
  return make_result<T>(
      xs, std::move(v), std::move(parents), "normalize_channels",
      [xs, plane, ml, sl, affine](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pm = *self.parents[1];
        auto& ps = *self.parents[2];
        detail::Node<T>* pg = affine ? self.parents[3].get() : nullptr;
        detail::Node<T>* pb = affine ? self.parents[4].get() : nullptr;
        for (std::size_t n = 0; n < xs.n; ++n) {
          for (std::size_t c = 0; c < xs.c; ++c) {
            const std::size_t mi = ml.at(n, c, xs.c);
            const std::size_t si = sl.at(n, c, xs.c);
            const T m = pm.value[mi];
            const T inv = ps.value[si];
            const T g = affine ? pg->value[c] : T(1);
            const std::size_t base = (n * xs.c + c) * plane;
            double sum_dy = 0.0, sum_dy_centered = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
              const T dy = self.grad[base + i];
              sum_dy += static_cast<double>(dy);
              sum_dy_centered += static_cast<double>(dy) *
                                 static_cast<double>(px.value[base + i] - m);
              if (px.requires_grad) px.grad[base + i] += dy * inv * g;
            }
            if (pm.requires_grad) pm.grad[mi] -= static_cast<T>(sum_dy) * inv * g;
            if (ps.requires_grad) ps.grad[si] += static_cast<T>(sum_dy_centered) * g;
            if (pg != nullptr && pg->requires_grad) {
              pg->grad[c] += static_cast<T>(sum_dy_centered) * inv;
            }
            if (pb != nullptr && pb->requires_grad) pb->grad[c] += static_cast<T>(sum_dy);
          }
        }
      });
}

#define CONVNORM_INSTANTIATE(T)                                                        \
  template Tensor<T> channel_central_moment<T>(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> normalize_channels<T>(const Tensor<T>&, const Tensor<T>&,        \
                                           const Tensor<T>&, const Tensor<T>&,        \
                                           const Tensor<T>&);

CONVNORM_INSTANTIATE(float)
CONVNORM_INSTANTIATE(double)

#undef CONVNORM_INSTANTIATE

}  // namespace convnorm
