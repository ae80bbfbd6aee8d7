#include "convnorm/batch_norm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace convnorm {

template <typename T>
BatchNormState<T> BatchNormState<T>::create(std::size_t channels, T momentum,
                                            T eps) {
  if (channels == 0) throw std::invalid_argument("batch norm: zero channels");
  if (!(momentum > T(0) && momentum < T(1))) {
    throw std::invalid_argument("batch norm: momentum must lie in (0, 1)");
  }
  if (!(eps > T(0))) throw std::invalid_argument("batch norm: eps must be > 0");
  BatchNormState s;
  s.gamma = Tensor<T>(Shape{1, channels, 1, 1}, T(1), true);
  s.beta = Tensor<T>(Shape{1, channels, 1, 1}, T(0), true);
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

template <typename T>
ChannelMoments channel_moments(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.h * s.w;
  const double count = static_cast<double>(s.n * plane);
  const auto v = x.values();
  ChannelMoments m{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  for (std::size_t c = 0; c < s.c; ++c) {
    // Plane partials in T vectorize; the cross-plane total is kept in double.
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = v.data() + (n * s.c + c) * plane;
      T part = T(0);
      for (std::size_t i = 0; i < plane; ++i) part += p[i];
      acc += part;
    }
    const double mu = acc / count;
    const T mu_t = static_cast<T>(mu);
    double sq = 0.0;
    double shift = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = v.data() + (n * s.c + c) * plane;
      T part = T(0), lin = T(0);
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = p[i] - mu_t;
        part += d * d;
        lin += d;
      }
      sq += part;
      shift += lin;
    }
    // Corrects for mu_t differing from mu in its last bits.
    sq -= shift * shift / count;
    m.mean[c] = mu;
    m.var[c] = sq / count;
  }
  return m;
}

template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& x, BatchNormState<T>& s,
                             bool training) {
  const Shape xs = x.shape();
  if (xs.c != s.channels()) {
    throw std::invalid_argument("batch norm: input " + xs.str() + " has " +
                                std::to_string(xs.c) + " channels, state has " +
                                std::to_string(s.channels()));
  }
  const std::size_t channels = xs.c;
  const std::size_t plane = xs.h * xs.w;
  std::vector<T> mu(channels);
  std::vector<T> inv_std(channels);
  if (training) {
    const ChannelMoments m = channel_moments(x);
    s.batch_mean.resize(channels);
    s.batch_var.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = static_cast<T>(m.mean[c]);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(m.var[c] + static_cast<double>(s.eps)));
      s.batch_mean[c] = static_cast<T>(m.mean[c]);
      s.batch_var[c] = static_cast<T>(m.var[c]);
      s.running_mean[c] = (T(1) - s.momentum) * s.running_mean[c] + s.momentum * s.batch_mean[c];
      s.running_var[c] = (T(1) - s.momentum) * s.running_var[c] + s.momentum * s.batch_var[c];
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = s.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(s.running_var[c] + s.eps);
    }
  }

  const auto xv = x.values();
  const auto gv = s.gamma.values();
  const auto bv = s.beta.values();
  std::vector<T> xhat(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (xv[base + i] - mu[c]) * inv_std[c];
        xhat[base + i] = h;
        out[base + i] = gv[c] * h + bv[c];
      }
    }
  }

  return make_result<T>(
      xs, std::move(out), {x, s.gamma, s.beta}, "batch_norm",
      [xs, plane, training, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        const double count = static_cast<double>(xs.n * plane);
        for (std::size_t c = 0; c < xs.c; ++c) {
          double sum_g = 0.0;
          double sum_gh = 0.0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * xs.c + c) * plane;
            T part_g = T(0), part_gh = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
              part_g += g[base + i];
              part_gh += g[base + i] * xhat[base + i];
            }
            sum_g += part_g;
            sum_gh += part_gh;
          }
          if (pg.requires_grad) pg.grad[c] += static_cast<T>(sum_gh);
          if (pb.requires_grad) pb.grad[c] += static_cast<T>(sum_g);
          if (!px.requires_grad) continue;
          const T gamma = pg.value[c];
          const T k = gamma * inv_std[c];
          // d/dx of (x - mu) / sigma with mu, sigma depending on x.
          const T mean_g = training ? static_cast<T>(sum_g / count) : T(0);
          const T mean_gh = training ? static_cast<T>(sum_gh / count) : T(0);
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * xs.c + c) * plane;
            T* dx = px.grad.data() + base;
            const T* gy = g.data() + base;
            const T* h = xhat.data() + base;
            for (std::size_t i = 0; i < plane; ++i) {
              dx[i] += k * (gy[i] - mean_g - h[i] * mean_gh);
            }
          }
        }
      });
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;
template ChannelMoments channel_moments<float>(const Tensor<float>&);
template ChannelMoments channel_moments<double>(const Tensor<double>&);
template Tensor<float> batch_norm_forward<float>(const Tensor<float>&,
                                                 BatchNormState<float>&, bool);
template Tensor<double> batch_norm_forward<double>(const Tensor<double>&,
                                                   BatchNormState<double>&, bool);

}  // namespace convnorm
