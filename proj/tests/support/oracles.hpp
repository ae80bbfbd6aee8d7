#pragma once

// Independent reference computations. Every function here is a direct loop
// over the defining sums and shares no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <vector>

#include "convnorm/rng.hpp"
#include "convnorm/tensor.hpp"

namespace convnorm::oracle {

struct ConvCase {
  std::size_t n, c_in, h, w, c_out, k_h, k_w, s_h, s_w, p_h, p_w;
  std::size_t out_h() const { return (h + 2 * p_h - k_h) / s_h + 1; }
  std::size_t out_w() const { return (w + 2 * p_w - k_w) / s_w + 1; }
};

// Six nested loops over (n, o, y, x, c, ky, kx) with implicit zero padding.
inline std::vector<double> conv2d(const ConvCase& k, const std::vector<double>& x,
                                  const std::vector<double>& wt,
                                  const std::vector<double>& bias) {
  const std::size_t oh = k.out_h(), ow = k.out_w();
  std::vector<double> out(k.n * k.c_out * oh * ow, 0.0);
  for (std::size_t n = 0; n < k.n; ++n)
    for (std::size_t o = 0; o < k.c_out; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < k.c_in; ++c)
            for (std::size_t ky = 0; ky < k.k_h; ++ky)
              for (std::size_t kx = 0; kx < k.k_w; ++kx) {
                const long iy = static_cast<long>(y * k.s_h + ky) - static_cast<long>(k.p_h);
                const long ix = static_cast<long>(xo * k.s_w + kx) - static_cast<long>(k.p_w);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(k.h) ||
                    ix >= static_cast<long>(k.w)) {
                  continue;
                }
                acc += x[((n * k.c_in + c) * k.h + iy) * k.w + ix] *
                       wt[((o * k.c_in + c) * k.k_h + ky) * k.k_w + kx];
              }
          out[((n * k.c_out + o) * oh + y) * ow + xo] = acc;
        }
  return out;
}

struct FlatMoments {
  std::vector<double> mean, var;
};

// Per-channel mean and biased variance by flat summation over every
// (n, h, w) element.
template <typename T>
FlatMoments batch_moments(const Tensor<T>& x) {
  const Shape s = x.shape();
  FlatMoments m{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  const double count = static_cast<double>(s.n * s.h * s.w);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w) m.mean[c] += x.at(n, c, h, w);
    m.mean[c] /= count;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w) {
          const double d = x.at(n, c, h, w) - m.mean[c];
          m.var[c] += d * d;
        }
    m.var[c] /= count;
  }
  return m;
}

// gamma * (x - mean) / sqrt(var + eps) + beta with the flat moments above.
template <typename T>
std::vector<double> batch_norm(const Tensor<T>& x, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps) {
  const FlatMoments m = batch_moments(x);
  const Shape s = x.shape();
  std::vector<double> out(s.numel());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t h = 0; h < s.h; ++h)
        for (std::size_t w = 0; w < s.w; ++w)
          out[s.index(n, c, h, w)] =
              gamma[c] * (x.at(n, c, h, w) - m.mean[c]) / std::sqrt(m.var[c] + eps) + beta[c];
  return out;
}

// The 4x4 two-stage example written out term by term: the first stage kernel
// p (2x2) produces A1..A4 from the four 2x2 blocks, the second kernel q
// (2x2) combines them: sum_ab q_ab * (sum_ij p_ij x_ij over block ab).
inline double two_stage_closed_form(const double x[4][4], const double p[2][2],
                                    const double q[2][2]) {
  const double a1 = p[0][0] * x[0][0] + p[0][1] * x[0][1] + p[1][0] * x[1][0] + p[1][1] * x[1][1];
  const double a2 = p[0][0] * x[0][2] + p[0][1] * x[0][3] + p[1][0] * x[1][2] + p[1][1] * x[1][3];
  const double a3 = p[0][0] * x[2][0] + p[0][1] * x[2][1] + p[1][0] * x[3][0] + p[1][1] * x[3][1];
  const double a4 = p[0][0] * x[2][2] + p[0][1] * x[2][3] + p[1][0] * x[3][2] + p[1][1] * x[3][3];
  return q[0][0] * a1 + q[0][1] * a2 + q[1][0] * a3 + q[1][1] * a4;
}

// Smallest m >= n whose prime factors are all <= 5, by brute search.
inline std::size_t smooth_ceiling(std::size_t n) {
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t f : {2u, 3u, 5u}) {
      while (r % f == 0) r /= f;
    }
    if (r == 1) return m;
  }
}

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  Tensor<T> t(s, T(0), requires_grad);
  for (auto& v : t.mutable_values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace convnorm::oracle
