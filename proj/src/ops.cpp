#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "convnorm/ops.hpp"

namespace convnorm {

namespace {

struct Strides {
  std::size_t n, c, h, w;
};

// Element strides of `s` when iterated over `out`; broadcast extents get 0.
Strides broadcast_strides(const Shape& s, const Shape& out) {
  const std::size_t sw = 1, sh = s.w, sc = s.h * s.w, sn = s.c * s.h * s.w;
  return {s.n == out.n ? sn : 0, s.c == out.c ? sc : 0, s.h == out.h ? sh : 0,
          s.w == out.w ? sw : 0};
}

std::size_t broadcast_extent(std::size_t a, std::size_t b, const Shape& sa,
                             const Shape& sb, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw std::invalid_argument(std::string(op) + ": cannot broadcast " +
                              sa.str() + " with " + sb.str());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  return {broadcast_extent(a.n, b.n, a, b, op),
          broadcast_extent(a.c, b.c, a, b, op),
          broadcast_extent(a.h, b.h, a, b, op),
          broadcast_extent(a.w, b.w, a, b, op)};
}

// f(out_index, a_index, b_index) for every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, Strides sa, Strides sb, F&& f) {
  std::size_t o = 0;
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t c = 0; c < out.c; ++c) {
      for (std::size_t h = 0; h < out.h; ++h) {
        std::size_t ia = n * sa.n + c * sa.c + h * sa.h;
        std::size_t ib = n * sb.n + c * sb.c + h * sb.h;
        for (std::size_t w = 0; w < out.w; ++w, ++o) {
          f(o, ia + w * sa.w, ib + w * sb.w);
        }
      }
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind,
                 const char* name) {
  const Shape out = broadcast_shape(a.shape(), b.shape(), name);
  const Strides sa = broadcast_strides(a.shape(), out);
  const Strides sb = broadcast_strides(b.shape(), out);
  std::vector<T> v(out.numel());
  const auto av = a.values();
  const auto bv = b.values();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i,
                                          std::size_t j) { v[o] = av[i] + bv[j]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i,
                                          std::size_t j) { v[o] = av[i] - bv[j]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i,
                                          std::size_t j) { v[o] = av[i] * bv[j]; });
      break;
    case BinaryKind::kDiv:
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i,
                                          std::size_t j) { v[o] = av[i] / bv[j]; });
      break;
  }
  return make_result<T>(
      out, std::move(v), {a, b}, name,
      [out, sa, sb, kind](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        const bool ga = pa.requires_grad;
        const bool gb = pb.requires_grad;
        for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t i,
                                            std::size_t j) {
          const T go = g[o];
          switch (kind) {
            case BinaryKind::kAdd:
              if (ga) pa.grad[i] += go;
              if (gb) pb.grad[j] += go;
              break;
            case BinaryKind::kSub:
              if (ga) pa.grad[i] += go;
              if (gb) pb.grad[j] -= go;
              break;
            case BinaryKind::kMul:
              if (ga) pa.grad[i] += go * pb.value[j];
              if (gb) pb.grad[j] += go * pa.value[i];
              break;
            case BinaryKind::kDiv: {
              const T inv = T(1) / pb.value[j];
              if (ga) pa.grad[i] += go * inv;
              if (gb) pb.grad[j] -= go * pa.value[i] * inv * inv;
              break;
            }
          }
        });
      });
}

// y = f(x) elementwise with dy/dx = d(x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, const char* name, F f, D d) {
  const auto xv = x.values();
  std::vector<T> v(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) v[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(v), {x}, name,
                        [d](detail::Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            p.grad[i] += self.grad[i] * d(p.value[i], self.value[i]);
                          }
                        });
}

Shape reduced_shape(const Shape& s, AxisSet axes) {
  return {(axes & kAxisBatch) ? 1 : s.n, (axes & kAxisChannel) ? 1 : s.c,
          (axes & kAxisHeight) ? 1 : s.h, (axes & kAxisWidth) ? 1 : s.w};
}

template <typename T>
Tensor<T> mean_impl(const Tensor<T>& x, AxisSet axes, const char* name) {
  const Shape in = x.shape();
  const Shape out = reduced_shape(in, axes);
  const Strides so = broadcast_strides(out, in);
  const Strides si = broadcast_strides(in, in);
  const double count = static_cast<double>(in.numel() / out.numel());
  std::vector<double> acc(out.numel(), 0.0);
  const auto xv = x.values();
  for_each_broadcast(in, si, so, [&](std::size_t, std::size_t i, std::size_t o) {
    acc[o] += static_cast<double>(xv[i]);
  });
  std::vector<T> v(out.numel());
  for (std::size_t o = 0; o < v.size(); ++o) v[o] = static_cast<T>(acc[o] / count);
  return make_result<T>(out, std::move(v), {x}, name,
                        [in, si, so, count](detail::Node<T>& self) {
                          auto& p = *self.parents[0];
                          const T inv = static_cast<T>(1.0 / count);
                          for_each_broadcast(in, si, so, [&](std::size_t, std::size_t i,
                                                             std::size_t o) {
                            p.grad[i] += self.grad[o] * inv;
                          });
                        });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kDiv, "div");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, "add_scalar", [s](T v) { return v + s; },
               [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, "relu", [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary(x, "square", [](T v) { return v * v; },
               [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x) {
  return unary(x, "rsqrt", [](T v) { return T(1) / std::sqrt(v); },
               [](T, T y) { return T(-0.5) * y * y * y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(
      x, "softplus",
      [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) {
        // logistic sigmoid, stable for both signs
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.values()) acc += static_cast<double>(v);
  return make_result<T>(Shape{}, {static_cast<T>(acc)}, {x}, "sum",
                        [](detail::Node<T>& self) {
                          auto& p = *self.parents[0];
                          const T g = self.grad[0];
                          for (auto& pg : p.grad) pg += g;
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, AxisSet axes) {
  return mean_impl(x, axes, "mean");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return mean_impl(x, kAxisHeight | kAxisWidth, "global_avg_pool");
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t window_h,
                   std::size_t window_w, std::size_t stride_h,
                   std::size_t stride_w) {
  const Shape in = x.shape();
  if (window_h == 0 || window_w == 0 || stride_h == 0 || stride_w == 0) {
    throw std::invalid_argument("avg_pool: window and stride must be >= 1");
  }
  if (window_h > in.h || window_w > in.w) {
    throw std::invalid_argument("avg_pool: window (" + std::to_string(window_h) +
                                ", " + std::to_string(window_w) +
                                ") larger than input " + in.str());
  }
  const Shape out{in.n, in.c, (in.h - window_h) / stride_h + 1,
                  (in.w - window_w) / stride_w + 1};
  const T inv = T(1) / static_cast<T>(window_h * window_w);
  const auto xv = x.values();
  std::vector<T> v(out.numel());
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t oh = 0; oh < out.h; ++oh) {
        for (std::size_t ow = 0; ow < out.w; ++ow) {
          T acc = 0;
          for (std::size_t kh = 0; kh < window_h; ++kh) {
            for (std::size_t kw = 0; kw < window_w; ++kw) {
              acc += xv[in.index(n, c, oh * stride_h + kh, ow * stride_w + kw)];
            }
          }
          v[out.index(n, c, oh, ow)] = acc * inv;
        }
      }
    }
  }
  return make_result<T>(
      out, std::move(v), {x}, "avg_pool",
      [in, out, window_h, window_w, stride_h, stride_w, inv](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        for (std::size_t n = 0; n < in.n; ++n) {
          for (std::size_t c = 0; c < in.c; ++c) {
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              for (std::size_t ow = 0; ow < out.w; ++ow) {
                const T g = self.grad[out.index(n, c, oh, ow)] * inv;
                for (std::size_t kh = 0; kh < window_h; ++kh) {
                  for (std::size_t kw = 0; kw < window_w; ++kw) {
                    p.grad[in.index(n, c, oh * stride_h + kh, ow * stride_w + kw)] += g;
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  const std::size_t plane = s.h * s.w;
  const auto xv = logits.values();
  std::vector<T> v(s.numel());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = n * s.c * plane + p;
      T mx = xv[base];
      for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, xv[base + c * plane]);
      T total = 0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const T e = std::exp(xv[base + c * plane] - mx);
        v[base + c * plane] = e;
        total += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) v[base + c * plane] /= total;
    }
  }
  return make_result<T>(s, std::move(v), {logits}, "softmax",
                        [s, plane](detail::Node<T>& self) {
                          auto& p = *self.parents[0];
                          const auto& y = self.value;
                          const auto& g = self.grad;
                          for (std::size_t n = 0; n < s.n; ++n) {
                            for (std::size_t q = 0; q < plane; ++q) {
                              const std::size_t base = n * s.c * plane + q;
                              T dot = 0;
                              for (std::size_t c = 0; c < s.c; ++c) {
                                dot += g[base + c * plane] * y[base + c * plane];
                              }
                              for (std::size_t c = 0; c < s.c; ++c) {
                                const std::size_t i = base + c * plane;
                                p.grad[i] += y[i] * (g[i] - dot);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot) {
  const Shape s = probs.shape();
  if (!(onehot.shape() == s)) {
    throw std::invalid_argument("cross_entropy: probabilities " + s.str() +
                                " vs one-hot " + onehot.shape().str());
  }
  const std::size_t plane = s.h * s.w;
  const std::size_t rows = s.n * plane;
  const auto pv = probs.values();
  const auto cv = onehot.values();
  const T floor = static_cast<T>(kLogFloor);
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < plane; ++q) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t i = (n * s.c + c) * plane + q;
        row_sum += cv[i];
        if (cv[i] != T(0)) {
          total -= static_cast<double>(cv[i]) *
                   std::log(static_cast<double>(std::max(pv[i], floor)));
        }
      }
      if (std::abs(row_sum - 1.0) > 1e-6) {
        throw std::invalid_argument("cross_entropy: one-hot row " +
                                    std::to_string(n) + " sums to " +
                                    std::to_string(row_sum));
      }
    }
  }
  const T loss = static_cast<T>(total / static_cast<double>(rows));
  Tensor<T> target = onehot.detach();
  return make_result<T>(
      Shape{}, {loss}, {probs}, "cross_entropy",
      [target, rows, floor](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        const auto cv = target.values();
        const T g = self.grad[0] / static_cast<T>(rows);
        for (std::size_t i = 0; i < p.grad.size(); ++i) {
          if (cv[i] != T(0) && p.value[i] > floor) {
            p.grad[i] -= g * cv[i] / p.value[i];
          }
        }
      });
}

template <typename T>
Tensor<T> zero_pad(const Tensor<T>& x, Padding pad) {
  const Shape in = x.shape();
  if (pad.top == 0 && pad.bottom == 0 && pad.left == 0 && pad.right == 0) {
    return x;
  }
  const Shape out{in.n, in.c, in.h + pad.top + pad.bottom,
                  in.w + pad.left + pad.right};
  const auto xv = x.values();
  std::vector<T> v(out.numel(), T(0));
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t h = 0; h < in.h; ++h) {
        std::copy_n(xv.begin() + in.index(n, c, h, 0), in.w,
                    v.begin() + out.index(n, c, h + pad.top, pad.left));
      }
    }
  }
  return make_result<T>(out, std::move(v), {x}, "zero_pad",
                        [in, out, pad](detail::Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t n = 0; n < in.n; ++n) {
                            for (std::size_t c = 0; c < in.c; ++c) {
                              for (std::size_t h = 0; h < in.h; ++h) {
                                const T* g = &self.grad[out.index(n, c, h + pad.top, pad.left)];
                                T* d = &p.grad[in.index(n, c, h, 0)];
                                for (std::size_t w = 0; w < in.w; ++w) d[w] += g[w];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw std::invalid_argument("reshape: " + x.shape().str() + " to " +
                                shape.str() + " changes the element count");
  }
  std::vector<T> v(x.values().begin(), x.values().end());
  return make_result<T>(shape, std::move(v), {x}, "reshape",
                        [](detail::Node<T>& self) {
                          auto& p = *self.parents[0];
                          for (std::size_t i = 0; i < self.grad.size(); ++i) {
                            p.grad[i] += self.grad[i];
                          }
                        });
}

#define CONVNORM_INSTANTIATE(T)                                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                      \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                               \
  template Tensor<T> square<T>(const Tensor<T>&);                             \
  template Tensor<T> rsqrt<T>(const Tensor<T>&);                              \
  template Tensor<T> softplus<T>(const Tensor<T>&);                           \
  template Tensor<T> sum<T>(const Tensor<T>&);                                \
  template Tensor<T> mean<T>(const Tensor<T>&, AxisSet);                      \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                    \
  template Tensor<T> avg_pool<T>(const Tensor<T>&, std::size_t, std::size_t, \
                                 std::size_t, std::size_t);                   \
  template Tensor<T> softmax<T>(const Tensor<T>&);                            \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> zero_pad<T>(const Tensor<T>&, Padding);                  \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);

CONVNORM_INSTANTIATE(float)
CONVNORM_INSTANTIATE(double)

#undef CONVNORM_INSTANTIATE

}  // namespace convnorm
