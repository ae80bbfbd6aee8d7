#include <Eigen/Core>

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "convnorm/ops.hpp"

namespace convnorm {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t c_in, h, w;
  std::size_t k_h, k_w;
  std::size_t out_h, out_w;
  Conv2dOptions opt;

  std::size_t rows() const { return c_in * k_h * k_w; }
  std::size_t cols() const { return out_h * out_w; }
  bool is_pointwise() const {
    return k_h == 1 && k_w == 1 && opt.stride_h == 1 && opt.stride_w == 1 &&
           opt.pad_h == 0 && opt.pad_w == 0;
  }
};

// Output columns [lo, hi) whose input column ow * stride + kw - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kw) {
  const long s = static_cast<long>(g.opt.stride_w);
  const long off = static_cast<long>(kw) - static_cast<long>(g.opt.pad_w);
  const long w = static_cast<long>(g.w);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (w - off + s - 1) / s;  // first ow with iw >= w
  lo = std::min<long>(lo, static_cast<long>(g.out_w));
  hi = std::clamp<long>(hi, lo, static_cast<long>(g.out_w));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols is (c_in*k_h*k_w) x (out_h*out_w), row-major.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.cols();
  const std::size_t sw = g.opt.stride_w;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t kh = 0; kh < g.k_h; ++kh) {
      for (std::size_t kw = 0; kw < g.k_w; ++kw) {
        T* row = cols + ((c * g.k_h + kh) * g.k_w + kw) * plane;
        const auto [lo, hi] = valid_columns(g, kw);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.opt.stride_h + kh) -
                          static_cast<long>(g.opt.pad_h);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          // Output column ow reads input column ow * sw + kw - pad_w.
          const T* src = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          const std::size_t first = lo * sw + kw - g.opt.pad_w;
          std::fill(dst, dst + lo, T(0));
          if (sw == 1) {
            std::copy(src + first, src + first + (hi - lo), dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[first + (ow - lo) * sw];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t plane = g.cols();
  const std::size_t sw = g.opt.stride_w;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t kh = 0; kh < g.k_h; ++kh) {
      for (std::size_t kw = 0; kw < g.k_w; ++kw) {
        const T* row = cols + ((c * g.k_h + kh) * g.k_w + kw) * plane;
        const auto [lo, hi] = valid_columns(g, kw);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.opt.stride_h + kh) -
                          static_cast<long>(g.opt.pad_h);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(ih)) * g.w;
          const std::size_t first = lo * sw + kw - g.opt.pad_w;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[first + (ow - lo) * sw] += src[ow];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw std::invalid_argument("conv2d: input " + xs.str() + " has " +
                                std::to_string(xs.c) + " channels but kernel " +
                                ws.str() + " expects " + std::to_string(ws.c));
  }
  if (opt.stride_h == 0 || opt.stride_w == 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1");
  }
  if (xs.h + 2 * opt.pad_h < ws.h || xs.w + 2 * opt.pad_w < ws.w) {
    throw std::invalid_argument("conv2d: kernel " + ws.str() +
                                " does not fit padded input " + xs.str());
  }
  if (bias.defined() && !(bias.shape() == Shape{1, ws.n, 1, 1})) {
    throw std::invalid_argument("conv2d: bias " + bias.shape().str() +
                                " does not match kernel " + ws.str());
  }
  const ConvGeometry g{xs.c,
                       xs.h,
                       xs.w,
                       ws.h,
                       ws.w,
                       (xs.h + 2 * opt.pad_h - ws.h) / opt.stride_h + 1,
                       (xs.w + 2 * opt.pad_w - ws.w) / opt.stride_w + 1,
                       opt};
  const std::size_t c_out = ws.n;
  const Shape out{xs.n, c_out, g.out_h, g.out_w};
  const std::size_t in_plane = xs.c * xs.h * xs.w;
  const std::size_t out_plane = c_out * g.cols();

  std::vector<T> v(out.numel());
  std::vector<T> cols(g.is_pointwise() ? 0 : g.rows() * g.cols());
  ConstMatMap<T> wm(weight.values().data(), c_out, g.rows());
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* img = x.values().data() + n * in_plane;
    if (!g.is_pointwise()) im2col(img, g, cols.data());
    ConstMatMap<T> cm(g.is_pointwise() ? img : cols.data(), g.rows(), g.cols());
    MatMap<T> om(v.data() + n * out_plane, c_out, g.cols());
    om.noalias() = wm * cm;
    if (bias.defined()) {
      const auto bv = bias.values();
      for (std::size_t c = 0; c < c_out; ++c) om.row(c).array() += bv[c];
    }
  }

  std::vector<Tensor<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(
      out, std::move(v), std::move(parents), "conv2d",
      [g, c_out, in_plane, out_plane, n_batch = xs.n](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        detail::Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        ConstMatMap<T> wm(pw.value.data(), c_out, g.rows());
        std::vector<T> cols(g.rows() * g.cols());
        for (std::size_t n = 0; n < n_batch; ++n) {
          ConstMatMap<T> gm(self.grad.data() + n * out_plane, c_out, g.cols());
          const T* img = px.value.data() + n * in_plane;
          if (pw.requires_grad) {
            MatMap<T> gw(pw.grad.data(), c_out, g.rows());
            if (g.is_pointwise()) {
              gw.noalias() += gm * ConstMatMap<T>(img, g.rows(), g.cols()).transpose();
            } else {
              im2col(img, g, cols.data());
              gw.noalias() += gm * ConstMatMap<T>(cols.data(), g.rows(), g.cols()).transpose();
            }
          }
          if (pb != nullptr && pb->requires_grad) {
            // Plain loop: Eigen's vectorized sum() peels by address, so its
            // rounding would vary with allocation alignment.
            for (std::size_t c = 0; c < c_out; ++c) {
              const T* row = gm.data() + c * g.cols();
              T acc = T(0);
              for (std::size_t i = 0; i < g.cols(); ++i) acc += row[i];
              pb->grad[c] += acc;
            }
          }
          if (px.requires_grad) {
            T* gx = px.grad.data() + n * in_plane;
            if (g.is_pointwise()) {
              MatMap<T>(gx, g.rows(), g.cols()).noalias() += wm.transpose() * gm;
            } else {
              MatMap<T> cm(cols.data(), g.rows(), g.cols());
              cm.noalias() = wm.transpose() * gm;
              col2im_add(cols.data(), g, gx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                           std::size_t stride_h, std::size_t stride_w) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c || ws.c != 1) {
    throw std::invalid_argument("depthwise_conv2d: input " + xs.str() +
                                " needs a (" + std::to_string(xs.c) +
                                ", 1, k_h, k_w) kernel, got " + ws.str());
  }
  if (stride_h == 0 || stride_w == 0) {
    throw std::invalid_argument("depthwise_conv2d: stride must be >= 1");
  }
  if (ws.h > xs.h || ws.w > xs.w) {
    throw std::invalid_argument("depthwise_conv2d: kernel " + ws.str() +
                                " larger than input " + xs.str());
  }
  const Shape out{xs.n, xs.c, (xs.h - ws.h) / stride_h + 1,
                  (xs.w - ws.w) / stride_w + 1};
  const auto xv = x.values();
  const auto kv = weight.values();
  std::vector<T> v(out.numel());
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* k = kv.data() + c * ws.h * ws.w;
      for (std::size_t oh = 0; oh < out.h; ++oh) {
        for (std::size_t ow = 0; ow < out.w; ++ow) {
          T acc = 0;
          for (std::size_t kh = 0; kh < ws.h; ++kh) {
            const T* row = xv.data() + xs.index(n, c, oh * stride_h + kh, ow * stride_w);
            for (std::size_t kw = 0; kw < ws.w; ++kw) acc += k[kh * ws.w + kw] * row[kw];
          }
          v[out.index(n, c, oh, ow)] = acc;
        }
      }
    }
  }
  return make_result<T>(
      out, std::move(v), {x, weight}, "depthwise_conv2d",
      [xs, ws, out, stride_h, stride_w](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        for (std::size_t n = 0; n < xs.n; ++n) {
          for (std::size_t c = 0; c < xs.c; ++c) {
            const std::size_t kbase = c * ws.h * ws.w;
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              for (std::size_t ow = 0; ow < out.w; ++ow) {
                const T g = self.grad[out.index(n, c, oh, ow)];
                for (std::size_t kh = 0; kh < ws.h; ++kh) {
                  const std::size_t xi = xs.index(n, c, oh * stride_h + kh, ow * stride_w);
                  for (std::size_t kw = 0; kw < ws.w; ++kw) {
                    if (pk.requires_grad) pk.grad[kbase + kh * ws.w + kw] += g * px.value[xi + kw];
                    if (px.requires_grad) px.grad[xi + kw] += g * pk.value[kbase + kh * ws.w + kw];
                  }
                }
              }
            }
          }
        }
      });
}

#define CONVNORM_INSTANTIATE(T)                                                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,              \
                               const Tensor<T>&, Conv2dOptions);                \
  template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Tensor<T>&,    \
                                         std::size_t, std::size_t);

CONVNORM_INSTANTIATE(float)
CONVNORM_INSTANTIATE(double)

#undef CONVNORM_INSTANTIATE

}  // namespace convnorm
