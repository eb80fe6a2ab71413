#pragma once

// Differentiable operators. Activations are NHWC; vectors are (n, 1, 1, c).
// Parameter layouts:
//   conv / transposed conv weight  (kh, kw, in_channels, out_channels)
//   dense weight                   (1, 1, in_features, out_features)
//   bias                           (1, 1, 1, out)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hnet/autodiff.hpp"
#include "hnet/errors.hpp"
#include "hnet/tensor.hpp"

namespace hnet::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <class T>
using CMapRow = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <class T>
using MapRow = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

// Patch matrix of one sample for a stride-1 "same" convolution:
// row = output pixel (y, x); column = (ky, kx, ci).
template <class T>
void im2col_same(const T* img, std::size_t h, std::size_t w, std::size_t c, std::size_t kh, std::size_t kw,
                 T* col) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::size_t row_len = kh * kw * c;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      T* dst = col + (y * w + x) * row_len;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - ph;
        T* seg = dst + ky * kw * c;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
          std::fill_n(seg, kw * c, T{0});
          continue;
        }
        const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(x) - pw;
        if (ix0 >= 0 && ix0 + static_cast<std::ptrdiff_t>(kw) <= static_cast<std::ptrdiff_t>(w)) {
          std::copy_n(img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix0)) * c, kw * c, seg);
          continue;
        }
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
            std::fill_n(seg + kx * c, c, T{0});
          else
            std::copy_n(img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c, c, seg + kx * c);
        }
      }
    }
  }
}

// Adjoint of im2col_same: scatter-add patch rows back into the image gradient.
template <class T>
void col2im_same(const T* col, std::size_t h, std::size_t w, std::size_t c, std::size_t kh, std::size_t kw,
                 T* img) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::size_t row_len = kh * kw * c;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const T* src = col + (y * w + x) * row_len;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - ph;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x + kx) - pw;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          T* dst = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
          const T* s = src + (ky * kw + kx) * c;
          for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += s[ci];
        }
      }
    }
  }
}

inline void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

template <class T>
void check_bias(const Tensor<T>& b, std::size_t out, const char* op) {
  require(b.shape() == vector_shape(1, out), op, "bias shape " + b.shape().str() + " expected (1,1,1," +
                                                     std::to_string(out) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions (small building blocks, mostly for tests/losses).

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.shape() == vb.shape(), "add", va.shape().str() + " vs " + vb.shape().str());
  Tensor<T> out = va;
  out += vb;
  return g.record("add", std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    if (gr.requires_grad(a.id)) gr.grad(a.id) += go;
    if (gr.requires_grad(b.id)) gr.grad(b.id) += go;
  });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  detail::require(va.shape() == vb.shape(), "mul", va.shape().str() + " vs " + vb.shape().str());
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return g.record("mul", std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    const auto& xa = gr.value(a);
    const auto& xb = gr.value(b);
    if (gr.requires_grad(a.id)) {
      auto& ga = gr.grad(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * xb[i];
    }
    if (gr.requires_grad(b.id)) {
      auto& gb = gr.grad(b.id);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * xa[i];
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T k) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v *= k;
  return g.record("scale", std::move(out), {a.id}, [a, k](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    auto& ga = gr.grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += k * go[i];
  });
}

template <class T>
Var square(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v *= v;
  return g.record("square", std::move(out), {a.id}, [a](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    const auto& x = gr.value(a);
    auto& ga = gr.grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += T{2} * x[i] * go[i];
  });
}

/// Sum of all elements -> scalar.
template <class T>
Var sum(Graph<T>& g, Var a) {
  T s{0};
  for (T v : g.value(a).data()) s += v;
  return g.record("sum", Tensor<T>::scalar(s), {a.id}, [a](Graph<T>& gr, std::size_t self) {
    const T go = gr.grad(self)[0];
    for (auto& v : gr.grad(a.id).data()) v += go;
  });
}

/// Mean of all elements -> scalar.
template <class T>
Var mean(Graph<T>& g, Var a) {
  const auto& x = g.value(a);
  T s{0};
  for (T v : x.data()) s += v;
  const T inv = T{1} / static_cast<T>(x.size());
  return g.record("mean", Tensor<T>::scalar(s * inv), {a.id}, [a, inv](Graph<T>& gr, std::size_t self) {
    const T go = gr.grad(self)[0] * inv;
    for (auto& v : gr.grad(a.id).data()) v += go;
  });
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
Var relu(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = v < T{0} ? T{0} : v;  // NaN passes through
  return g.record("relu", std::move(out), {a.id}, [a](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    const auto& y = gr.value(self);
    auto& ga = gr.grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (y[i] > T{0}) ga[i] += go[i];
  });
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
Var sigmoid(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.data()) v = sigmoid_scalar(v);
  return g.record("sigmoid", std::move(out), {a.id}, [a](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    const auto& y = gr.value(self);
    auto& ga = gr.grad(a.id);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i] * (T{1} - y[i]);
  });
}

// ---------------------------------------------------------------------------
// Convolutions

/// Stride-1 cross-correlation with zero "same" padding; odd kernels only.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b) {
  using namespace detail;
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  const Shape xs = vx.shape();
  const std::size_t kh = vw.shape().n, kw = vw.shape().h, cin = vw.shape().w, cout = vw.shape().c;
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d", "kernel must be odd, got " + vw.shape().str());
  require(cin == xs.c, "conv2d",
          "input has " + std::to_string(xs.c) + " channels, kernel expects " + std::to_string(cin));
  check_bias(g.value(b), cout, "conv2d");

  const std::size_t hw = xs.h * xs.w, k = kh * kw * cin;
  Tensor<T> out({xs.n, xs.h, xs.w, cout});
  AlignedVector<T> col(hw * k);
  CMapMat<T> wm(vw.ptr(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cout));
  CMapRow<T> bias(g.value(b).ptr(), static_cast<Eigen::Index>(cout));
  for (std::size_t n = 0; n < xs.n; ++n) {
    im2col_same(vx.ptr() + n * hw * cin, xs.h, xs.w, cin, kh, kw, col.data());
    CMapMat<T> cm(col.data(), static_cast<Eigen::Index>(hw), static_cast<Eigen::Index>(k));
    MapMat<T> om(out.ptr() + n * hw * cout, static_cast<Eigen::Index>(hw), static_cast<Eigen::Index>(cout));
    om.noalias() = cm * wm;
    om.rowwise() += bias;
  }

  return g.record("conv2d", std::move(out), {x.id, w.id, b.id}, [x, w, b](Graph<T>& gr, std::size_t self) {
    const auto& vx = gr.value(x);
    const auto& vw = gr.value(w);
    const auto& go = gr.grad(self);
    const Shape xs = vx.shape();
    const std::size_t kh = vw.shape().n, kw = vw.shape().h, cin = vw.shape().w, cout = vw.shape().c;
    const std::size_t hw = xs.h * xs.w, k = kh * kw * cin;
    const auto K = static_cast<Eigen::Index>(k), C = static_cast<Eigen::Index>(cout),
               HW = static_cast<Eigen::Index>(hw);
    const bool need_x = gr.requires_grad(x.id), need_w = gr.requires_grad(w.id), need_b = gr.requires_grad(b.id);
    AlignedVector<T> col(hw * k);
    RowMat<T> dw;
    if (need_w) dw = RowMat<T>::Zero(K, C);
    CMapMat<T> wm(vw.ptr(), K, C);
    for (std::size_t n = 0; n < xs.n; ++n) {
      CMapMat<T> gm(go.ptr() + n * hw * cout, HW, C);
      if (need_w) {
        im2col_same(vx.ptr() + n * hw * cin, xs.h, xs.w, cin, kh, kw, col.data());
        CMapMat<T> cm(col.data(), HW, K);
        dw.noalias() += cm.transpose() * gm;
      }
      if (need_b) {
        MapRow<T> gb(gr.grad(b.id).ptr(), C);
        gb += gm.colwise().sum();
      }
      if (need_x) {
        MapMat<T> dc(col.data(), HW, K);
        dc.noalias() = gm * wm.transpose();
        col2im_same(col.data(), xs.h, xs.w, cin, kh, kw, gr.grad(x.id).ptr() + n * hw * cin);
      }
    }
    if (need_w) {
      MapMat<T> gw(gr.grad(w.id).ptr(), K, C);
      gw += dw;
    }
  });
}

/// Stride-2 transposed convolution with padding (k-1)/2 and output padding 1,
/// so the output is exactly (2h, 2w). Input pixel (iy, ix) contributes through
/// kernel tap (ky, kx) to output pixel (2*iy - p + ky, 2*ix - p + kx).
template <class T>
Var conv_transpose2d(Graph<T>& g, Var x, Var w, Var b) {
  using namespace detail;
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  const Shape xs = vx.shape();
  const std::size_t kh = vw.shape().n, kw = vw.shape().h, cin = vw.shape().w, cout = vw.shape().c;
  require(kh % 2 == 1 && kw % 2 == 1, "conv_transpose2d", "kernel must be odd, got " + vw.shape().str());
  require(cin == xs.c, "conv_transpose2d",
          "input has " + std::to_string(xs.c) + " channels, kernel expects " + std::to_string(cin));
  check_bias(g.value(b), cout, "conv_transpose2d");

  // Kernel rearranged to (cin) x (ky, kx, co).
  auto packed = std::make_shared<RowMat<T>>(static_cast<Eigen::Index>(cin),
                                            static_cast<Eigen::Index>(kh * kw * cout));
  for (std::size_t t = 0; t < kh * kw; ++t)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t co = 0; co < cout; ++co)
        (*packed)(static_cast<Eigen::Index>(ci), static_cast<Eigen::Index>(t * cout + co)) =
            vw[(t * cin + ci) * cout + co];

  const std::size_t oh = 2 * xs.h, ow = 2 * xs.w, hw = xs.h * xs.w, taps = kh * kw * cout;
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  Tensor<T> out({xs.n, oh, ow, cout});
  RowMat<T> cols(static_cast<Eigen::Index>(hw), static_cast<Eigen::Index>(taps));
  const T* bias = g.value(b).ptr();
  for (std::size_t n = 0; n < xs.n; ++n) {
    CMapMat<T> xm(vx.ptr() + n * hw * cin, static_cast<Eigen::Index>(hw), static_cast<Eigen::Index>(cin));
    cols.noalias() = xm * (*packed);
    T* o = out.ptr() + n * oh * ow * cout;
    for (std::size_t iy = 0; iy < xs.h; ++iy)
      for (std::size_t ix = 0; ix < xs.w; ++ix) {
        const T* src = cols.data() + (iy * xs.w + ix) * taps;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t oy = 2 * static_cast<std::ptrdiff_t>(iy) - ph + static_cast<std::ptrdiff_t>(ky);
          if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ox = 2 * static_cast<std::ptrdiff_t>(ix) - pw + static_cast<std::ptrdiff_t>(kx);
            if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow)) continue;
            T* dst = o + (static_cast<std::size_t>(oy) * ow + static_cast<std::size_t>(ox)) * cout;
            const T* s = src + (ky * kw + kx) * cout;
            for (std::size_t co = 0; co < cout; ++co) dst[co] += s[co];
          }
        }
      }
    for (std::size_t p = 0; p < oh * ow; ++p)
      for (std::size_t co = 0; co < cout; ++co) o[p * cout + co] += bias[co];
  }

  return g.record("conv_transpose2d", std::move(out), {x.id, w.id, b.id},
                  [x, w, b, packed](Graph<T>& gr, std::size_t self) {
    const auto& vx = gr.value(x);
    const auto& vw = gr.value(w);
    const auto& go = gr.grad(self);
    const Shape xs = vx.shape();
    const std::size_t kh = vw.shape().n, kw = vw.shape().h, cin = vw.shape().w, cout = vw.shape().c;
    const std::size_t oh = 2 * xs.h, ow = 2 * xs.w, hw = xs.h * xs.w, taps = kh * kw * cout;
    const auto ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
    const bool need_x = gr.requires_grad(x.id), need_w = gr.requires_grad(w.id), need_b = gr.requires_grad(b.id);
    RowMat<T> gcols(static_cast<Eigen::Index>(hw), static_cast<Eigen::Index>(taps));
    RowMat<T> dpacked;
    if (need_w) dpacked = RowMat<T>::Zero(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(taps));
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* gsrc = go.ptr() + n * oh * ow * cout;
      if (need_b) {
        T* gb = gr.grad(b.id).ptr();
        for (std::size_t p = 0; p < oh * ow; ++p)
          for (std::size_t co = 0; co < cout; ++co) gb[co] += gsrc[p * cout + co];
      }
      if (!need_x && !need_w) continue;
      for (std::size_t iy = 0; iy < xs.h; ++iy)
        for (std::size_t ix = 0; ix < xs.w; ++ix) {
          T* dst = gcols.data() + (iy * xs.w + ix) * taps;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t oy = 2 * static_cast<std::ptrdiff_t>(iy) - ph + static_cast<std::ptrdiff_t>(ky);
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ox = 2 * static_cast<std::ptrdiff_t>(ix) - pw + static_cast<std::ptrdiff_t>(kx);
              T* d = dst + (ky * kw + kx) * cout;
              if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(oh) || ox < 0 || ox >= static_cast<std::ptrdiff_t>(ow))
                std::fill_n(d, cout, T{0});
              else
                std::copy_n(gsrc + (static_cast<std::size_t>(oy) * ow + static_cast<std::size_t>(ox)) * cout, cout, d);
            }
          }
        }
      CMapMat<T> xm(vx.ptr() + n * hw * cin, static_cast<Eigen::Index>(hw), static_cast<Eigen::Index>(cin));
      if (need_w) dpacked.noalias() += xm.transpose() * gcols;
      if (need_x) {
        MapMat<T> gx(gr.grad(x.id).ptr() + n * hw * cin, static_cast<Eigen::Index>(hw),
                     static_cast<Eigen::Index>(cin));
        gx.noalias() += gcols * packed->transpose();
      }
    }
    if (need_w) {
      T* gw = gr.grad(w.id).ptr();
      for (std::size_t t = 0; t < kh * kw; ++t)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t co = 0; co < cout; ++co)
            gw[(t * cin + ci) * cout + co] +=
                dpacked(static_cast<Eigen::Index>(ci), static_cast<Eigen::Index>(t * cout + co));
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling

/// 2x2 max pooling, stride 2. Ties resolve to the first element in row-major
/// window order, which is also where the gradient is routed.
template <class T>
Var maxpool2d(Graph<T>& g, Var x) {
  const auto& vx = g.value(x);
  const Shape s = vx.shape();
  detail::require(s.h % 2 == 0 && s.w % 2 == 0, "maxpool2d", "spatial dims must be even, got " + s.str());
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> out({s.n, oh, ow, s.c});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx)
        for (std::size_t c = 0; c < s.c; ++c, ++o) {
          std::size_t best = vx.index(n, 2 * y, 2 * xx, c);
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = vx.index(n, 2 * y + dy, 2 * xx + dx, c);
              if (!std::isnan(vx[best]) && (vx[i] > vx[best] || std::isnan(vx[i]))) best = i;  // NaN wins
            }
          out[o] = vx[best];
          (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
  return g.record("maxpool2d", std::move(out), {x.id}, [x, argmax](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    auto& gx = gr.grad(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
  });
}

/// Spatial mean per channel: (n, h, w, c) -> (n, 1, 1, c).
template <class T>
Var global_average_pool(Graph<T>& g, Var x) {
  const auto& vx = g.value(x);
  const Shape s = vx.shape();
  detail::require(s.h * s.w >= 1, "global_average_pool", "empty spatial extent");
  const std::size_t hw = s.h * s.w;
  Tensor<T> out(vector_shape(s.n, s.c));
  for (std::size_t n = 0; n < s.n; ++n) {
    T* o = out.ptr() + n * s.c;
    const T* src = vx.ptr() + n * hw * s.c;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < s.c; ++c) o[c] += src[p * s.c + c];
    for (std::size_t c = 0; c < s.c; ++c) o[c] /= static_cast<T>(hw);
  }
  return g.record("global_average_pool", std::move(out), {x.id}, [x](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    auto& gx = gr.grad(x.id);
    const Shape s = gx.shape();
    const std::size_t hw = s.h * s.w;
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < s.c; ++c) gx[(n * hw + p) * s.c + c] += go[n * s.c + c] * inv;
  });
}

// ---------------------------------------------------------------------------
// Concatenation

/// Channel-axis concatenation in the given order. Vectors (h = w = 1) are a
/// special case, so this also implements feature-vector concatenation.
template <class T>
Var concat_channels(Graph<T>& g, std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_channels", "no inputs");
  const Shape s0 = g.value(parts[0]).shape();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& v : parts) {
    const Shape s = g.value(v).shape();
    detail::require(s.n == s0.n && s.h == s0.h && s.w == s0.w, "concat_channels",
                    "spatial/batch mismatch " + s.str() + " vs " + s0.str());
    ids.push_back(v.id);
    widths.push_back(s.c);
    total += s.c;
  }
  const std::size_t pixels = s0.n * s0.h * s0.w;
  Tensor<T> out({s0.n, s0.h, s0.w, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = g.value(parts[k]).ptr();
    const std::size_t c = widths[k];
    for (std::size_t p = 0; p < pixels; ++p) std::copy_n(src + p * c, c, out.ptr() + p * total + off);
    off += c;
  }
  return g.record("concat", std::move(out), ids, [ids, widths, total, pixels](Graph<T>& gr, std::size_t self) {
    const auto& go = gr.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t c = widths[k];
      if (gr.requires_grad(ids[k]) && c > 0) {
        T* dst = gr.grad(ids[k]).ptr();
        for (std::size_t p = 0; p < pixels; ++p)
          for (std::size_t ci = 0; ci < c; ++ci) dst[p * c + ci] += go[p * total + off + ci];
      }
      off += c;
    }
  });
}

template <class T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_channels(g, std::span<const Var>(parts));
}

/// Feature-vector concatenation (operands are (n, 1, 1, d_k)).
template <class T>
Var concat_vectors(Graph<T>& g, std::span<const Var> parts) {
  for (const Var& v : parts) {
    const Shape s = g.value(v).shape();
    detail::require(s.h == 1 && s.w == 1, "concat_vectors", "operand is not a vector: " + s.str());
  }
  return concat_channels(g, parts);
}

// ---------------------------------------------------------------------------
// Dense

/// x (n, 1, 1, din) * W (1, 1, din, dout) + b.
template <class T>
Var dense(Graph<T>& g, Var x, Var w, Var b) {
  using namespace detail;
  const auto& vx = g.value(x);
  const auto& vw = g.value(w);
  const Shape xs = vx.shape();
  require(xs.h == 1 && xs.w == 1, "dense", "input is not a vector: " + xs.str());
  require(vw.shape().n == 1 && vw.shape().h == 1 && vw.shape().w == xs.c, "dense",
          "weight " + vw.shape().str() + " incompatible with input " + xs.str());
  const std::size_t din = xs.c, dout = vw.shape().c;
  check_bias(g.value(b), dout, "dense");
  const auto N = static_cast<Eigen::Index>(xs.n), I = static_cast<Eigen::Index>(din),
             O = static_cast<Eigen::Index>(dout);
  Tensor<T> out(vector_shape(xs.n, dout));
  MapMat<T> om(out.ptr(), N, O);
  om.noalias() = CMapMat<T>(vx.ptr(), N, I) * CMapMat<T>(vw.ptr(), I, O);
  om.rowwise() += CMapRow<T>(g.value(b).ptr(), O);
  return g.record("dense", std::move(out), {x.id, w.id, b.id}, [x, w, b, N, I, O](Graph<T>& gr, std::size_t self) {
    CMapMat<T> gm(gr.grad(self).ptr(), N, O);
    if (gr.requires_grad(w.id)) {
      MapMat<T> gw(gr.grad(w.id).ptr(), I, O);
      gw.noalias() += CMapMat<T>(gr.value(x).ptr(), N, I).transpose() * gm;
    }
    if (gr.requires_grad(b.id)) {
      MapRow<T> gb(gr.grad(b.id).ptr(), O);
      gb += gm.colwise().sum();
    }
    if (gr.requires_grad(x.id)) {
      MapMat<T> gx(gr.grad(x.id).ptr(), N, I);
      gx.noalias() += gm * CMapMat<T>(gr.value(w).ptr(), I, O).transpose();
    }
  });
}

}  // namespace hnet::ops
