#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ris/tape.hpp"
#include "ris/tensor.hpp"

namespace ris {

enum class Padding { Same, Valid };
enum class Activation { Sigmoid, Tanh, Relu };

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

namespace detail {

struct ConvGeom {
  int in_ch, h, w;
  int out_ch, f;
  int pad, stride;
  int ho, wo;
};

inline ConvGeom conv2d_geometry(const Shape& x, const Shape& wgt, Padding pad,
                                int stride) {
  if (x.size() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
  if (wgt.size() != 4)
    throw std::invalid_argument("conv2d: weight must be [out,in,f,f]");
  if (wgt[2] != wgt[3]) throw std::invalid_argument("conv2d: kernel must be square");
  if (wgt[2] % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (wgt[1] != x[0]) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x) +
                                " vs weight " + shape_str(wgt));
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeom g;
  g.in_ch = x[0];
  g.h = x[1];
  g.w = x[2];
  g.out_ch = wgt[0];
  g.f = wgt[2];
  g.pad = (pad == Padding::Same) ? (g.f - 1) / 2 : 0;
  if (g.h + 2 * g.pad < g.f || g.w + 2 * g.pad < g.f) {
    throw std::invalid_argument("conv2d: kernel does not fit input " + shape_str(x));
  }
  g.stride = stride;
  g.ho = (g.h + 2 * g.pad - g.f) / stride + 1;
  g.wo = (g.w + 2 * g.pad - g.f) / stride + 1;
  return g;
}

template <typename T>
std::vector<T> pad_input(const Tensor<T>& x, int pad) {
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  std::vector<T> out(static_cast<std::size_t>(c) * hp * wp, T(0));
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < h; ++y) {
      const T* src = x.ptr() + (static_cast<std::size_t>(ic) * h + y) * w;
      T* dst = out.data() + (static_cast<std::size_t>(ic) * hp + y + pad) * wp + pad;
      std::copy(src, src + w, dst);
    }
  return out;
}

// out[oc,y,x] = bias[oc] + sum_{ic,ky,kx} w[oc,ic,ky,kx] * pin[ic, y*s+ky, x*s+kx]
// The kx/y/x loop nest keeps the inner loop a contiguous axpy so it
// autovectorizes; this is the hot path of the whole engine.
template <typename T>
void conv2d_forward(const std::vector<T>& pin, const ConvGeom& g, const T* wgt,
                    const T* bias, T* out) {
  const int hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  for (int oc = 0; oc < g.out_ch; ++oc) {
    T* ochan = out + static_cast<std::size_t>(oc) * g.ho * g.wo;
    const T b = bias ? bias[oc] : T(0);
    std::fill(ochan, ochan + static_cast<std::size_t>(g.ho) * g.wo, b);
    for (int ic = 0; ic < g.in_ch; ++ic)
      for (int ky = 0; ky < g.f; ++ky)
        for (int kx = 0; kx < g.f; ++kx) {
          const T wv =
              wgt[((static_cast<std::size_t>(oc) * g.in_ch + ic) * g.f + ky) * g.f + kx];
          if (wv == T(0)) continue;
          for (int y = 0; y < g.ho; ++y) {
            const T* src =
                pin.data() +
                (static_cast<std::size_t>(ic) * hp + y * g.stride + ky) * wp + kx;
            T* dst = ochan + static_cast<std::size_t>(y) * g.wo;
            if (g.stride == 1) {
              for (int x = 0; x < g.wo; ++x) dst[x] += wv * src[x];
            } else {
              for (int x = 0; x < g.wo; ++x) dst[x] += wv * src[x * g.stride];
            }
          }
        }
  }
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& gout, const ConvGeom& g, const T* wgt,
                           Tensor<T>& gx) {
  const int hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  std::vector<T> pgrad(static_cast<std::size_t>(g.in_ch) * hp * wp, T(0));
  for (int oc = 0; oc < g.out_ch; ++oc) {
    const T* gchan = gout.ptr() + static_cast<std::size_t>(oc) * g.ho * g.wo;
    for (int ic = 0; ic < g.in_ch; ++ic)
      for (int ky = 0; ky < g.f; ++ky)
        for (int kx = 0; kx < g.f; ++kx) {
          const T wv =
              wgt[((static_cast<std::size_t>(oc) * g.in_ch + ic) * g.f + ky) * g.f + kx];
          if (wv == T(0)) continue;
          for (int y = 0; y < g.ho; ++y) {
            T* dst = pgrad.data() +
                     (static_cast<std::size_t>(ic) * hp + y * g.stride + ky) * wp + kx;
            const T* src = gchan + static_cast<std::size_t>(y) * g.wo;
            if (g.stride == 1) {
              for (int x = 0; x < g.wo; ++x) dst[x] += wv * src[x];
            } else {
              for (int x = 0; x < g.wo; ++x) dst[x * g.stride] += wv * src[x];
            }
          }
        }
  }
  for (int ic = 0; ic < g.in_ch; ++ic)
    for (int y = 0; y < g.h; ++y) {
      const T* src =
          pgrad.data() + (static_cast<std::size_t>(ic) * hp + y + g.pad) * wp + g.pad;
      T* dst = gx.ptr() + (static_cast<std::size_t>(ic) * g.h + y) * g.w;
      for (int x = 0; x < g.w; ++x) dst[x] += src[x];
    }
}

template <typename T>
void conv2d_backward_weight(const Tensor<T>& gout, const ConvGeom& g,
                            const std::vector<T>& pin, Tensor<T>& gw) {
  const int hp = g.h + 2 * g.pad, wp = g.w + 2 * g.pad;
  for (int oc = 0; oc < g.out_ch; ++oc) {
    const T* gchan = gout.ptr() + static_cast<std::size_t>(oc) * g.ho * g.wo;
    for (int ic = 0; ic < g.in_ch; ++ic)
      for (int ky = 0; ky < g.f; ++ky)
        for (int kx = 0; kx < g.f; ++kx) {
          T acc = T(0);
          for (int y = 0; y < g.ho; ++y) {
            const T* src =
                pin.data() +
                (static_cast<std::size_t>(ic) * hp + y * g.stride + ky) * wp + kx;
            const T* go = gchan + static_cast<std::size_t>(y) * g.wo;
            if (g.stride == 1) {
              for (int x = 0; x < g.wo; ++x) acc += go[x] * src[x];
            } else {
              for (int x = 0; x < g.wo; ++x) acc += go[x] * src[x * g.stride];
            }
          }
          gw.data[((static_cast<std::size_t>(oc) * g.in_ch + ic) * g.f + ky) * g.f +
                  kx] += acc;
        }
  }
}

}  // namespace detail

// ---- elementwise / reduction ----

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.val(a);
  const auto& bv = tape.val(b);
  if (av.shape != bv.shape) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape) +
                                " vs " + shape_str(bv.shape));
  }
  Tensor<T> out = av;
  add_to(out, bv);
  return tape.push("add", std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    add_to(t.grad(a), g);
    add_to(t.grad(b), g);
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.val(a);
  const auto& bv = tape.val(b);
  if (av.shape != bv.shape) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(av.shape) +
                                " vs " + shape_str(bv.shape));
  }
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  return tape.push("mul", std::move(out), [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& av2 = t.val(a);
    const auto& bv2 = t.val(b);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      ga.data[i] += g.data[i] * bv2.data[i];
      gb.data[i] += g.data[i] * av2.data[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T k) {
  Tensor<T> out = tape.val(a);
  for (auto& v : out.data) v *= k;
  return tape.push("scale", std::move(out), [a, k](Tape<T>& t, const Tensor<T>& g) {
    add_scaled(t.grad(a), g, k);
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& av = tape.val(a);
  T acc = T(0);
  for (T v : av.data) acc += v;
  Tensor<T> out(Shape{1});
  out[0] = acc;
  return tape.push("sum", std::move(out), [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (auto& v : ga.data) v += g[0];
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  const auto& av = tape.val(a);
  check_shape_valid(shape);
  if (numel(shape) != av.size()) {
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(av.shape) +
                                " -> " + shape_str(shape));
  }
  Tensor<T> out(shape, av.data);
  return tape.push("reshape", std::move(out), [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
  });
}

// ---- activations ----

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.val(x);
  for (auto& v : out.data) v = sigmoid_scalar(v);
  Var self = tape.next_id();
  return tape.push("sigmoid", std::move(out),
                   [x, self](Tape<T>& t, const Tensor<T>& g) {
                     const auto& s = t.val(self);
                     auto& gx = t.grad(x);
                     for (std::size_t i = 0; i < g.data.size(); ++i)
                       gx.data[i] += g.data[i] * s.data[i] * (T(1) - s.data[i]);
                   });
}

template <typename T>
Var tanh_op(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.val(x);
  for (auto& v : out.data) v = std::tanh(v);
  Var self = tape.next_id();
  return tape.push("tanh", std::move(out),
                   [x, self](Tape<T>& t, const Tensor<T>& g) {
                     const auto& h = t.val(self);
                     auto& gx = t.grad(x);
                     for (std::size_t i = 0; i < g.data.size(); ++i)
                       gx.data[i] += g.data[i] * (T(1) - h.data[i] * h.data[i]);
                   });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.val(x);
  for (auto& v : out.data) v = std::max(v, T(0));
  return tape.push("relu", std::move(out), [x](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.val(x);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      if (xv.data[i] > T(0)) gx.data[i] += g.data[i];
  });
}

template <typename T>
Var pointwise(Tape<T>& tape, Activation kind, Var x) {
  switch (kind) {
    case Activation::Sigmoid: return sigmoid(tape, x);
    case Activation::Tanh: return tanh_op(tape, x);
    case Activation::Relu: return relu(tape, x);
  }
  throw std::invalid_argument("pointwise: unknown activation");
}

// ---- conv2d ----

// Cross-correlation plus per-channel bias (pass an invalid Var for no bias).
// Same padding zero-pads by (f-1)/2 per side; output spatial size is then
// ceil(H/stride). Valid padding requires the kernel to fit.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, Padding pad, int stride = 1) {
  const auto& xv = tape.val(x);
  const auto& wv = tape.val(weight);
  const auto geom = detail::conv2d_geometry(xv.shape, wv.shape, pad, stride);
  if (bias.valid()) {
    const auto& bv = tape.val(bias);
    if (bv.shape != Shape{geom.out_ch}) {
      throw std::invalid_argument("conv2d: bias must be [out_ch], got " +
                                  shape_str(bv.shape));
    }
  }
  auto pin = detail::pad_input(xv, geom.pad);
  Tensor<T> out(Shape{geom.out_ch, geom.ho, geom.wo});
  detail::conv2d_forward(pin, geom, wv.ptr(),
                         bias.valid() ? tape.val(bias).ptr() : nullptr, out.ptr());
  return tape.push(
      "conv2d", std::move(out),
      [x, weight, bias, geom](Tape<T>& t, const Tensor<T>& g) {
        const auto& xv2 = t.val(x);
        const auto& wv2 = t.val(weight);
        detail::conv2d_backward_input(g, geom, wv2.ptr(), t.grad(x));
        auto pin2 = detail::pad_input(xv2, geom.pad);
        detail::conv2d_backward_weight(g, geom, pin2, t.grad(weight));
        if (bias.valid()) {
          auto& gb = t.grad(bias);
          const std::size_t plane = static_cast<std::size_t>(geom.ho) * geom.wo;
          for (int oc = 0; oc < geom.out_ch; ++oc) {
            T acc = T(0);
            const T* src = g.ptr() + oc * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            gb.data[oc] += acc;
          }
        }
      });
}

// ---- pooling ----

// Per-window maximum. Backward routes the full gradient to the first
// (row-major) maximal element of each window.
template <typename T>
Var maxpool2d(Tape<T>& tape, Var x, int win_h, int win_w, int stride_h,
              int stride_w) {
  const auto& xv = tape.val(x);
  if (xv.shape.size() != 3)
    throw std::invalid_argument("maxpool2d: input must be [C,H,W]");
  const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  if (win_h < 1 || win_w < 1 || win_h > h || win_w > w) {
    throw std::invalid_argument("maxpool2d: window " + std::to_string(win_h) + "x" +
                                std::to_string(win_w) + " does not fit input " +
                                shape_str(xv.shape));
  }
  if (stride_h < 1 || stride_w < 1)
    throw std::invalid_argument("maxpool2d: stride must be >= 1");
  const int ho = (h - win_h) / stride_h + 1;
  const int wo = (w - win_w) / stride_w + 1;
  Tensor<T> out(Shape{c, ho, wo});
  std::vector<std::int64_t> argmax(out.data.size());
  std::size_t o = 0;
  for (int ic = 0; ic < c; ++ic)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        for (int ky = 0; ky < win_h; ++ky)
          for (int kx = 0; kx < win_w; ++kx) {
            const std::int64_t idx =
                (static_cast<std::int64_t>(ic) * h + oy * stride_h + ky) * w +
                ox * stride_w + kx;
            if (xv.data[idx] > best) {
              best = xv.data[idx];
              best_idx = idx;
            }
          }
        out.data[o] = best;
        argmax[o] = best_idx;
      }
  return tape.push("maxpool2d", std::move(out),
                   [x, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& g) {
                     auto& gx = t.grad(x);
                     for (std::size_t i = 0; i < g.data.size(); ++i)
                       gx.data[argmax[i]] += g.data[i];
                   });
}

// Global spatial max per channel: [C,H,W] -> [C].
template <typename T>
Var global_maxpool(Tape<T>& tape, Var x) {
  const Shape s = tape.val(x).shape;
  Var pooled = maxpool2d(tape, x, s[1], s[2], 1, 1);
  return reshape(tape, pooled, Shape{s[0]});
}

// ---- spatial log-softmax ----

// Normalizes a single-channel map across all pixels: out_i = x_i - log sum_j exp(x_j),
// computed with max subtraction.
template <typename T>
Var log_softmax_spatial(Tape<T>& tape, Var x) {
  const auto& xv = tape.val(x);
  if (xv.shape.size() != 3 || xv.shape[0] != 1) {
    throw std::invalid_argument("log_softmax_spatial: input must be [1,H,W], got " +
                                shape_str(xv.shape));
  }
  T m = -std::numeric_limits<T>::infinity();
  for (T v : xv.data) m = std::max(m, v);
  T acc = T(0);
  for (T v : xv.data) acc += std::exp(v - m);
  const T lse = m + std::log(acc);
  Tensor<T> out = xv;
  for (auto& v : out.data) v -= lse;
  Var self = tape.next_id();
  return tape.push("log_softmax_spatial", std::move(out),
                   [x, self](Tape<T>& t, const Tensor<T>& g) {
                     const auto& y = t.val(self);
                     auto& gx = t.grad(x);
                     T gsum = T(0);
                     for (T v : g.data) gsum += v;
                     for (std::size_t i = 0; i < g.data.size(); ++i)
                       gx.data[i] += g.data[i] - std::exp(y.data[i]) * gsum;
                   });
}

// ---- learned scalar offset ----

// Adds a single learned scalar to every element; its gradient is the sum of
// the incoming gradients.
template <typename T>
Var bias_scalar_add(Tape<T>& tape, Var x, Var b) {
  const auto& xv = tape.val(x);
  const auto& bv = tape.val(b);
  if (!bv.is_scalar())
    throw std::invalid_argument("bias_scalar_add: bias must be scalar");
  Tensor<T> out = xv;
  for (auto& v : out.data) v += bv[0];
  return tape.push("bias_scalar_add", std::move(out),
                   [x, b](Tape<T>& t, const Tensor<T>& g) {
                     add_to(t.grad(x), g);
                     T acc = T(0);
                     for (T v : g.data) acc += v;
                     t.grad(b)[0] += acc;
                   });
}

// ---- bilinear upsampling ----

namespace detail {

// Corner-aligned source coordinate for output index i on an axis.
inline double upsample_src_coord(int i, int src, int dst) {
  if (dst == 1) return 0.0;
  return static_cast<double>(i) * (src - 1) / static_cast<double>(dst - 1);
}

}  // namespace detail

template <typename T>
Var upsample_bilinear(Tape<T>& tape, Var x, int out_h, int out_w) {
  const auto& xv = tape.val(x);
  if (xv.shape.size() != 3)
    throw std::invalid_argument("upsample_bilinear: input must be [C,H,W]");
  const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
  if (out_h < h || out_w < w) {
    throw std::invalid_argument("upsample_bilinear: target " + std::to_string(out_h) +
                                "x" + std::to_string(out_w) +
                                " smaller than source " + shape_str(xv.shape));
  }
  Tensor<T> out(Shape{c, out_h, out_w});
  for (int ic = 0; ic < c; ++ic)
    for (int oy = 0; oy < out_h; ++oy) {
      const double sy = detail::upsample_src_coord(oy, h, out_h);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - y0;
      for (int ox = 0; ox < out_w; ++ox) {
        const double sx = detail::upsample_src_coord(ox, w, out_w);
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - x0;
        const double v = (1 - fy) * ((1 - fx) * xv.at3(ic, y0, x0) +
                                     fx * xv.at3(ic, y0, x1)) +
                         fy * ((1 - fx) * xv.at3(ic, y1, x0) +
                               fx * xv.at3(ic, y1, x1));
        out.at3(ic, oy, ox) = static_cast<T>(v);
      }
    }
  return tape.push(
      "upsample_bilinear", std::move(out),
      [x, c, h, w, out_h, out_w](Tape<T>& t, const Tensor<T>& g) {
        auto& gx = t.grad(x);
        for (int ic = 0; ic < c; ++ic)
          for (int oy = 0; oy < out_h; ++oy) {
            const double sy = detail::upsample_src_coord(oy, h, out_h);
            const int y0 = static_cast<int>(sy);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fy = sy - y0;
            for (int ox = 0; ox < out_w; ++ox) {
              const double sx = detail::upsample_src_coord(ox, w, out_w);
              const int x0 = static_cast<int>(sx);
              const int x1 = std::min(x0 + 1, w - 1);
              const double fx = sx - x0;
              const T gv = g.at3(ic, oy, ox);
              gx.at3(ic, y0, x0) += static_cast<T>((1 - fy) * (1 - fx)) * gv;
              gx.at3(ic, y0, x1) += static_cast<T>((1 - fy) * fx) * gv;
              gx.at3(ic, y1, x0) += static_cast<T>(fy * (1 - fx)) * gv;
              gx.at3(ic, y1, x1) += static_cast<T>(fy * fx) * gv;
            }
          }
      });
}

// ---- linear ----

// x:[k], weight:[m,k], bias:[m] -> weight*x + bias
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const auto& xv = tape.val(x);
  const auto& wv = tape.val(weight);
  const auto& bv = tape.val(bias);
  if (xv.shape.size() != 1 || wv.shape.size() != 2 || bv.shape.size() != 1 ||
      wv.shape[1] != xv.shape[0] || wv.shape[0] != bv.shape[0]) {
    throw std::invalid_argument("linear: shape mismatch x=" + shape_str(xv.shape) +
                                " w=" + shape_str(wv.shape) +
                                " b=" + shape_str(bv.shape));
  }
  const int m = wv.shape[0], k = wv.shape[1];
  Tensor<T> out(Shape{m});
  for (int i = 0; i < m; ++i) {
    T acc = bv[i];
    const T* row = wv.ptr() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) acc += row[j] * xv[j];
    out[i] = acc;
  }
  return tape.push("linear", std::move(out),
                   [x, weight, bias, m, k](Tape<T>& t, const Tensor<T>& g) {
                     const auto& xv2 = t.val(x);
                     const auto& wv2 = t.val(weight);
                     auto& gx = t.grad(x);
                     auto& gw = t.grad(weight);
                     auto& gb = t.grad(bias);
                     for (int i = 0; i < m; ++i) {
                       const T gi = g[i];
                       gb[i] += gi;
                       const T* row = wv2.ptr() + static_cast<std::size_t>(i) * k;
                       T* grow = gw.ptr() + static_cast<std::size_t>(i) * k;
                       for (int j = 0; j < k; ++j) {
                         gx[j] += gi * row[j];
                         grow[j] += gi * xv2[j];
                       }
                     }
                   });
}

}  // namespace ris
