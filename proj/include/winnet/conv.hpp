#pragma once

// 2-D cross-correlation, stride 1, output the same spatial size as the input.
//
//   out[n, co, y, x] = sum_{ci in group(co), i, j}
//       w[co, ci, i, j] * in[n, ci, y + i*dilation - anchor_y, x + j*dilation - anchor_x]
//
// Out-of-range reads are zero (Padding::Zero) or wrap around (Padding::Circular).
// The default anchor centres the kernel: dilation*(k-1)/2, rounded down.

#include <optional>
#include <string>
#include <vector>

#include "winnet/ops.hpp"
#include "winnet/tensor.hpp"

namespace winnet {

enum class Padding { Zero, Circular };

struct Conv2dOptions {
  int dilation = 1;
  int groups = 1;
  Padding padding = Padding::Zero;
  std::optional<int> anchor_y;
  std::optional<int> anchor_x;
};

namespace detail {

struct ConvGeometry {
  std::int64_t N, Cin, Cout, H, W, kh, kw, groups, cin_g, cout_g;
  int dilation, ay, ax;
  Padding padding;

  std::int64_t plane() const { return H * W; }
  bool depthwise() const { return groups == Cin && groups == Cout && cin_g == 1; }
  bool pointwise() const { return kh == 1 && kw == 1 && ay == 0 && ax == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const Conv2dOptions& o) {
  if (o.dilation < 1) throw ArgumentError("conv2d: dilation must be >= 1, got " + std::to_string(o.dilation));
  if (o.groups < 1) throw ArgumentError("conv2d: groups must be >= 1");
  const auto L = map_layout(x.shape(), "conv2d");
  if (w.rank() != 4) throw ContractError("conv2d: kernel must be [Cout, Cin/groups, kh, kw], got " + shape_str(w.shape()));
  ConvGeometry g{};
  g.N = L.batch;
  g.Cin = L.channels;
  g.H = L.height;
  g.W = L.width;
  g.Cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.groups = o.groups;
  if (g.Cin % g.groups != 0 || g.Cout % g.groups != 0)
    throw ContractError("conv2d: groups must divide Cin and Cout");
  g.cin_g = g.Cin / g.groups;
  g.cout_g = g.Cout / g.groups;
  if (w.dim(1) != g.cin_g)
    throw ContractError("conv2d: kernel " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()) +
                        " and groups=" + std::to_string(g.groups));
  g.dilation = o.dilation;
  g.ay = o.anchor_y.value_or(o.dilation * static_cast<int>(g.kh - 1) / 2);
  g.ax = o.anchor_x.value_or(o.dilation * static_cast<int>(g.kw - 1) / 2);
  g.padding = o.padding;
  return g;
}

inline std::int64_t wrap(std::int64_t i, std::int64_t n) {
  i %= n;
  return i < 0 ? i + n : i;
}

/// Output index range [lo, hi) whose source index y + off stays inside [0, n).
inline std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t off, std::int64_t n) {
  return {std::max<std::int64_t>(0, -off), std::min<std::int64_t>(n, n - off)};
}

/// Unfolds the channels [c0, c0+cin_g) of one sample into cols[(c*kh+i)*kw+j, y*W+x].
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
  const std::int64_t H = g.H, W = g.W, P = g.plane();
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    const T* plane = src + c * P;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      const std::int64_t oy = i * g.dilation - g.ay;
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const std::int64_t ox = j * g.dilation - g.ax;
        T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        if (g.padding == Padding::Zero) {
          std::fill(row, row + P, T(0));
          auto [ylo, yhi] = valid_range(oy, H);
          auto [xlo, xhi] = valid_range(ox, W);
          for (std::int64_t y = ylo; y < yhi; ++y) {
            const T* s = plane + (y + oy) * W + ox;
            T* d = row + y * W;
            for (std::int64_t x = xlo; x < xhi; ++x) d[x] = s[x];
          }
        } else {
          for (std::int64_t y = 0; y < H; ++y) {
            const T* s = plane + wrap(y + oy, H) * W;
            T* d = row + y * W;
            for (std::int64_t x = 0; x < W; ++x) d[x] = s[wrap(x + ox, W)];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters cols back onto the sample's input planes.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dst) {
  const std::int64_t H = g.H, W = g.W, P = g.plane();
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    T* plane = dst + c * P;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      const std::int64_t oy = i * g.dilation - g.ay;
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const std::int64_t ox = j * g.dilation - g.ax;
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        if (g.padding == Padding::Zero) {
          auto [ylo, yhi] = valid_range(oy, H);
          auto [xlo, xhi] = valid_range(ox, W);
          for (std::int64_t y = ylo; y < yhi; ++y) {
            T* d = plane + (y + oy) * W + ox;
            const T* s = row + y * W;
            for (std::int64_t x = xlo; x < xhi; ++x) d[x] += s[x];
          }
        } else {
          for (std::int64_t y = 0; y < H; ++y) {
            T* d = plane + wrap(y + oy, H) * W;
            const T* s = row + y * W;
            for (std::int64_t x = 0; x < W; ++x) d[wrap(x + ox, W)] += s[x];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const ConvGeometry& g, T* out) {
  const std::int64_t H = g.H, W = g.W, P = g.plane();
  for (std::int64_t n = 0; n < g.N; ++n)
    for (std::int64_t c = 0; c < g.Cin; ++c) {
      const T* src = x + (n * g.Cin + c) * P;
      T* dst = out + (n * g.Cout + c) * P;
      for (std::int64_t i = 0; i < g.kh; ++i)
        for (std::int64_t j = 0; j < g.kw; ++j) {
          const T wv = w[(c * g.kh + i) * g.kw + j];
          const std::int64_t oy = i * g.dilation - g.ay, ox = j * g.dilation - g.ax;
          if (g.padding == Padding::Zero) {
            auto [ylo, yhi] = valid_range(oy, H);
            auto [xlo, xhi] = valid_range(ox, W);
            for (std::int64_t y = ylo; y < yhi; ++y) {
              const T* s = src + (y + oy) * W + ox;
              T* d = dst + y * W;
              for (std::int64_t xx = xlo; xx < xhi; ++xx) d[xx] += wv * s[xx];
            }
          } else {
            for (std::int64_t y = 0; y < H; ++y)
              for (std::int64_t xx = 0; xx < W; ++xx)
                dst[y * W + xx] += wv * src[wrap(y + oy, H) * W + wrap(xx + ox, W)];
          }
        }
    }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* gout, const ConvGeometry& g, T* gx, T* gw) {
  const std::int64_t H = g.H, W = g.W, P = g.plane();
  for (std::int64_t n = 0; n < g.N; ++n)
    for (std::int64_t c = 0; c < g.Cin; ++c) {
      const T* src = x + (n * g.Cin + c) * P;
      const T* go = gout + (n * g.Cout + c) * P;
      for (std::int64_t i = 0; i < g.kh; ++i)
        for (std::int64_t j = 0; j < g.kw; ++j) {
          const std::int64_t widx = (c * g.kh + i) * g.kw + j;
          const T wv = w[widx];
          const std::int64_t oy = i * g.dilation - g.ay, ox = j * g.dilation - g.ax;
          T acc = 0;
          if (g.padding == Padding::Zero) {
            auto [ylo, yhi] = valid_range(oy, H);
            auto [xlo, xhi] = valid_range(ox, W);
            for (std::int64_t y = ylo; y < yhi; ++y) {
              const std::int64_t so = (y + oy) * W + ox;
              const T* s = src + so;
              const T* gg = go + y * W;
              if (gx) {
                T* d = gx + (n * g.Cin + c) * P + so;
                for (std::int64_t xx = xlo; xx < xhi; ++xx) d[xx] += wv * gg[xx];
              }
              for (std::int64_t xx = xlo; xx < xhi; ++xx) acc += gg[xx] * s[xx];
            }
          } else {
            for (std::int64_t y = 0; y < H; ++y)
              for (std::int64_t xx = 0; xx < W; ++xx) {
                const std::int64_t si = wrap(y + oy, H) * W + wrap(xx + ox, W);
                if (gx) gx[(n * g.Cin + c) * P + si] += wv * go[y * W + xx];
                acc += go[y * W + xx] * src[si];
              }
          }
          if (gw) gw[widx] += acc;
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Conv2dOptions& opts = {}) {
  using namespace detail;
  const ConvGeometry g = conv_geometry(x, w, opts);
  const std::int64_t P = g.plane();
  const std::int64_t krows = g.cin_g * g.kh * g.kw;
  std::vector<T> out(static_cast<std::size_t>(g.N * g.Cout * P), T(0));

  if (g.depthwise()) {
    depthwise_forward(x.vec().data(), w.vec().data(), g, out.data());
  } else {
    std::vector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(krows * P));
    for (std::int64_t n = 0; n < g.N; ++n)
      for (std::int64_t grp = 0; grp < g.groups; ++grp) {
        const T* src = x.vec().data() + (n * g.Cin + grp * g.cin_g) * P;
        const T* colp = src;
        if (!g.pointwise()) {
          im2col(src, g, cols.data());
          colp = cols.data();
        }
        CMapMat<T> C(colp, krows, P);
        CMapMat<T> Wm(w.vec().data() + grp * g.cout_g * krows, g.cout_g, krows);
        MapMat<T> O(out.data() + (n * g.Cout + grp * g.cout_g) * P, g.cout_g, P);
        O.noalias() = Wm * C;
      }
  }

  Shape oshape = map_shape(x.shape(), g.Cout);
  return make_result<T>(std::move(oshape), std::move(out), {x, w},
                        [g, krows, xn = x.node(), wn = w.node()](detail::Node<T>& n) {
                          const std::int64_t P = g.plane();
                          auto* gx = parent_grad(n, 0);
                          auto* gw = parent_grad(n, 1);
                          const T* xd = xn->data.data();
                          const T* wd = wn->data.data();
                          if (g.depthwise()) {
                            depthwise_backward(xd, wd, n.grad.data(), g, gx ? gx->data() : nullptr,
                                               gw ? gw->data() : nullptr);
                            return;
                          }
                          std::vector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(krows * P));
                          std::vector<T> gcols(gx && !g.pointwise() ? static_cast<std::size_t>(krows * P) : 0);
                          for (std::int64_t s = 0; s < g.N; ++s)
                            for (std::int64_t grp = 0; grp < g.groups; ++grp) {
                              const T* src = xd + (s * g.Cin + grp * g.cin_g) * P;
                              CMapMat<T> G(n.grad.data() + (s * g.Cout + grp * g.cout_g) * P, g.cout_g, P);
                              CMapMat<T> Wm(wd + grp * g.cout_g * krows, g.cout_g, krows);
                              if (gw) {
                                const T* colp = src;
                                if (!g.pointwise()) {
                                  im2col(src, g, cols.data());
                                  colp = cols.data();
                                }
                                CMapMat<T> C(colp, krows, P);
                                MapMat<T> GW(gw->data() + grp * g.cout_g * krows, g.cout_g, krows);
                                GW.noalias() += G * C.transpose();
                              }
                              if (gx) {
                                T* dst = gx->data() + (s * g.Cin + grp * g.cin_g) * P;
                                if (g.pointwise()) {
                                  MapMat<T> GX(dst, krows, P);
                                  GX.noalias() += Wm.transpose() * G;
                                } else {
                                  MapMat<T> GC(gcols.data(), krows, P);
                                  GC.noalias() = Wm.transpose() * G;
                                  col2im(gcols.data(), g, dst);
                                }
                              }
                            }
                        });
}

}  // namespace winnet
