#pragma once

// One scale of the lifting-inspired invertible network.
//
// split:  f = K_s (x) y with a p x p frame of c filters, circular boundary;
//         the first h channels are the coarse part, the rest the detail part.
// merge:  y = K_m (x) [c; d], K_m = flip(K_s) / p^2, which is an exact left
//         inverse of split whenever the reshaped filter bank F (c x p^2)
//         satisfies F^T F = I.
// lifting steps, m = 1..M:
//         d_m = d_{m-1} - P_m(c_{m-1}),  c_m = c_{m-1} + U_m(d_m)
// and the inverse runs them backwards, so invertibility does not depend on
// what P and U compute.

#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "winnet/activations.hpp"
#include "winnet/conv.hpp"
#include "winnet/dense.hpp"
#include "winnet/init.hpp"
#include "winnet/spectral_norm.hpp"

namespace winnet {

enum class FrameSource { Dct, Cayley };

template <typename T>
struct FrameKernels {
  Tensor<T> split_kernel;  // [c, 1, p, p]
  Tensor<T> merge_kernel;  // [1, c, p, p]
  int p = 0;
  int c = 0;
  int h = 1;
  FrameSource source = FrameSource::Dct;

  /// Filter bank as a c x p^2 matrix (row i is filter i, raster order).
  Tensor<T> frame_matrix() const { return reshape(split_kernel, {c, static_cast<std::int64_t>(p) * p}); }
};

template <typename T>
struct CoarseDetail {
  Tensor<T> coarse;  // [h, H, W] or [N, h, H, W]
  Tensor<T> detail;  // [c-h, H, W] or [N, c-h, H, W]
};

namespace detail {

template <typename T>
FrameKernels<T> frame_from_matrix(const Tensor<T>& F, int p, int h, FrameSource source) {
  const auto c = F.dim(0);
  if (h < 1 || h >= c) throw ArgumentError("frame: coarse channel count must be in [1, c-1]");
  FrameKernels<T> fk;
  fk.p = p;
  fk.c = static_cast<int>(c);
  fk.h = h;
  fk.source = source;
  fk.split_kernel = reshape(F, {c, 1, p, p});
  fk.merge_kernel = scale(reshape(flip_spatial(fk.split_kernel), {1, c, p, p}), T(1) / static_cast<T>(p * p));
  return fk;
}

inline int split_anchor(int p, int dilation) { return dilation * ((p - 1) / 2); }

}  // namespace detail

/// Rows of the orthonormal 2-D DCT-II, filter u*p+v = b_u(y) b_v(x).
template <typename T>
FrameKernels<T> dct_frame(int p, int c, int h = 1) {
  if (p < 1) throw ArgumentError("dct_frame: p must be positive");
  if (c != p * p) throw ArgumentError("dct_frame: c must equal p^2");
  auto basis = [p](int k, int n) {
    const double a = k == 0 ? std::sqrt(1.0 / p) : std::sqrt(2.0 / p);
    return a * std::cos(std::numbers::pi * (2 * n + 1) * k / (2.0 * p));
  };
  std::vector<T> F(static_cast<std::size_t>(c * c));
  for (int u = 0; u < p; ++u)
    for (int v = 0; v < p; ++v)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) F[(u * p + v) * c + y * p + x] = static_cast<T>(basis(u, y) * basis(v, x));
  return detail::frame_from_matrix(Tensor<T>({c, c}, std::move(F)), p, h, FrameSource::Dct);
}

/// K = (I - A)(I + A)^{-1}, A = theta - theta^T. I + A is always invertible
/// because a real skew-symmetric A has purely imaginary eigenvalues.
template <typename T>
Tensor<T> cayley_matrix(const Tensor<T>& theta) {
  if (theta.rank() != 2 || theta.dim(0) != theta.dim(1)) throw ContractError("cayley: theta must be square");
  const auto n = theta.dim(0);
  auto A = sub(theta, transpose(theta));
  auto I = eye<T>(n);
  return matmul(sub(I, A), inverse(add(I, A)));
}

/// First p^2 columns of the Cayley matrix, differentiable w.r.t. theta.
template <typename T>
FrameKernels<T> cayley_frame(const Tensor<T>& theta, int p, int h = 1) {
  const auto c = theta.dim(0);
  const std::int64_t pp = static_cast<std::int64_t>(p) * p;
  if (c < pp) throw ArgumentError("cayley_frame: c must be >= p^2");
  std::vector<T> sel(static_cast<std::size_t>(c * pp), T(0));
  for (std::int64_t j = 0; j < pp; ++j) sel[j * pp + j] = T(1);
  auto F = matmul(cayley_matrix(theta), Tensor<T>({c, pp}, std::move(sel)));
  return detail::frame_from_matrix(F, p, h, FrameSource::Cayley);
}

/// Analysis with the frame; `dilation` spreads the filter taps (a trous).
template <typename T>
CoarseDetail<T> split(const Tensor<T>& y, const FrameKernels<T>& frame, int dilation = 1) {
  Conv2dOptions o;
  o.dilation = dilation;
  o.padding = Padding::Circular;
  o.anchor_y = o.anchor_x = detail::split_anchor(frame.p, dilation);
  auto f = conv2d(y, frame.split_kernel, o);
  return {slice_channels(f, 0, frame.h), slice_channels(f, frame.h, frame.c)};
}

template <typename T>
Tensor<T> merge(const CoarseDetail<T>& cd, const FrameKernels<T>& frame, int dilation = 1) {
  const auto Lc = detail::map_layout(cd.coarse.shape(), "merge");
  const auto Ld = detail::map_layout(cd.detail.shape(), "merge");
  if (Lc.channels != frame.h || Ld.channels != frame.c - frame.h)
    throw ArgumentError("merge: got " + std::to_string(Lc.channels) + "+" + std::to_string(Ld.channels) +
                        " channels, frame expects " + std::to_string(frame.h) + "+" +
                        std::to_string(frame.c - frame.h));
  Conv2dOptions o;
  o.dilation = dilation;
  o.padding = Padding::Circular;
  o.anchor_y = o.anchor_x = dilation * (frame.p - 1) - detail::split_anchor(frame.p, dilation);
  return conv2d(concat_channels(cd.coarse, cd.detail), frame.merge_kernel, o);
}

template <typename T>
struct ResidualBlock {
  Tensor<T> dw1;    // [w, 1, q, q]
  Tensor<T> pw1;    // [w, w, 1, 1]
  Tensor<T> theta;  // [w] raw thresholds
  Tensor<T> dw2;
  Tensor<T> pw2;
};

template <typename T>
struct PUNetParams {
  Tensor<T> input_conv;  // [w, cin, 3, 3]
  Tensor<T> theta_in;    // [w]
  std::vector<ResidualBlock<T>> blocks;
  Tensor<T> output_conv;  // [cout, w, 3, 3]
  int dilation = 1;
  int channels = 32;
  int q = 5;
};

/// Kaiming-initialised (gain 1) PUNet whose output conv starts at zero, so a fresh
/// lifting step is the identity.
template <typename T>
PUNetParams<T> make_punet(int cin, int cout, int width, int J, int q, int dilation, T threshold, Rng& rng) {
  PUNetParams<T> p;
  p.channels = width;
  p.q = q;
  p.dilation = dilation;
  // Soft thresholds are near-linear, so the Kaiming gain for a linear layer.
  const double gain = 1.0;
  p.input_conv = kaiming_normal<T>({width, cin, 3, 3}, rng, gain);
  const T raw = softplus_inverse(threshold);
  p.theta_in = trainable_full<T>({width}, raw);
  for (int j = 0; j < J; ++j) {
    ResidualBlock<T> b;
    b.dw1 = kaiming_normal<T>({width, 1, q, q}, rng, gain);
    b.pw1 = kaiming_normal<T>({width, width, 1, 1}, rng, gain);
    b.theta = trainable_full<T>({width}, raw);
    b.dw2 = kaiming_normal<T>({width, 1, q, q}, rng, gain);
    b.pw2 = kaiming_normal<T>({width, width, 1, 1}, rng, gain);
    p.blocks.push_back(std::move(b));
  }
  p.output_conv = Tensor<T>::zeros({cout, width, 3, 3}, true);
  return p;
}

/// Threshold scale factors: empty = 1, one entry = shared, N entries = per sample.
template <typename T>
Tensor<T> punet_apply(const PUNetParams<T>& net, const Tensor<T>& x, std::span<const T> scales) {
  Conv2dOptions full;
  full.dilation = net.dilation;
  Conv2dOptions dw = full;
  dw.groups = net.channels;
  auto h = conv2d(x, net.input_conv, full);
  h = soft_threshold(h, softplus(net.theta_in), scales);
  for (const auto& b : net.blocks) {
    auto r = conv2d(conv2d(h, b.dw1, dw), b.pw1);
    r = soft_threshold(r, softplus(b.theta), scales);
    r = conv2d(conv2d(r, b.dw2, dw), b.pw2);
    h = add(h, r);
  }
  return conv2d(h, net.output_conv, full);
}

template <typename T>
Tensor<T> punet_apply(const PUNetParams<T>& net, const Tensor<T>& x, T scale) {
  const T s[1] = {scale};
  return punet_apply(net, x, std::span<const T>(s, 1));
}

template <typename T>
struct LinnParams {
  FrameSource source = FrameSource::Dct;
  int p = 4;
  int c = 16;
  int h = 1;
  Tensor<T> theta;  // [c, c], Cayley only
  std::vector<PUNetParams<T>> predict;
  std::vector<PUNetParams<T>> update;
  int scale_index = 1;

  int dilation() const { return 1 << (scale_index - 1); }

  FrameKernels<T> frame() const {
    if (source == FrameSource::Cayley) return cayley_frame(theta, p, h);
    return dct_frame<T>(p, c, h);
  }
};

template <typename T>
CoarseDetail<T> linn_forward(const CoarseDetail<T>& cd, const LinnParams<T>& lp, std::span<const T> scales) {
  if (lp.predict.size() != lp.update.size()) throw ContractError("linn: predict/update count mismatch");
  auto c = cd.coarse;
  auto d = cd.detail;
  for (std::size_t m = 0; m < lp.predict.size(); ++m) {
    d = sub(d, punet_apply(lp.predict[m], c, scales));
    c = add(c, punet_apply(lp.update[m], d, scales));
  }
  return {c, d};
}

template <typename T>
CoarseDetail<T> linn_inverse(const CoarseDetail<T>& cd, const LinnParams<T>& lp, std::span<const T> scales) {
  if (lp.predict.size() != lp.update.size()) throw ContractError("linn: predict/update count mismatch");
  auto c = cd.coarse;
  auto d = cd.detail;
  for (std::size_t m = lp.predict.size(); m-- > 0;) {
    c = sub(c, punet_apply(lp.update[m], d, scales));
    d = add(d, punet_apply(lp.predict[m], c, scales));
  }
  return {c, d};
}

template <typename T>
CoarseDetail<T> linn_forward(const CoarseDetail<T>& cd, const LinnParams<T>& lp, T scale) {
  const T s[1] = {scale};
  return linn_forward(cd, lp, std::span<const T>(s, 1));
}

template <typename T>
CoarseDetail<T> linn_inverse(const CoarseDetail<T>& cd, const LinnParams<T>& lp, T scale) {
  const T s[1] = {scale};
  return linn_inverse(cd, lp, std::span<const T>(s, 1));
}

/// Kernel of the adjoint of a centred, zero-padded conv: spatial flip, and
/// for dense convs the in/out channel axes swapped.
template <typename T>
Tensor<T> conv_adjoint_kernel(const Tensor<T>& w, bool depthwise) {
  auto f = flip_spatial(w);
  if (depthwise) return f;
  const auto co = w.dim(0), ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  std::vector<T> out(f.vec().size());
  for (std::int64_t a = 0; a < co; ++a)
    for (std::int64_t b = 0; b < ci; ++b)
      std::copy_n(f.vec().begin() + (a * ci + b) * kh * kw, kh * kw, out.begin() + (b * co + a) * kh * kw);
  return Tensor<T>({ci, co, kh, kw}, std::move(out));
}

/// The branch dw -> pw -> dw -> pw of a residual block with thresholds at
/// zero, as an operator on [w, H, W].
template <typename T>
LinearOperator<T> block_operator(const ResidualBlock<T>& b, std::int64_t H, std::int64_t W, int dilation) {
  const auto width = b.pw1.dim(0);
  Conv2dOptions dw;
  dw.dilation = dilation;
  dw.groups = static_cast<int>(width);
  LinearOperator<T> op;
  op.input_shape = {width, H, W};
  op.output_shape = {width, H, W};
  op.apply = [b, dw](const Tensor<T>& x) {
    return conv2d(conv2d(conv2d(conv2d(x, b.dw1, dw), b.pw1), b.dw2, dw), b.pw2);
  };
  op.adjoint = [b, dw](const Tensor<T>& u) {
    NoGradGuard ng;
    auto r = conv2d(u, conv_adjoint_kernel(b.pw2, false));
    r = conv2d(r, conv_adjoint_kernel(b.dw2, true), dw);
    r = conv2d(r, conv_adjoint_kernel(b.pw1, false));
    return conv2d(r, conv_adjoint_kernel(b.dw1, true), dw);
  };
  return op;
}

template <typename T>
T block_spectral_norm(const ResidualBlock<T>& b, std::int64_t H, std::int64_t W, int dilation = 1, int iters = 50,
                      std::uint64_t seed = 0) {
  return spectral_norm(block_operator(b, H, W, dilation), iters, seed);
}

}  // namespace winnet
