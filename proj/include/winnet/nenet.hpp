#pragma once

// Noise-level estimation from s x s patches.
//
// With patch weights w_i (from SENet) and S = sum_i w_i, the weighted
// covariance is C = (1/S) sum_i w_i (p_i - mu)(p_i - mu)^T with the weighted
// mean mu, and sigma_hat^2 = lambda_min(C). Noise-only patches have
// covariance sigma^2 I, so the smallest eigenvalue isolates the noise floor
// even when the kept patches carry some low-rank structure.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "winnet/conv.hpp"
#include "winnet/dense.hpp"
#include "winnet/init.hpp"

namespace winnet {

template <typename T>
struct PatchMatrix {
  Tensor<T> P;  // [s^2, N_p], column k is the k-th patch in raster order
  int s = 0;
  std::int64_t count = 0;
  int stride = 1;
};

template <typename T>
struct SenetParams {
  std::vector<Tensor<T>> convs;  // [Cout, Cin, 1, 3], bias-free
};

template <typename T>
struct NenetConfig {
  int patch = 4;
  int stride = 1;
  T jitter = T(0);  // added to the covariance diagonal (training only)
};

/// Valid positions only, raster order. `image` is [1,H,W] (or [H,W]).
template <typename T>
PatchMatrix<T> extract_patches(const Tensor<T>& image, int s, int stride) {
  if (s < 1) throw ArgumentError("extract_patches: patch size must be positive");
  if (stride < 1) throw ArgumentError("extract_patches: stride must be >= 1");
  if (image.numel() != image.dim(image.rank() - 1) * image.dim(image.rank() - 2))
    throw ContractError("extract_patches: expected a single-channel image, got " + shape_str(image.shape()));
  const std::int64_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
  if (H < s || W < s) throw ArgumentError("extract_patches: image smaller than the patch size");
  const std::int64_t ny = (H - s) / stride + 1, nx = (W - s) / stride + 1, n = ny * nx, d = std::int64_t(s) * s;
  std::vector<T> out(static_cast<std::size_t>(d * n));
  std::vector<std::int64_t> src(out.size());
  for (std::int64_t py = 0; py < ny; ++py)
    for (std::int64_t px = 0; px < nx; ++px) {
      const std::int64_t k = py * nx + px;
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
          const std::int64_t pix = (py * stride + i) * W + px * stride + j;
          out[(i * s + j) * n + k] = image.vec()[pix];
          src[(i * s + j) * n + k] = pix;
        }
    }
  PatchMatrix<T> pm;
  pm.s = s;
  pm.count = n;
  pm.stride = stride;
  pm.P = make_result<T>({d, n}, std::move(out), {image}, [src](detail::Node<T>& nd) {
    if (auto* g = parent_grad(nd, 0))
      for (std::size_t i = 0; i < src.size(); ++i) (*g)[src[i]] += nd.grad[i];
  });
  return pm;
}

/// Weighted centred covariance of the columns of P, differentiable in P and w.
template <typename T>
Tensor<T> weighted_covariance(const Tensor<T>& P, const Tensor<T>& w) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  if (P.rank() != 2 || w.numel() != P.dim(1)) throw ContractError("weighted_covariance: shape mismatch");
  const std::int64_t d = P.dim(0), n = P.dim(1);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Pm(P.vec().data(), d, n);
  Eigen::Map<const Vec> wv(w.vec().data(), n);
  double S = 0;
  for (auto v : w.vec()) S += v;
  if (!(S > 0) || !std::isfinite(S)) throw DegenerateWeightsError("noise estimator: patch weights sum to zero");
  const T Sv = static_cast<T>(S);
  Vec mu = Pm * wv / Sv;
  Mat Q = Pm.colwise() - mu;
  Mat C = Q * wv.asDiagonal() * Q.transpose() / Sv;
  C = (C + C.transpose()).eval() / T(2);
  std::vector<T> out(static_cast<std::size_t>(d * d));
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = C(i, j);
  return make_result<T>({d, d}, std::move(out), {P, w}, [d, n, Sv, Q, C, wn = w.node()](detail::Node<T>& nd) {
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> G(nd.grad.data(), d, d);
    Mat Gs = G + G.transpose();
    if (auto* gp = parent_grad(nd, 0)) {
      Mat D = Gs * Q;
      for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t k = 0; k < n; ++k) (*gp)[i * n + k] += wn->data[k] / Sv * D(i, k);
    }
    if (auto* gw = parent_grad(nd, 1)) {
      const T gc = (G.array() * C.array()).sum();
      Mat GQ = G * Q;
      for (std::int64_t k = 0; k < n; ++k) (*gw)[k] += (Q.col(k).dot(GQ.col(k)) - gc) / Sv;
    }
  });
}

/// sigma_hat = sqrt(max(lambda_min(C), 0)); throws DegenerateWeightsError when sum(w) == 0.
template <typename T>
Tensor<T> estimate_sigma(const PatchMatrix<T>& pm, const Tensor<T>& w, T jitter = T(0)) {
  auto C = weighted_covariance(pm.P, w);
  if (jitter != T(0)) C = add(C, scale(eye<T>(C.dim(0)), jitter));
  return sqrt(sym_eig_min(C).value);
}

/// SENet: conv(k=3)+ReLU for 1->32->32->32, conv 32->1, global average pool, sigmoid.
template <typename T>
SenetParams<T> make_senet(Rng& rng, int width = 32) {
  SenetParams<T> p;
  p.convs.push_back(kaiming_normal<T>({width, 1, 1, 3}, rng));
  p.convs.push_back(kaiming_normal<T>({width, width, 1, 3}, rng));
  p.convs.push_back(kaiming_normal<T>({width, width, 1, 3}, rng));
  p.convs.push_back(kaiming_normal<T>({1, width, 1, 3}, rng));
  return p;
}

/// All-zero SENet; every patch gets weight 0.5.
template <typename T>
SenetParams<T> zero_senet(int width = 32) {
  SenetParams<T> p;
  p.convs.push_back(Tensor<T>::zeros({width, 1, 1, 3}, true));
  p.convs.push_back(Tensor<T>::zeros({width, width, 1, 3}, true));
  p.convs.push_back(Tensor<T>::zeros({width, width, 1, 3}, true));
  p.convs.push_back(Tensor<T>::zeros({1, width, 1, 3}, true));
  return p;
}

/// Per-patch weights in (0,1). Each patch is fed with its mean removed and
/// divided by 255; patches are processed independently, so the result is
/// permutation-equivariant.
template <typename T>
Tensor<T> senet_weights(const PatchMatrix<T>& pm, const SenetParams<T>& net) {
  const std::int64_t d = pm.P.dim(0), n = pm.P.dim(1);
  std::vector<T> in(static_cast<std::size_t>(n * d));
  for (std::int64_t k = 0; k < n; ++k) {
    T m = 0;
    for (std::int64_t i = 0; i < d; ++i) m += pm.P.vec()[i * n + k];
    m /= static_cast<T>(d);
    for (std::int64_t i = 0; i < d; ++i) in[k * d + i] = (pm.P.vec()[i * n + k] - m) / T(255);
  }
  // Patches are rows of a single [1, C, n, d] map; a 1 x 3 kernel never mixes rows.
  Tensor<T> h({1, 1, n, d}, std::move(in));
  for (std::size_t l = 0; l < net.convs.size(); ++l) {
    h = conv2d(h, net.convs[l]);
    if (l + 1 < net.convs.size()) h = relu(h);
  }
  return sigmoid(mean_per_sample(reshape(h, {n, d})));
}

template <typename T>
struct NoiseEstimate {
  Tensor<T> sigma;    // [1]
  Tensor<T> weights;  // [N_p]
};

template <typename T>
NoiseEstimate<T> nenet_estimate(const Tensor<T>& image, const SenetParams<T>& net, const NenetConfig<T>& cfg = {}) {
  auto pm = extract_patches(image, cfg.patch, cfg.stride);
  auto w = senet_weights(pm, net);
  return {estimate_sigma(pm, w, cfg.jitter), w};
}

namespace detail {

/// Wilson-Hilferty approximation of the 0.999 quantile of chi^2 with k dof.
inline double chi2_q999(double k) {
  constexpr double z = 3.090232306167813;
  const double a = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - a + z * std::sqrt(a), 3);
}

}  // namespace detail

/// Non-learned baseline: keep patches whose sample variance is consistent
/// with pure noise at the current estimate, re-estimate from the kept set,
/// repeat until the kept set is stable (at most `max_iters` rounds).
template <typename T>
T iterative_lowrank_oracle(const Tensor<T>& image, int s, int stride = 1, int max_iters = 10) {
  NoGradGuard ng;
  auto pm = extract_patches(image, s, stride);
  const std::int64_t d = pm.P.dim(0), n = pm.P.dim(1);
  std::vector<T> var(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    double m = 0, q = 0;
    for (std::int64_t i = 0; i < d; ++i) m += pm.P.vec()[i * n + k];
    m /= static_cast<double>(d);
    for (std::int64_t i = 0; i < d; ++i) q += (pm.P.vec()[i * n + k] - m) * (pm.P.vec()[i * n + k] - m);
    var[k] = static_cast<T>(q / static_cast<double>(d - 1));
  }
  const double ratio = detail::chi2_q999(static_cast<double>(d - 1)) / static_cast<double>(d - 1);
  Tensor<T> w = Tensor<T>::full({n}, T(1));
  T sigma = estimate_sigma(pm, w).item();
  std::int64_t kept_prev = n;
  for (int it = 0; it < max_iters; ++it) {
    const T tau = static_cast<T>(sigma * sigma * ratio);
    std::int64_t kept = 0;
    for (std::int64_t k = 0; k < n; ++k) {
      w.vec()[k] = var[k] <= tau ? T(1) : T(0);
      kept += var[k] <= tau;
    }
    if (kept < 2) break;
    const T next = estimate_sigma(pm, w).item();
    const bool stable = kept == kept_prev;
    sigma = next;
    kept_prev = kept;
    if (stable) break;
  }
  return sigma;
}

}  // namespace winnet
