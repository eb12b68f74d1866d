#pragma once

// Convolutional LISTA on the detail channels, with the analysis and synthesis
// dictionaries shared by all T layers:
//
//   g_0 = W_a (x) d
//   g_t = soft(g_{t-1} + W_a (x) (d - W_s (x) g_{t-1}),  softplus(theta_t) * scale)
//   out = W_s (x) g_T

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "winnet/activations.hpp"
#include "winnet/conv.hpp"
#include "winnet/init.hpp"

namespace winnet {

template <typename T>
struct ClistaParams {
  Tensor<T> W_a;                 // [N, cd, r, r]
  Tensor<T> W_s;                 // [cd, N, r, r]
  std::vector<Tensor<T>> theta;  // T tensors of shape [N], raw thresholds
  int T_layers() const { return static_cast<int>(theta.size()); }
  int atoms() const { return static_cast<int>(W_a.dim(0)); }
  int r() const { return static_cast<int>(W_a.dim(2)); }
};

/// Exact dual pair at initialisation: every atom is a centred spatial delta
/// mixing the channels through the first `cd` columns Q of a random
/// orthogonal N x N matrix, W_a = Q (x) delta and W_s = Q^T (x) delta, so
/// W_s (x) W_a = identity.
template <typename T>
ClistaParams<T> make_clista(int cd, int N, int r, int T_layers, T threshold, Rng& rng) {
  if (N < cd) throw ArgumentError("clista: need at least as many atoms as detail channels");
  if (r < 1 || r % 2 == 0) throw ArgumentError("clista: kernel size must be odd");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> G(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) G(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>> qr(G);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> Q = qr.householderQ();
  const int rr = r * r, mid = (r / 2) * r + r / 2;
  std::vector<T> wa(static_cast<std::size_t>(N * cd * rr), T(0)), ws(wa.size(), T(0));
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < cd; ++j) {
      wa[(n * cd + j) * rr + mid] = static_cast<T>(Q(n, j));
      ws[(j * N + n) * rr + mid] = static_cast<T>(Q(n, j));
    }
  ClistaParams<T> p;
  p.W_a = Tensor<T>({N, cd, r, r}, std::move(wa), true);
  p.W_s = Tensor<T>({cd, N, r, r}, std::move(ws), true);
  for (int t = 0; t < T_layers; ++t) p.theta.push_back(trainable_full<T>({N}, softplus_inverse(threshold)));
  return p;
}

template <typename T>
Tensor<T> clista_denoise(const Tensor<T>& d, const ClistaParams<T>& p, std::span<const T> scales) {
  auto g = conv2d(d, p.W_a);
  for (const auto& th : p.theta) {
    auto resid = sub(d, conv2d(g, p.W_s));
    g = soft_threshold(add(g, conv2d(resid, p.W_a)), softplus(th), scales);
  }
  return conv2d(g, p.W_s);
}

template <typename T>
Tensor<T> clista_denoise(const Tensor<T>& d, const ClistaParams<T>& p, T scale) {
  const T s[1] = {scale};
  return clista_denoise(d, p, std::span<const T>(s, 1));
}

/// Composition W_s (x) W_a as a [cd, cd, 2r-1, 2r-1] kernel, minus the delta
/// at the centre of each diagonal entry. Zero exactly for a dual pair.
template <typename T>
Tensor<T> orthogonal_residual(const Tensor<T>& W_s, const Tensor<T>& W_a) {
  if (W_s.rank() != 4 || W_a.rank() != 4 || W_s.dim(1) != W_a.dim(0) || W_s.dim(0) != W_a.dim(1) ||
      W_s.dim(2) != W_a.dim(2) || W_s.dim(3) != W_a.dim(3) || W_s.dim(2) != W_s.dim(3))
    throw ContractError("orthogonal_residual: incompatible dictionaries " + shape_str(W_s.shape()) + " and " +
                        shape_str(W_a.shape()));
  const std::int64_t cd = W_s.dim(0), N = W_s.dim(1), r = W_s.dim(2), R = 2 * r - 1;
  auto s_at = [&](const std::vector<T>& v, std::int64_t i, std::int64_t n, std::int64_t a, std::int64_t b) {
    return v[((i * N + n) * r + a) * r + b];
  };
  auto a_at = [&](const std::vector<T>& v, std::int64_t n, std::int64_t j, std::int64_t a, std::int64_t b) {
    return v[((n * cd + j) * r + a) * r + b];
  };
  const auto& ws = W_s.vec();
  const auto& wa = W_a.vec();
  std::vector<T> out(static_cast<std::size_t>(cd * cd * R * R), T(0));
  for (std::int64_t i = 0; i < cd; ++i)
    for (std::int64_t j = 0; j < cd; ++j)
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t u0 = 0; u0 < r; ++u0)
          for (std::int64_t u1 = 0; u1 < r; ++u1) {
            const T s = s_at(ws, i, n, u0, u1);
            if (s == T(0)) continue;
            for (std::int64_t v0 = 0; v0 < r; ++v0)
              for (std::int64_t v1 = 0; v1 < r; ++v1)
                out[((i * cd + j) * R + u0 + v0) * R + u1 + v1] += s * a_at(wa, n, j, v0, v1);
          }
  for (std::int64_t i = 0; i < cd; ++i) out[((i * cd + i) * R + r - 1) * R + r - 1] -= T(1);

  return make_result<T>({cd, cd, R, R}, std::move(out), {W_s, W_a},
                        [=, sn = W_s.node(), an = W_a.node()](detail::Node<T>& nd) {
                          auto* gs = parent_grad(nd, 0);
                          auto* ga = parent_grad(nd, 1);
                          const auto& ws = sn->data;
                          const auto& wa = an->data;
                          for (std::int64_t i = 0; i < cd; ++i)
                            for (std::int64_t j = 0; j < cd; ++j)
                              for (std::int64_t n = 0; n < N; ++n)
                                for (std::int64_t u0 = 0; u0 < r; ++u0)
                                  for (std::int64_t u1 = 0; u1 < r; ++u1)
                                    for (std::int64_t v0 = 0; v0 < r; ++v0)
                                      for (std::int64_t v1 = 0; v1 < r; ++v1) {
                                        const T g = nd.grad[((i * cd + j) * R + u0 + v0) * R + u1 + v1];
                                        const auto si = ((i * N + n) * r + u0) * r + u1;
                                        const auto ai = ((n * cd + j) * r + v0) * r + v1;
                                        if (gs) (*gs)[si] += g * wa[ai];
                                        if (ga) (*ga)[ai] += g * ws[si];
                                      }
                        });
}

template <typename T>
struct IstaResult {
  Tensor<T> code;
  std::vector<T> objective;  // objective after each iteration
};

namespace detail {

// Plain-loop zero-padded centred correlation for the reference solver, kept
// separate from conv2d on purpose.
template <typename T>
std::vector<T> naive_correlate(const std::vector<T>& x, std::int64_t cin, std::int64_t H, std::int64_t W,
                               const std::vector<T>& w, std::int64_t cout, std::int64_t r) {
  const std::int64_t a = (r - 1) / 2;
  std::vector<T> out(static_cast<std::size_t>(cout * H * W), T(0));
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t ci = 0; ci < cin; ++ci)
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < r; ++j) {
          const T wv = w[((co * cin + ci) * r + i) * r + j];
          for (std::int64_t y = 0; y < H; ++y) {
            const std::int64_t sy = y + i - a;
            if (sy < 0 || sy >= H) continue;
            for (std::int64_t x0 = 0; x0 < W; ++x0) {
              const std::int64_t sx = x0 + j - a;
              if (sx < 0 || sx >= W) continue;
              out[(co * H + y) * W + x0] += wv * x[(ci * H + sy) * W + sx];
            }
          }
        }
  return out;
}

}  // namespace detail

/// Reference ISTA for min_g 1/2 ||d - W_s (x) g||^2 + lambda ||g||_1:
///   g <- soft(g + (1/mu) W_s^T (x) (d - W_s (x) g), lambda / mu).
/// Starts from zero unless `g0` is given.
template <typename T>
IstaResult<T> ista_oracle(const Tensor<T>& d, const Tensor<T>& W_s, T lambda, T mu, int iters,
                          const std::optional<Tensor<T>>& g0 = std::nullopt) {
  if (!(mu > 0)) throw ArgumentError("ista_oracle: mu must be positive");
  if (iters < 1) throw ArgumentError("ista_oracle: iters must be >= 1");
  if (lambda < 0) throw ArgumentError("ista_oracle: lambda must be non-negative");
  const auto L = detail::map_layout(d.shape(), "ista_oracle");
  const std::int64_t cd = W_s.dim(0), N = W_s.dim(1), r = W_s.dim(2), H = L.height, W = L.width;
  if (L.channels != cd || L.batch != 1) throw ContractError("ista_oracle: d does not match W_s");
  std::vector<T> adj(W_s.vec().size());
  for (std::int64_t i = 0; i < cd; ++i)
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t a = 0; a < r; ++a)
        for (std::int64_t b = 0; b < r; ++b)
          adj[((n * cd + i) * r + a) * r + b] = W_s.vec()[((i * N + n) * r + (r - 1 - a)) * r + (r - 1 - b)];
  auto synth = [&](const std::vector<T>& g) { return detail::naive_correlate(g, N, H, W, W_s.vec(), cd, r); };
  auto objective = [&](const std::vector<T>& g) {
    auto s = synth(g);
    T e = 0, l1 = 0;
    for (std::size_t i = 0; i < s.size(); ++i) e += (d.vec()[i] - s[i]) * (d.vec()[i] - s[i]);
    for (auto v : g) l1 += std::abs(v);
    return e / 2 + lambda * l1;
  };
  std::vector<T> g = g0 ? g0->vec() : std::vector<T>(static_cast<std::size_t>(N * H * W), T(0));
  if (g.size() != static_cast<std::size_t>(N * H * W)) throw ContractError("ista_oracle: bad initial code");
  IstaResult<T> res;
  const T thr = lambda / mu;
  for (int t = 0; t < iters; ++t) {
    auto s = synth(g);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = d.vec()[i] - s[i];
    auto step = detail::naive_correlate(s, cd, H, W, adj, N, r);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = g[i] + step[i] / mu;
      g[i] = v > thr ? v - thr : (v < -thr ? v + thr : T(0));
    }
    res.objective.push_back(objective(g));
  }
  res.code = Tensor<T>({N, H, W}, std::move(g));
  return res;
}

}  // namespace winnet
