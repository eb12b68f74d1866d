#pragma once

// Largest singular value of a linear map by (block) power iteration.
//
// The block variant keeps an orthonormal basis V, iterates V <- orth(A^T A V)
// and reads the estimate from the Rayleigh-Ritz projection of A^T A onto V.
// With block size 1 this is plain power iteration. Estimates never exceed the
// true norm and do not decrease from one iteration to the next.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "winnet/ops.hpp"
#include "winnet/rng.hpp"

namespace winnet {

template <typename T>
struct LinearOperator {
  std::function<Tensor<T>(const Tensor<T>&)> apply;
  /// Optional; derived by reverse-mode differentiation of `apply` when empty.
  std::function<Tensor<T>(const Tensor<T>&)> adjoint;
  Shape input_shape;
  Shape output_shape;

  Tensor<T> apply_adjoint(const Tensor<T>& u) const {
    if (adjoint) return adjoint(u);
    Tensor<T> x = Tensor<T>::zeros(input_shape, true);
    Tensor<T> y = apply(x);
    Tensor<T> probe(y.shape(), u.vec());
    auto g = gradient(sum(mul(y, probe)), x);
    return Tensor<T>(input_shape, std::move(g));
  }
};

/// Warm-start vector kept across calls for one operator (training mode).
template <typename T>
struct PowerIterationState {
  std::vector<T> vector;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename T>
using DynMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
DynMat<T> random_orthonormal(std::int64_t n, std::int64_t b, std::uint64_t seed) {
  DynMat<T> V(n, b);
  for (std::int64_t j = 0; j < b; ++j)
    for (std::int64_t i = 0; i < n; ++i) V(i, j) = static_cast<T>(normal_at(seed, static_cast<std::uint64_t>(j * n + i)));
  Eigen::HouseholderQR<DynMat<T>> qr(V);
  return qr.householderQ() * DynMat<T>::Identity(n, b);
}

template <typename T>
DynMat<T> apply_columns(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Shape& in_shape,
                        const DynMat<T>& V, std::int64_t out_n) {
  DynMat<T> out(out_n, V.cols());
  for (std::int64_t j = 0; j < V.cols(); ++j) {
    std::vector<T> col(V.col(j).data(), V.col(j).data() + V.rows());
    Tensor<T> y = f(Tensor<T>(in_shape, std::move(col)));
    for (std::int64_t i = 0; i < out_n; ++i) out(i, j) = y.vec()[i];
  }
  return out;
}

/// Runs `iters` block iterations; returns per-iteration estimates and the top Ritz vector.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> block_power(const LinearOperator<T>& op, int iters, DynMat<T> V) {
  NoGradGuard no_grad;
  const std::int64_t n = numel_of(op.input_shape), m = numel_of(op.output_shape);
  auto adj = [&op](const Tensor<T>& u) {
    // Adjoint through autodiff needs the graph.
    if (op.adjoint) return op.adjoint(u);
    detail::grad_enabled_flag() = true;
    auto r = op.apply_adjoint(u);
    detail::grad_enabled_flag() = false;
    return r;
  };
  std::vector<T> trace;
  std::vector<T> top(static_cast<std::size_t>(n), T(0));
  for (int it = 0; it <= iters; ++it) {
    DynMat<T> Y = apply_columns<T>(op.apply, op.input_shape, V, m);
    if (it > 0) {
      DynMat<T> H = Y.transpose() * Y;
      Eigen::SelfAdjointEigenSolver<DynMat<T>> es(H);
      const T lmax = std::max<T>(es.eigenvalues()(H.rows() - 1), T(0));
      trace.push_back(std::sqrt(lmax));
      Eigen::Matrix<T, Eigen::Dynamic, 1> v = V * es.eigenvectors().col(H.rows() - 1);
      top.assign(v.data(), v.data() + n);
    }
    if (it == iters) break;
    DynMat<T> Z = apply_columns<T>(adj, op.output_shape, Y, n);
    if (Z.norm() == T(0)) {
      trace.resize(static_cast<std::size_t>(iters), T(0));
      return {trace, std::vector<T>(static_cast<std::size_t>(n), T(0))};
    }
    Eigen::HouseholderQR<DynMat<T>> qr(Z);
    V = qr.householderQ() * DynMat<T>::Identity(n, V.cols());
  }
  return {trace, top};
}

}  // namespace detail

/// Estimates after each of `iters` iterations (non-decreasing).
template <typename T>
std::vector<T> spectral_norm_trace(const LinearOperator<T>& op, int iters, std::uint64_t seed, int block = 8) {
  if (iters < 1) throw ArgumentError("spectral_norm: iters must be >= 1");
  const std::int64_t n = numel_of(op.input_shape);
  const std::int64_t b = std::clamp<std::int64_t>(block, 1, n);
  return detail::block_power(op, iters, detail::random_orthonormal<T>(n, b, seed)).first;
}

template <typename T>
T spectral_norm(const LinearOperator<T>& op, int iters, std::uint64_t seed, int block = 8) {
  return spectral_norm_trace(op, iters, seed, block).back();
}

/// Training variant: `iters` single-vector iterations warm-started from
/// `state`, then ||A v|| recorded on the graph with v held constant, so the
/// result is differentiable w.r.t. whatever parameters `op.apply` reads.
template <typename T>
Tensor<T> spectral_norm_tracked(const LinearOperator<T>& op, PowerIterationState<T>& state, int iters) {
  if (iters < 1) throw ArgumentError("spectral_norm: iters must be >= 1");
  const std::int64_t n = numel_of(op.input_shape);
  detail::DynMat<T> V;
  if (static_cast<std::int64_t>(state.vector.size()) == n) {
    V = Eigen::Map<const detail::DynMat<T>>(state.vector.data(), n, 1);
    const T nrm = V.norm();
    if (nrm > T(0)) V /= nrm;
    else V = detail::random_orthonormal<T>(n, 1, state.seed);
  } else {
    V = detail::random_orthonormal<T>(n, 1, state.seed);
  }
  auto [trace, top] = detail::block_power(op, iters, V);
  state.vector = top;
  if (std::all_of(top.begin(), top.end(), [](T v) { return v == T(0); })) return Tensor<T>::scalar(T(0));
  return l2_norm(op.apply(Tensor<T>(op.input_shape, top)));
}

}  // namespace winnet
