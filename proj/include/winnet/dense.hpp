#pragma once

// Small dense matrix ops on rank-2 tensors (row-major), differentiable.

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "winnet/ops.hpp"

namespace winnet {

/// Largest matrix order accepted by sym_eig_min (patch covariances are s^2 x s^2).
inline constexpr std::int64_t kMaxEigenOrder = 1024;

namespace detail {

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2) throw ContractError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> eye(std::int64_t n) {
  auto t = Tensor<T>::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) t.vec()[i * n + i] = T(1);
  return t;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using detail::CMapMat;
  using detail::MapMat;
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ContractError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MapMat<T>(out.data(), m, n).noalias() = CMapMat<T>(a.vec().data(), m, k) * CMapMat<T>(b.vec().data(), k, n);
  return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n, an = a.node(), bn = b.node()](detail::Node<T>& nd) {
    CMapMat<T> G(nd.grad.data(), m, n);
    if (auto* g = parent_grad(nd, 0))
      MapMat<T>(g->data(), m, k).noalias() += G * CMapMat<T>(bn->data.data(), k, n).transpose();
    if (auto* g = parent_grad(nd, 1))
      MapMat<T>(g->data(), k, n).noalias() += CMapMat<T>(an->data.data(), m, k).transpose() * G;
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.vec().size());
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.vec()[i * n + j];
  return make_result<T>({n, m}, std::move(out), {a}, [m, n](detail::Node<T>& nd) {
    if (auto* g = parent_grad(nd, 0))
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) (*g)[i * n + j] += nd.grad[j * m + i];
  });
}

/// Matrix inverse via LU with partial pivoting. d(A^-1) = -A^-1 dA A^-1.
template <typename T>
Tensor<T> inverse(const Tensor<T>& a) {
  using detail::CMapMat;
  using detail::MapMat;
  using detail::RowMat;
  detail::require_matrix(a, "inverse");
  const auto n = a.dim(0);
  if (a.dim(1) != n) throw ContractError("inverse: matrix is not square");
  Eigen::PartialPivLU<RowMat<T>> lu(CMapMat<T>(a.vec().data(), n, n));
  RowMat<T> inv = lu.inverse();
  std::vector<T> out(inv.data(), inv.data() + n * n);
  return make_result<T>({n, n}, std::move(out), {a}, [n](detail::Node<T>& nd) {
    if (auto* g = parent_grad(nd, 0)) {
      CMapMat<T> Inv(nd.data.data(), n, n);
      CMapMat<T> G(nd.grad.data(), n, n);
      MapMat<T>(g->data(), n, n).noalias() -= Inv.transpose() * G * Inv.transpose();
    }
  });
}

template <typename T>
struct EigMin {
  Tensor<T> value;   // [1], differentiable w.r.t. the input matrix
  Tensor<T> vector;  // [n], unit norm, not tracked
};

/// Smallest eigenvalue and a unit eigenvector of a symmetric matrix.
///
/// The gradient of the eigenvalue is v v^T (valid for a simple eigenvalue).
/// Symmetry is checked to 1e-8 relative to the largest entry.
template <typename T>
EigMin<T> sym_eig_min(const Tensor<T>& a) {
  using detail::CMapMat;
  using detail::RowMat;
  detail::require_matrix(a, "sym_eig_min");
  const auto n = a.dim(0);
  if (a.dim(1) != n) throw ContractError("sym_eig_min: matrix is not square");
  if (n > kMaxEigenOrder) throw ArgumentError("sym_eig_min: order exceeds " + std::to_string(kMaxEigenOrder));
  CMapMat<T> A(a.vec().data(), n, n);
  const T mag = std::max<T>(T(1), A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > T(1e-8) * mag)
    throw ArgumentError("sym_eig_min: matrix is not symmetric");

  Eigen::SelfAdjointEigenSolver<RowMat<T>> solver(A);
  const T lambda = solver.eigenvalues()(0);
  std::vector<T> v(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) v[i] = solver.eigenvectors()(i, 0);

  auto value = make_result<T>({1}, {lambda}, {a}, [n, v](detail::Node<T>& nd) {
    if (auto* g = parent_grad(nd, 0))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) (*g)[i * n + j] += nd.grad[0] * v[i] * v[j];
  });
  return {value, Tensor<T>({n}, v)};
}

}  // namespace winnet
