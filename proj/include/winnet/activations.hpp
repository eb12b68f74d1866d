#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "winnet/ops.hpp"

namespace winnet {

/// sgn(x) * max(|x| - lambda, 0).
///
/// `lambda` holds one threshold, or one per channel of a [C,H,W] / [N,C,H,W]
/// map. `scales` multiplies the thresholds: empty means 1, one entry applies
/// to every sample, N entries apply per sample. The subgradient at |x| ==
/// lambda is 0.
template <typename T>
Tensor<T> soft_threshold(const Tensor<T>& x, const Tensor<T>& lambda, std::span<const T> scales = {}) {
  for (auto v : lambda.vec())
    if (!(v >= 0)) throw ArgumentError("soft_threshold: thresholds must be non-negative");
  for (auto s : scales)
    if (!(s >= 0)) throw ArgumentError("soft_threshold: threshold scale must be non-negative");

  std::int64_t batch = 1, channels = 1, plane = x.numel();
  if (lambda.numel() != 1) {
    const auto L = detail::map_layout(x.shape(), "soft_threshold");
    if (L.channels != lambda.numel())
      throw ContractError("soft_threshold: " + std::to_string(lambda.numel()) + " thresholds for " +
                          std::to_string(L.channels) + " channels");
    batch = L.batch;
    channels = L.channels;
    plane = L.plane();
  } else if (scales.size() > 1) {
    batch = x.dim(0);
    plane = x.numel() / batch;
  }
  if (scales.size() > 1 && static_cast<std::int64_t>(scales.size()) != batch)
    throw ContractError("soft_threshold: scale count does not match batch");
  std::vector<T> sc(static_cast<std::size_t>(batch), T(1));
  for (std::int64_t n = 0; n < batch; ++n)
    if (!scales.empty()) sc[n] = scales.size() == 1 ? scales[0] : scales[n];

  std::vector<T> out(x.vec().size());
  const auto& xv = x.vec();
  const auto& lv = lambda.vec();
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < channels; ++c) {
      const T lam = lv[lambda.numel() == 1 ? 0 : c] * sc[n];
      const std::int64_t base = (n * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T v = xv[base + i];
        out[base + i] = v > lam ? v - lam : (v < -lam ? v + lam : T(0));
      }
    }

  return make_result<T>(x.shape(), std::move(out), {x, lambda},
                        [batch, channels, plane, sc, xn = x.node(), ln = lambda.node()](detail::Node<T>& nd) {
                          auto* gx = parent_grad(nd, 0);
                          auto* gl = parent_grad(nd, 1);
                          const bool shared = ln->data.size() == 1;
                          for (std::int64_t n = 0; n < batch; ++n)
                            for (std::int64_t c = 0; c < channels; ++c) {
                              const T lam = ln->data[shared ? 0 : c] * sc[n];
                              const std::int64_t base = (n * channels + c) * plane;
                              T acc = 0;
                              for (std::int64_t i = 0; i < plane; ++i) {
                                const T v = xn->data[base + i];
                                const T g = nd.grad[base + i];
                                if (v > lam) {
                                  if (gx) (*gx)[base + i] += g;
                                  acc -= g;
                                } else if (v < -lam) {
                                  if (gx) (*gx)[base + i] += g;
                                  acc += g;
                                }
                              }
                              if (gl) (*gl)[shared ? 0 : c] += acc * sc[n];
                            }
                        });
}

template <typename T>
Tensor<T> soft_threshold(const Tensor<T>& x, const Tensor<T>& lambda, T scale) {
  const T s[1] = {scale};
  return soft_threshold(x, lambda, std::span<const T>(s, 1));
}

/// (1/beta) * log(1 + exp(beta * theta)), evaluated without overflow and
/// kept strictly positive.
template <typename T>
Tensor<T> softplus(const Tensor<T>& theta, T beta = T(1)) {
  if (!(beta > 0)) throw ArgumentError("softplus: beta must be positive");
  std::vector<T> out(theta.vec().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T z = beta * theta.vec()[i];
    const T v = (std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)))) / beta;
    out[i] = std::max(v, std::numeric_limits<T>::denorm_min());
  }
  return make_result<T>(theta.shape(), std::move(out), {theta}, [beta, tn = theta.node()](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T z = beta * tn->data[i];
        const T s = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
        (*g)[i] += n.grad[i] * s;
      }
  });
}

/// Inverse of softplus for positive targets; used to initialise raw thresholds.
template <typename T>
T softplus_inverse(T value, T beta = T(1)) {
  const T z = beta * value;
  return (z > T(30) ? z : std::log(std::expm1(z))) / beta;
}

}  // namespace winnet
