#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "winnet/tensor.hpp"

namespace winnet {

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update, in place. `grads[i]` pairs with `params[i]`.
template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw ContractError("adam_step: params/grads count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.vec().size(), T(0));
      state.second_moment.emplace_back(p.vec().size(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("adam_step: state does not match params");
  ++state.step_count;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].vec();
    const auto& g = grads[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (g.size() != p.size() || m.size() != p.size()) throw ContractError("adam_step: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      p[i] = static_cast<T>(p[i] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

/// Uses each parameter's accumulated grad.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  std::vector<std::vector<T>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.grad());
  adam_step<T>(params, std::span<const std::vector<T>>(grads), state);
}

}  // namespace winnet
