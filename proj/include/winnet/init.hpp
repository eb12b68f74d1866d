#pragma once

#include <cmath>
#include <numbers>

#include "winnet/rng.hpp"
#include "winnet/tensor.hpp"

namespace winnet {

/// He/Kaiming normal initialisation, std = gain / sqrt(fan_in), for a conv
/// kernel [Cout, Cin/groups, kh, kw]. gain = sqrt(2) suits ReLU; layers
/// followed by a near-linear activation use gain 1.
template <typename T>
Tensor<T> kaiming_normal(const Shape& shape, Rng& rng, double gain = std::numbers::sqrt2) {
  const std::int64_t fan_in = shape.at(1) * shape.at(2) * shape.at(3);
  const double std = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(std * rng.normal());
  return Tensor<T>(shape, std::move(v), true);
}

template <typename T>
Tensor<T> trainable_full(const Shape& shape, T value) {
  return Tensor<T>::full(shape, value, true);
}

}  // namespace winnet
