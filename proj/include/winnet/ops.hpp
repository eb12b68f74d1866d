#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "winnet/tensor.hpp"

namespace winnet {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

/// Layout of a [C,H,W] or [N,C,H,W] feature map.
struct MapLayout {
  std::int64_t batch, channels, height, width;
  std::int64_t plane() const { return height * width; }
};

inline MapLayout map_layout(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw ContractError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + shape_str(s));
}

inline Shape map_shape(const Shape& like, std::int64_t channels) {
  Shape out = like;
  out[out.size() - 3] = channels;
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.vec());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.vec()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = parent_grad(n, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.vec());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.vec()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    if (auto* g = parent_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
  });
}

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.vec());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.vec()[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a = a.node(), b = b.node()](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * b->data[i];
    if (auto* g = parent_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * a->data[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.vec());
  for (auto& v : out) v *= s;
  return make_result<T>(a.shape(), std::move(out), {a}, [s](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.vec());
  for (auto& v : out) v += s;
  return make_result<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  });
}

/// a * s where s is a one-element tensor.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1) throw ContractError("mul_scalar: multiplier must have one element");
  const T sv = s.item();
  std::vector<T> out(a.vec());
  for (auto& v : out) v *= sv;
  return make_result<T>(a.shape(), std::move(out), {a, s}, [a = a.node(), sv](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += sv * n.grad[i];
    if (auto* g = parent_grad(n, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * a->data[i];
      (*g)[0] += acc;
    }
  });
}

/// Scales sample i of a batched tensor by factors[i] (constants).
template <typename T>
Tensor<T> scale_per_sample(const Tensor<T>& a, std::span<const T> factors) {
  const auto batch = static_cast<std::size_t>(a.dim(0));
  if (factors.size() != batch) throw ContractError("scale_per_sample: factor count does not match batch");
  const std::size_t stride = a.vec().size() / batch;
  std::vector<T> f(factors.begin(), factors.end());
  std::vector<T> out(a.vec());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f[i / stride];
  return make_result<T>(a.shape(), std::move(out), {a}, [f, stride](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += f[i / stride] * n.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.vec()) acc += v;
  return make_result<T>({1}, {acc}, {a}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (auto& v : *g) v += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a) {
  T acc = 0;
  for (auto v : a.vec()) acc += v * v;
  return make_result<T>({1}, {acc}, {a}, [a = a.node()](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += T(2) * a->data[i] * n.grad[0];
  });
}

/// Elementwise sqrt; gradient is zero where the input is not positive.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  std::vector<T> out(a.vec().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.vec()[i] > 0 ? std::sqrt(a.vec()[i]) : T(0);
  return make_result<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (n.data[i] > 0) (*g)[i] += n.grad[i] / (T(2) * n.data[i]);
  });
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& a) {
  return sqrt(sum_squares(a));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ContractError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_result<T>(std::move(shape), a.vec(), {a}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
  });
}

/// Channels [begin, end) of a [C,H,W] / [N,C,H,W] map.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t end) {
  const auto L = detail::map_layout(x.shape(), "slice_channels");
  if (begin < 0 || end > L.channels || begin >= end)
    throw ContractError("slice_channels: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  const std::int64_t C = end - begin, P = L.plane();
  std::vector<T> out(static_cast<std::size_t>(L.batch * C * P));
  for (std::int64_t b = 0; b < L.batch; ++b)
    std::copy_n(x.vec().begin() + (b * L.channels + begin) * P, C * P, out.begin() + b * C * P);
  return make_result<T>(detail::map_shape(x.shape(), C), std::move(out), {x},
                        [L, begin, C, P](detail::Node<T>& n) {
                          if (auto* g = parent_grad(n, 0))
                            for (std::int64_t b = 0; b < L.batch; ++b)
                              for (std::int64_t i = 0; i < C * P; ++i)
                                (*g)[(b * L.channels + begin) * P + i] += n.grad[b * C * P + i];
                        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto La = detail::map_layout(a.shape(), "concat_channels");
  const auto Lb = detail::map_layout(b.shape(), "concat_channels");
  if (a.rank() != b.rank() || La.batch != Lb.batch || La.height != Lb.height || La.width != Lb.width)
    throw ContractError("concat_channels: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::int64_t P = La.plane(), C = La.channels + Lb.channels;
  std::vector<T> out(static_cast<std::size_t>(La.batch * C * P));
  for (std::int64_t n = 0; n < La.batch; ++n) {
    std::copy_n(a.vec().begin() + n * La.channels * P, La.channels * P, out.begin() + n * C * P);
    std::copy_n(b.vec().begin() + n * Lb.channels * P, Lb.channels * P, out.begin() + (n * C + La.channels) * P);
  }
  return make_result<T>(detail::map_shape(a.shape(), C), std::move(out), {a, b},
                        [La, Lb, C, P](detail::Node<T>& nd) {
                          if (auto* g = parent_grad(nd, 0))
                            for (std::int64_t n = 0; n < La.batch; ++n)
                              for (std::int64_t i = 0; i < La.channels * P; ++i)
                                (*g)[n * La.channels * P + i] += nd.grad[n * C * P + i];
                          if (auto* g = parent_grad(nd, 1))
                            for (std::int64_t n = 0; n < Lb.batch; ++n)
                              for (std::int64_t i = 0; i < Lb.channels * P; ++i)
                                (*g)[n * Lb.channels * P + i] += nd.grad[(n * C + La.channels) * P + i];
                        });
}

/// Reverses the last two axes.
template <typename T>
Tensor<T> flip_spatial(const Tensor<T>& x) {
  if (x.rank() < 2) throw ContractError("flip_spatial needs rank >= 2");
  const std::int64_t H = x.dim(x.rank() - 2), W = x.dim(x.rank() - 1);
  const std::int64_t planes = x.numel() / (H * W);
  std::vector<T> out(x.vec().size());
  auto idx = [H, W](std::int64_t p, std::int64_t i, std::int64_t j) { return (p * H + i) * W + j; };
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) out[idx(p, i, j)] = x.vec()[idx(p, H - 1 - i, W - 1 - j)];
  return make_result<T>(x.shape(), std::move(out), {x}, [planes, H, W, idx](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t i = 0; i < H; ++i)
          for (std::int64_t j = 0; j < W; ++j) (*g)[idx(p, H - 1 - i, W - 1 - j)] += n.grad[idx(p, i, j)];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.vec());
  for (auto& v : out) v = v > 0 ? v : T(0);
  return make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (n.data[i] > 0) (*g)[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.vec().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.vec()[i];
    out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& n) {
    if (auto* g = parent_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * n.data[i] * (T(1) - n.data[i]);
  });
}

/// Mean over everything but the leading axis: [N, ...] -> [N].
template <typename T>
Tensor<T> mean_per_sample(const Tensor<T>& x) {
  const std::int64_t N = x.dim(0), inner = x.numel() / N;
  std::vector<T> out(static_cast<std::size_t>(N), T(0));
  for (std::int64_t n = 0; n < N; ++n) {
    T acc = 0;
    for (std::int64_t i = 0; i < inner; ++i) acc += x.vec()[n * inner + i];
    out[n] = acc / static_cast<T>(inner);
  }
  return make_result<T>({N}, std::move(out), {x}, [N, inner](detail::Node<T>& nd) {
    if (auto* g = parent_grad(nd, 0))
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t i = 0; i < inner; ++i) (*g)[n * inner + i] += nd.grad[n] / static_cast<T>(inner);
  });
}

}  // namespace winnet
