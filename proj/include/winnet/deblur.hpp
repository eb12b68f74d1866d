#pragma once

// Plug-and-play deblurring by half-quadratic splitting. The data step is the
// closed-form circular deconvolution
//   x = IFFT[(conj(K) Y + alpha Z) / (|K|^2 + alpha)]
// and the prior step is the blind denoiser, with NENet supplying the noise
// level that drives both the penalty weight and the denoising strength.

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "winnet/fft.hpp"
#include "winnet/pipeline.hpp"
#include "winnet/winnet.hpp"

namespace winnet {

/// Whitespace-separated rows of non-negative numbers; odd square-or-rectangular
/// size; normalised to sum 1. Returned as [kh, kw].
template <typename T>
Tensor<T> load_kernel(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DeblurError("cannot open kernel file '" + path + "'");
  std::vector<double> vals;
  std::int64_t rows = 0, cols = -1;
  for (std::string line; std::getline(f, line);) {
    std::istringstream ls(line);
    std::vector<double> row;
    for (std::string tok; ls >> tok;) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DeblurError("kernel file '" + path + "': bad number '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (cols >= 0 && static_cast<std::int64_t>(row.size()) != cols)
      throw DeblurError("kernel file '" + path + "': rows have different lengths");
    cols = static_cast<std::int64_t>(row.size());
    vals.insert(vals.end(), row.begin(), row.end());
    ++rows;
  }
  if (rows == 0) throw DeblurError("kernel file '" + path + "' is empty");
  if (rows % 2 == 0 || cols % 2 == 0) throw DeblurError("kernel file '" + path + "': size must be odd");
  double s = 0;
  for (double v : vals) {
    if (!(v >= 0) || !std::isfinite(v)) throw DeblurError("kernel file '" + path + "': negative or non-finite entry");
    s += v;
  }
  if (!(s > 0)) throw DeblurError("kernel file '" + path + "': entries sum to zero");
  std::vector<T> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) out[i] = static_cast<T>(vals[i] / s);
  return Tensor<T>({rows, cols}, std::move(out));
}

/// Transfer function of circular convolution with `k` (centre at the origin)
/// on an H x W grid.
template <typename T>
ComplexPlane psf2otf(const Tensor<T>& k, std::int64_t H, std::int64_t W) {
  const std::int64_t kh = k.dim(0), kw = k.dim(1);
  if (kh > H || kw > W) throw ArgumentError("psf2otf: kernel larger than the image");
  ComplexPlane p(H, W);
  for (std::int64_t i = 0; i < kh; ++i)
    for (std::int64_t j = 0; j < kw; ++j) {
      const std::int64_t y = ((i - kh / 2) % H + H) % H, x = ((j - kw / 2) % W + W) % W;
      p.at(y, x) += static_cast<double>(k.vec()[i * kw + j]);
    }
  return fft2(p);
}

namespace detail {

template <typename T>
ComplexPlane to_plane(const Tensor<T>& img) {
  const std::int64_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
  ComplexPlane p(H, W);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<double>(img.vec()[i]);
  return p;
}

template <typename T>
Tensor<T> from_plane(const ComplexPlane& p, const Shape& shape) {
  std::vector<T> out(p.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(p.data[i].real());
  return Tensor<T>(shape, std::move(out));
}

inline std::int64_t image_height(const Shape& s) { return s[s.size() - 2]; }
inline std::int64_t image_width(const Shape& s) { return s[s.size() - 1]; }

}  // namespace detail

/// Circular convolution y = k (*) x.
template <typename T>
Tensor<T> blur_circular(const Tensor<T>& x, const Tensor<T>& k) {
  const auto H = detail::image_height(x.shape()), W = detail::image_width(x.shape());
  auto K = psf2otf(k, H, W);
  auto X = fft2(detail::to_plane(x));
  for (std::size_t i = 0; i < X.data.size(); ++i) X.data[i] *= K.data[i];
  return detail::from_plane<T>(ifft2(X), x.shape());
}

/// argmin_x ||y - k (*) x||^2 + alpha ||x - z||^2 with circular boundaries.
template <typename T>
Tensor<T> x_subproblem(const Tensor<T>& y, const Tensor<T>& k, const Tensor<T>& z, double alpha) {
  if (!(alpha > 0) || !std::isfinite(alpha)) throw ArgumentError("x_subproblem: alpha must be > 0");
  if (y.shape() != z.shape()) throw ContractError("x_subproblem: y and z differ in shape");
  const auto H = detail::image_height(y.shape()), W = detail::image_width(y.shape());
  if (y.numel() != H * W) throw ContractError("x_subproblem: expected a single-channel image");
  auto K = psf2otf(k, H, W);
  auto Y = fft2(detail::to_plane(y));
  auto Z = fft2(detail::to_plane(z));
  for (std::size_t i = 0; i < Y.data.size(); ++i)
    Y.data[i] = (std::conj(K.data[i]) * Y.data[i] + alpha * Z.data[i]) / (std::norm(K.data[i]) + alpha);
  return detail::from_plane<T>(ifft2(Y), y.shape());
}

/// Blends the image with its circularly blurred copy near the borders, using
/// the kernel's autocorrelation profile along each axis as the ramp.
template <typename T>
Tensor<T> edge_taper(const Tensor<T>& y, const Tensor<T>& k) {
  const auto H = detail::image_height(y.shape()), W = detail::image_width(y.shape());
  const std::int64_t kh = k.dim(0), kw = k.dim(1);
  auto ramp = [](std::vector<double> proj, std::int64_t n) {
    // circular autocorrelation of the projection, normalised to peak 1
    std::vector<double> a(static_cast<std::size_t>(n), 0.0);
    const auto m = static_cast<std::int64_t>(proj.size());
    for (std::int64_t s = -(m - 1); s <= m - 1; ++s) {
      double v = 0;
      for (std::int64_t i = 0; i < m; ++i)
        if (i + s >= 0 && i + s < m) v += proj[i] * proj[i + s];
      a[static_cast<std::size_t>(((s % n) + n) % n)] += v;
    }
    const double peak = a[0];
    std::vector<double> w(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) w[i] = peak > 0 ? 1.0 - a[i] / peak : 1.0;
    return w;
  };
  std::vector<double> py(static_cast<std::size_t>(kh), 0.0), px(static_cast<std::size_t>(kw), 0.0);
  for (std::int64_t i = 0; i < kh; ++i)
    for (std::int64_t j = 0; j < kw; ++j) {
      py[i] += k.vec()[i * kw + j];
      px[j] += k.vec()[i * kw + j];
    }
  // Index 0 of a ramp sits on the wrap-around seam, i.e. the image border.
  const auto wy = ramp(py, H), wx = ramp(px, W);
  auto blurred = blur_circular(y, k);
  std::vector<T> out(y.vec());
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j) {
      const double a = wy[static_cast<std::size_t>(i)] * wx[static_cast<std::size_t>(j)];
      const auto idx = static_cast<std::size_t>(i * W + j);
      out[idx] = static_cast<T>(a * y.vec()[idx] + (1 - a) * blurred.vec()[idx]);
    }
  return Tensor<T>(y.shape(), std::move(out));
}

struct DeblurOptions {
  double lambda = 0.23;
  int max_iters = 30;
  double beta_floor = 0.5;      // lower bound on the NENet estimate of y
  double forced_decay = 0.8;    // applied when NENet does not decrease beta
  double initial_factor = 10.0; // beta_1 = initial_factor * beta_0
  double denoise_factor = 2.0;  // z_k = denoise(x_k, denoise_factor * beta_{k+1})
  bool taper = true;
};

struct HqsStep {
  int iter = 0;
  double beta = 0;  // beta_k used for the data step of this iteration
  double next_beta = 0;
  bool forced = false;
  double psnr = std::numeric_limits<double>::quiet_NaN();  // of z_k when a reference is given
};

template <typename T>
struct DeblurResult {
  Tensor<T> image;
  double beta0 = 0;
  std::vector<HqsStep> trace;
};

template <typename T>
DeblurResult<T> hqs_deblur(const Tensor<T>& y, const Tensor<T>& k, const WinnetModel<T>& model,
                           const DeblurOptions& opt = {}, const Tensor<T>* reference = nullptr,
                           std::ostream* log = nullptr) {
  NoGradGuard ng;
  if (!(opt.lambda > 0)) throw ArgumentError("hqs_deblur: lambda must be > 0");
  if (opt.max_iters < 1) throw ArgumentError("hqs_deblur: max_iters must be >= 1");
  if (k.rank() != 2 || k.dim(0) % 2 == 0 || k.dim(1) % 2 == 0) throw ArgumentError("hqs_deblur: kernel must be odd-sized");
  double ks = 0;
  for (auto v : k.vec()) ks += v;
  if (std::abs(ks - 1.0) > 1e-6) throw ArgumentError("hqs_deblur: kernel must sum to 1");

  auto finite = [](const Tensor<T>& t, const char* what, int it) {
    for (auto v : t.vec())
      if (!std::isfinite(static_cast<double>(v)))
        throw DeblurError(std::string("deblur: non-finite ") + what + " at iteration " + std::to_string(it));
  };
  const Tensor<T> yt = opt.taper ? edge_taper(y, k) : y;
  DeblurResult<T> res;
  const double est = estimate_noise(y, model);
  if (!std::isfinite(est)) throw DeblurError("deblur: non-finite noise estimate of the input");
  res.beta0 = std::max(est, opt.beta_floor);
  if (log) *log << "beta0\t" << res.beta0 << "\n";
  double beta = opt.initial_factor * res.beta0;
  Tensor<T> z = yt;
  for (int it = 1; beta > res.beta0 && it <= opt.max_iters; ++it) {
    HqsStep st;
    st.iter = it;
    st.beta = beta;
    const double alpha = opt.lambda * res.beta0 * res.beta0 / (beta * beta);
    auto x = x_subproblem(yt, k, z, alpha);
    finite(x, "x", it);
    double next = estimate_noise(x, model);
    if (!std::isfinite(next)) throw DeblurError("deblur: non-finite noise estimate at iteration " + std::to_string(it));
    if (next >= beta) {
      next = opt.forced_decay * beta;
      st.forced = true;
    }
    st.next_beta = next;
    z = denoise(x, opt.denoise_factor * next, model);
    finite(z, "z", it);
    if (reference) st.psnr = psnr(z, *reference);
    if (log) {
      *log << "iter\t" << it << "\tbeta\t" << beta << "\tnext_beta\t" << next;
      if (st.forced) *log << "\tforced";
      if (reference) *log << "\tpsnr\t" << st.psnr;
      *log << "\n";
    }
    res.trace.push_back(st);
    beta = next;
  }
  res.image = z;
  return res;
}

}  // namespace winnet
