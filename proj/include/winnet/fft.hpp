#pragma once

// 2-D discrete Fourier transform of complex planes (any extents; FFTW picks
// the algorithm). fft2 is unnormalised, ifft2 divides by H*W.

#include <fftw3.h>

#include <complex>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <vector>

#include "winnet/errors.hpp"

namespace winnet {

struct ComplexPlane {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::complex<double>> data;  // row-major

  ComplexPlane() = default;
  ComplexPlane(std::int64_t h, std::int64_t w) : height(h), width(w), data(static_cast<std::size_t>(h * w)) {}

  std::complex<double>& at(std::int64_t y, std::int64_t x) { return data[static_cast<std::size_t>(y * width + x)]; }
  const std::complex<double>& at(std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>(y * width + x)];
  }
};

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

inline ComplexPlane fftw_transform(const ComplexPlane& in, int sign) {
  if (in.height <= 0 || in.width <= 0 || static_cast<std::int64_t>(in.data.size()) != in.height * in.width)
    throw ContractError("fft2: malformed plane");
  ComplexPlane out(in.height, in.width);
  auto* src = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * in.data.size()));
  auto* dst = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * in.data.size()));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(in.height), static_cast<int>(in.width), src, dst, sign, FFTW_ESTIMATE);
  }
  std::memcpy(src, in.data.data(), sizeof(fftw_complex) * in.data.size());
  fftw_execute(plan);
  std::memcpy(static_cast<void*>(out.data.data()), dst, sizeof(fftw_complex) * in.data.size());
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(src);
  fftw_free(dst);
  return out;
}

}  // namespace detail

inline ComplexPlane fft2(const ComplexPlane& x) { return detail::fftw_transform(x, FFTW_FORWARD); }

inline ComplexPlane ifft2(const ComplexPlane& x) {
  ComplexPlane out = detail::fftw_transform(x, FFTW_BACKWARD);
  const double norm = 1.0 / static_cast<double>(x.height * x.width);
  for (auto& v : out.data) v *= norm;
  return out;
}

}  // namespace winnet
