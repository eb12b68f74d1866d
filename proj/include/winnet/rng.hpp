#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, counter), so noise fields do not depend on the standard library's
// distribution implementations:
//
//   bits(seed, c)  = splitmix64(splitmix64(seed) + c)
//   uniform(seed, c) = (bits >> 11) * 2^-53              in [0, 1)
//   normal(seed, i): k = i / 2,
//       r = sqrt(-2 ln(1 - uniform(seed, 2k))), t = 2 pi uniform(seed, 2k + 1)
//       z = r cos t for even i, r sin t for odd i          (Box-Muller)

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace winnet {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline double uniform_at(std::uint64_t seed, std::uint64_t counter) {
  const std::uint64_t bits = splitmix64(splitmix64(seed) + counter);
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline double normal_at(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t k = index / 2;
  const double r = std::sqrt(-2.0 * std::log(1.0 - uniform_at(seed, 2 * k)));
  const double t = 2.0 * std::numbers::pi * uniform_at(seed, 2 * k + 1);
  return (index % 2 == 0) ? r * std::cos(t) : r * std::sin(t);
}

/// Derives an independent stream seed, e.g. per epoch or per sample.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ (b * 0xD1B54A32D192ED03ull));
}

/// Sequential view over the counter streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  double uniform() { return uniform_at(seed_, counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_at(seed_ ^ 0x5DEECE66Dull, normal_counter_++); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n; }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::uint64_t normal_counter_ = 0;
};

}  // namespace winnet
