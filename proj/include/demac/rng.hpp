#pragma once

// Counter-based random number generation.  Every Monte-Carlo realization and
// every random factor draws from a substream derived from (seed, index), so
// results are bit-for-bit reproducible and independent of scheduling order.
// std::normal_distribution is avoided on purpose: its output sequence is
// implementation-defined, which would break cross-platform reproducibility.

#include <cmath>
#include <complex>
#include <cstdint>

namespace demac {

// Default seed used by the CLI and the samplers when none is given.  A fixed
// constant, never derived from the clock.
inline constexpr std::uint64_t kDefaultSeed = 0x5EED0ull;

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace detail {
inline std::uint64_t mix64(std::uint64_t x) { return splitmix64(x); }
}  // namespace detail

class Substream {
 public:
  Substream(std::uint64_t seed, std::uint64_t index)
      : state_(detail::mix64(detail::mix64(seed) ^
                             detail::mix64(index ^ 0x517cc1b727220a95ull))) {}

  std::uint64_t u64() { return splitmix64(state_); }

  // Uniform on (0, 1]; never zero, so it is safe under a logarithm.
  double uniform_pos() {
    return static_cast<double>((u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  // Standard circularly-symmetric complex Gaussian CN(0, 1): real and
  // imaginary parts are independent N(0, 1/2).  One Box-Muller step per draw.
  std::complex<double> cnormal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-std::log(u1));
    const double phi = 2.0 * M_PI * u2;
    return {r * std::cos(phi), r * std::sin(phi)};
  }

 private:
  std::uint64_t state_;
};

}  // namespace demac
