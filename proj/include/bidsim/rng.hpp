#pragma once

#include <cmath>
#include <cstdint>

namespace bidsim {

// Counter-based deterministic generator: the stream for (seed, counter) is a
// pure function of both, so round k can be drawn without drawing rounds < k.
// Core mixer is splitmix64; draws derive from it without std:: distributions
// so that byte-identical replay does not depend on the standard library.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t counter)
      : state_(mix(mix(seed ^ 0x9e3779b97f4a7c15ULL) ^ counter)) {}

  explicit CounterRng(std::uint64_t seed) : CounterRng(seed, 0) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1), safe inside logs.
  double next_open() {
    double u = next_double();
    return u > 0.0 ? u : 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double next_gaussian() {
    double u1 = next_open();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Composable sub-seed for derived streams.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix(mix(seed ^ mix(a)) ^ mix(b ^ 0x94d049bb133111ebULL));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace bidsim
