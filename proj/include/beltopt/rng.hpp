#pragma once

#include <cmath>
#include <cstdint>

namespace beltopt {

// Counter-based 64-bit generator (SplitMix64 finalizer in counter mode).
// The algorithm is pinned so that any implementation of the file formats can
// reproduce the experiment streams exactly:
//
//   mix(z):  z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
//            z ^= z >> 27; z *= 0x94D049BB133111EB
//            z ^= z >> 31
//   next_u64(key, n):   mix(key + n * 0x9E3779B97F4A7C15),  n = 1, 2, ...
//   stream key for run r under master seed s:  mix(s) ^ mix(0x5851F42D4C957F2D + r)
//   uniform01:  (next_u64 >> 11) * 2^-53, shifted into (0, 1]
//   gaussian:   sqrt(-2 ln u1) * cos(2 pi u2), one pair of uniforms per draw
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  // Independent stream for one run index under a master seed.
  static CounterRng stream(std::uint64_t master_seed, std::uint64_t run_index) {
    return CounterRng(mix(master_seed) ^ mix(0x5851F42D4C957F2DULL + run_index));
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform on (0, 1]; never returns 0 so it is safe under log().
  double uniform01() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; draws exactly two uniforms.
  double gaussian() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace beltopt
