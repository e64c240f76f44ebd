#pragma once

#include <cmath>
#include <cstdint>

namespace nvs {

// Counter-free keyed RNG built on splitmix64. Streams are derived from a
// (seed, key...) tuple so results never depend on thread scheduling or on
// how work is chunked; the same key always yields the same stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Decorrelate trivially related seeds before first use.
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t hash_mix(uint64_t h, uint64_t k) {
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  h ^= k;
  h = h * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL;
  return h;
}

inline Rng keyed_rng(uint64_t seed, uint64_t k1, uint64_t k2 = 0,
                     uint64_t k3 = 0) {
  uint64_t h = hash_mix(0x5bd1e995u, seed);
  h = hash_mix(h, k1);
  h = hash_mix(h, k2);
  h = hash_mix(h, k3);
  return Rng(h);
}

}  // namespace nvs
