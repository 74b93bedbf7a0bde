#pragma once

#include <cmath>
#include <cstdint>

namespace sgqn {

// splitmix64 step, used for seed derivation and stream splitting.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t hash_seed(uint64_t seed, uint64_t tag) {
  uint64_t s = seed ^ (0x2545f4914f6cdd1dULL * (tag + 1));
  uint64_t a = splitmix64(s);
  uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

// Deterministic RNG with hand-rolled distributions so draws are stable
// across standard libraries. xoshiro256** core.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (int i = 0; i < 4; ++i) s_[i] = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Box-Muller; consumes exactly two draws per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

// Named sub-streams keep independent concerns (environment, actor noise,
// replay sampling, augmentation, ...) from perturbing each other's draws.
enum class Stream : uint64_t {
  init = 1,
  env = 2,
  actor = 3,
  replay = 4,
  augment = 5,
  eval = 6,
  warmup = 7,
};

inline Rng make_stream(uint64_t master_seed, Stream which) {
  return Rng(hash_seed(master_seed, static_cast<uint64_t>(which)));
}

}  // namespace sgqn
