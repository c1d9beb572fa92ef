#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace spst {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible across platforms and serializable into checkpoints
// (std::mt19937 + std::*_distribution make no cross-build guarantees).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
    have_cached_ = false;
    cached_ = 0.0;
  }

  uint64_t u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Unbiased via rejection.
  uint64_t below(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal, Box-Muller, pair cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  bool coin(double p) { return uniform() < p; }

  // State is 4 words plus the Box-Muller cache, checkpointable byte-exactly.
  struct State {
    std::array<uint64_t, 4> s;
    uint64_t cached_bits;
    uint8_t have_cached;
  };

  State state() const {
    State st;
    st.s = s_;
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(cached_));
    __builtin_memcpy(&bits, &cached_, sizeof(bits));
    st.cached_bits = bits;
    st.have_cached = have_cached_ ? 1 : 0;
    return st;
  }

  void restore(const State& st) {
    s_ = st.s;
    __builtin_memcpy(&cached_, &st.cached_bits, sizeof(cached_));
    have_cached_ = st.have_cached != 0;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::array<uint64_t, 4> s_{};
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace spst
