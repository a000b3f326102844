#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace nsda {

// Deterministic random source used everywhere randomness is needed.
//
// The generator is xoshiro256++ 1.0 (Blackman & Vigna), state-expanded from
// the 64-bit seed with splitmix64. Both algorithms are fixed published
// integer recipes, so identical seeds produce identical streams on every
// platform and compiler. Floating-point draws are derived from the integer
// stream with fixed arithmetic; no libc or libstdc++ distribution is
// involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; useful where log() or an open lower bound is needed.
  double next_double_open() { return 1.0 - next_double(); }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Standard normal via Box-Muller. Two uniforms are consumed per call and
  // the second branch is discarded, keeping the stream position independent
  // of call history.
  double next_normal() {
    const double u1 = next_double_open();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      using std::swap;
      swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
};

// Stream derivation for independent sub-experiments (fold, run, detector...).
// splitmix64 chaining over the tuple; collision-free in practice and stable
// across platforms.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t x = master;
  std::uint64_t s = Rng::splitmix64(x);
  x ^= a * 0x9e3779b97f4a7c15ULL;
  s ^= Rng::splitmix64(x);
  x ^= b * 0xbf58476d1ce4e5b9ULL;
  s ^= Rng::splitmix64(x);
  x ^= c * 0x94d049bb133111ebULL;
  s ^= Rng::splitmix64(x);
  return s;
}

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace nsda
