#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace drama {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Deterministic RNG. std::mt19937 would be portable too, but the standard
/// distributions are not; all sampling here is hand-rolled so that runs are
/// bit-identical across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  /// Uniform in [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Knuth's product-of-uniforms method; fine for the small rates used here.
  int poisson(double lambda) {
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform01();
    } while (p > limit);
    return k - 1;
  }

  /// Independent stream derived from this one's seed and a tag. Does not
  /// advance this generator.
  Rng fork(std::string_view tag) const {
    std::uint64_t s = state_ ^ fnv1a64(tag);
    splitmix64(s);
    return Rng(s);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Stable pseudo-random stream for a (salt, key) pair; used for id codes and
/// per-parameter initialisation so values do not depend on creation order.
inline Rng keyed_rng(std::uint64_t salt, std::uint64_t key) {
  std::uint64_t s = salt ^ (key * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull);
  splitmix64(s);
  return Rng(s);
}

}  // namespace drama
