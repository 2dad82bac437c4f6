#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace diffdet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Deterministic counter-based generator (splitmix64 stream). All sampling in
/// the project goes through this so runs are reproducible across platforms;
/// std::<random> distributions are avoided on purpose.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xd1b54a32d192ed03ULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Uniform integer in [0, n).
  std::uint64_t integer(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64.
    return n == 0 ? 0 : next_u64() % n;
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(integer(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child stream; parent state advances by one draw.
  Rng fork(std::uint64_t tag) { return Rng(next_u64() ^ splitmix64(tag)); }
  Rng fork(std::string_view tag) { return fork(fnv1a64(tag)); }

private:
  std::uint64_t state_;
};

/// Stable seed for (base, stream, index) triples, used to derive per-scene /
/// per-iteration streams without consuming the parent generator.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
  return splitmix64(splitmix64(base ^ fnv1a64(stream)) ^ index);
}

}  // namespace diffdet
