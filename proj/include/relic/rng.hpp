#pragma once

// Deterministic, stream-splittable random numbers. Every consumer of
// randomness in the library derives its own stream from a base seed plus a
// purpose tag, so results never depend on worker count, thread scheduling,
// or call interleaving.

#include <cmath>
#include <cstdint>
#include <vector>

namespace relic {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Hash a base seed with up to three stream coordinates (purpose, worker,
// round, ...). Chaining splitmix64 keeps distinct tuples decorrelated.
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = splitmix64(base ^ 0x5bf0363546e45365ull);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

// Stream purpose tags. Using fixed constants (not enum ordering) so that
// stream identities stay stable across refactors.
namespace rng_domain {
constexpr uint64_t kInit = 0x01;
constexpr uint64_t kTrial = 0x02;
constexpr uint64_t kPolicy = 0x03;
constexpr uint64_t kShuffle = 0x04;
constexpr uint64_t kDropout = 0x05;
constexpr uint64_t kEvalTrial = 0x06;
constexpr uint64_t kEvalPolicy = 0x07;
constexpr uint64_t kDemo = 0x08;
constexpr uint64_t kEpisodeStart = 0x09;
}  // namespace rng_domain

// xoshiro256++ (Blackman/Vigna), seeded via splitmix64.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t x = seed;
    for (auto& si : s_) {
      x = splitmix64(x);
      si = x;
    }
  }

  uint64_t next_u64() {
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

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n)
  int uniform_int(int n) { return int(next_u64() % uint64_t(n)); }

  double normal() {
    // Box-Muller; one value per call keeps the stream stateless.
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Sample an index from unnormalized non-negative weights.
  int categorical(const double* w, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w[i];
    double r = uniform() * total;
    for (int i = 0; i < n; ++i) {
      r -= w[i];
      if (r < 0.0) return i;
    }
    return n - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[size_t(i)], v[size_t(j)]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace relic
