#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "ivat/error.hpp"

namespace ivat {

inline std::uint64_t splitmix64_once(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Seed derivation: every random stream in a run is named by a role string
// (and optionally a step/epoch index) and derived from the single top-level
// seed. stream = splitmix64(splitmix64(root ^ fnv1a(role)) ^ index).
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view role) {
  return splitmix64_once(root ^ fnv1a64(role));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view role, std::uint64_t index) {
  return splitmix64_once(derive_seed(root, role) ^ index);
}

// Deterministic generator with hand-rolled distributions so that streams are
// bit-identical across standard library implementations. std::mt19937_64 is
// specified exactly; std::normal_distribution and std::shuffle are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64_once(seed)) {}

  std::uint64_t next_u64() {
    // xorshift-multiply step of splitmix64 over an advancing counter.
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling keeps the stream unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) raise(ErrorKind::contract, "Rng::below requires n > 0");
    std::uint64_t bound = ~0ull - ~0ull % n;
    std::uint64_t v = next_u64();
    while (v >= bound) v = next_u64();
    return v % n;
  }

  // Box-Muller. The pair is cached, so one logical draw may consume zero or
  // two raw words; callers that care about stream position should not
  // interleave normal() with other draws mid-pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // Fisher-Yates, descending index order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ivat
