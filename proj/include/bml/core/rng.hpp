#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

#include "bml/core/common.hpp"

namespace bml {

// Seed mixing and the distributions below are spelled out in full so that a
// stream is a pure function of its seed, independent of the standard
// library's unspecified distribution algorithms.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a path of indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t p : path) s = splitmix64(s ^ (p + 0x632be59bd9b4e019ULL));
  return s;
}

inline std::uint64_t hash_str(const std::string& s) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  std::uint64_t bits() { return eng_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps the result unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    check(n > 0, "uniform_int: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// k distinct indices drawn from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k) {
    check(k <= n, "sample_without_replacement: k=", k, " exceeds n=", n);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  }

private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bml
