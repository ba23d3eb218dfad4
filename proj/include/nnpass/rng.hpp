#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nnpass/errors.hpp"

namespace nnpass {

// FNV-1a, also used for content hashing of artifacts.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random stream. Every consumer derives its own stream from the
// single experiment seed and a stream name, so results do not depend on the
// order in which independent components draw.
class RngStream {
public:
  explicit RngStream(uint64_t seed) : eng_(seed) {}

  RngStream(uint64_t root_seed, std::string_view name)
      : eng_(splitmix64(root_seed ^ fnv1a(name))) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53 random bits; distribution code is hand-rolled so
  // streams are bit-identical across standard library implementations.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; one normal per pair of uniforms keeps the stream layout simple.
  double normal() {
    double u1 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform01();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Unbiased integer in [0, n) by rejection.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw RangeError("uniform_int: n must be positive");
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // First k elements of a random permutation of [0, n); used for picking
  // perturbation sites without replacement.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw RangeError("sample_without_replacement: k out of range");
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + static_cast<int>(uniform_int(static_cast<uint64_t>(n - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(k));
    return idx;
  }

private:
  std::mt19937_64 eng_;
};

// Root of the experiment's seed tree.
class SeedTree {
public:
  explicit SeedTree(uint64_t root) : root_(root) {}
  uint64_t root() const { return root_; }
  RngStream stream(std::string_view name) const { return RngStream(root_, name); }
  uint64_t derive(std::string_view name) const { return splitmix64(root_ ^ fnv1a(name)); }

private:
  uint64_t root_;
};

}  // namespace nnpass
