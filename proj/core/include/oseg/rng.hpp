#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace oseg {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed, e.g. per scene or per augment output.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x51ed2701));
}

// Deterministic generator with hand-rolled distributions. std::shuffle and
// std::uniform_*_distribution are implementation-defined, so everything that
// must reproduce bit-exactly across toolchains goes through this.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0xa02b1c3d4e5f6071ULL)) {}

  uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) { return lo + static_cast<int>(uniform_int(static_cast<int64_t>(hi) - lo + 1)); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller; second value discarded to keep the stream simple.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace oseg
