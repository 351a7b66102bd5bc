// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace datadream {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic sub-seed derivation: mixes the master seed with a stage
// label and an index, so parallel jobs get independent streams regardless
// of scheduling order.
inline uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t index = 0) {
  uint64_t h = splitmix64(master);
  for (char c : label) h = splitmix64(h ^ static_cast<uint64_t>(static_cast<unsigned char>(c)));
  return splitmix64(h ^ splitmix64(index + 0x51ED270B10D1FULL));
}

// Seeded stream of uniforms and gaussians. Distributions are hand-rolled
// on top of mt19937_64 so streams are bit-reproducible across standard
// library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t bounded(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // standard normal via Box-Muller, fixed two-uniform consumption per pair
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  template <class S>
  MatX<S> gaussian_matrix(Index rows, Index cols, double stddev = 1.0) {
    MatX<S> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(stddev * gaussian());
    return m;
  }

  template <class S>
  MatX<S> uniform_matrix(Index rows, Index cols, double lo, double hi) {
    MatX<S> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(uniform(lo, hi));
    return m;
  }

  // Fisher-Yates shuffle
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace datadream
