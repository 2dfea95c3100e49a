// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

// Counter-style splitmix64 generator.  Sample streams are derived from a root
// seed and a sample index, so estimates are reproducible independent of how
// samples are distributed over workers.

namespace stomsfem {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform on [0,1)
  double next_uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double a, double b) { return a + (b - a) * next_uniform01(); }

  // standard normal via Box-Muller; pairs are generated and cached
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = next_uniform01();
    } while (u1 <= 0.0);
    u2 = next_uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  static std::uint64_t stream_seed(std::uint64_t root, std::uint64_t index) {
    // one splitmix64 scramble decorrelates consecutive indices
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace stomsfem
