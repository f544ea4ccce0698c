#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rce/common.hpp"

namespace rce {

// splitmix64 finalizer, used to decorrelate derived seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic sub-seed for stream `stream` of a root seed. Used so that
// e.g. every dataset sample gets its own generator and the result does not
// depend on sampling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x517cc1b727220a95ULL));
}

// Deterministic random source. The engine is std::mt19937_64, whose output
// sequence is pinned by the standard, and all value mappings are written out
// here rather than delegated to std::*_distribution (which may differ across
// standard libraries). Two runs with the same seed produce bit-identical
// streams on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform on [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform on [a, b).
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw DomainError("Rng::index: n must be positive");
    auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  // Standard normal via Box-Muller; generates pairs and caches the spare.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // 1 - u1 lies in (0, 1], so the log is finite.
    double radius = std::sqrt(-2.0 * std::log1p(-u1));
    double angle = 2.0 * kPi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  std::vector<double> normal_vec(int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (double& x : out) x = normal();
    return out;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace rce
