#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace cpnoise {

// All randomness in the library flows through this wrapper so that runs are
// reproducible bit-for-bit: the engine (mt19937_64) is pinned by the C++
// standard, and every distribution below is implemented explicitly instead
// of relying on the implementation-defined std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // splitmix64 step; used to derive independent child seeds from a root
  // seed and an index, so trial k never depends on trial ordering.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t derive(std::uint64_t root, std::uint64_t index) {
    return mix(root ^ mix(index + 0x6a09e667f3bcc909ULL));
  }

  Rng child(std::uint64_t index) { return Rng(derive(engine_(), index)); }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in {0, ..., n-1} by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::domain_error("Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi() * u2);
  }

  // Student t with 1 degree of freedom (standard Cauchy).
  double student_t1() {
    return std::tan(pi() * (uniform() - 0.5));
  }

  // Standard Gumbel (location 0, scale 1).
  double gumbel() { return -std::log(-std::log(uniform_pos())); }

  // Poisson by inversion; fine for the small means used here.
  int poisson(double mean) {
    if (mean < 0) throw std::domain_error("Rng::poisson: negative mean");
    double p = std::exp(-mean);
    double cdf = p;
    const double u = uniform();
    int k = 0;
    while (u > cdf && k < 10000) {
      ++k;
      p *= mean / k;
      cdf += p;
    }
    return k;
  }

  bool bernoulli(double p) { return uniform() < p; }

  static constexpr double pi() { return 3.141592653589793238462643383279502884; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cpnoise
