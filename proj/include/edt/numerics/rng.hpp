#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace edt {

/// Seeded random stream. Draws are produced by explicit transforms of a
/// mt19937_64 engine, so the sequence for a given seed is identical on every
/// platform (std::*_distribution output is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  /// Uniform integer in [0, n), rejection sampled (no modulo bias).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream keyed by `stream`; does not advance this one.
  Rng fork(std::uint64_t stream) const;

  /// Full engine state, including the cached normal, as text.
  std::string state() const;
  void restore(const std::string& text);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer, used for deriving per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace edt
