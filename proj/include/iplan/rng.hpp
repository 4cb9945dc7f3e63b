#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace iplan {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0);

/// Deterministic random source. The numeric transforms are written out here
/// instead of using <random> distributions so that streams are reproducible
/// and the full state serializes as the engine state alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per call, no cached pair).
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace iplan
