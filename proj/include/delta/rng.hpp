#pragma once

#include <cstdint>
#include <random>

namespace delta {

// Deterministic RNG. std::mt19937_64 is fully specified by the standard; the
// standard distributions are not, so uniforms are derived here by hand to keep
// generated data bit-identical everywhere.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) { return engine_() % n; }

  // Box-Muller, always consumes two draws.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derive an independent stream, e.g. one per sequence.
  Rng fork(std::uint64_t stream) {
    return Rng(engine_() ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
  }

private:
  std::mt19937_64 engine_;
};

} // namespace delta
