#pragma once

#include <cstdint>
#include <random>

namespace geoflow {

// Deterministic RNG used throughout. All sampling goes through the explicit
// methods below rather than std:: distributions, whose output is not pinned
// by the standard; this keeps results bit-identical across stdlib versions.
//
// Streams are derived, never shared: fork(tag) hashes (state seed, tag) into
// a fresh child seed, so changing the draw order in one consumer cannot
// perturb another. Consumers document their tag constants next to their use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, no cached spare (keeps forks independent
  // of call parity).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double rademacher() { return (engine_() & 1u) ? 1.0 : -1.0; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo is biased for large n; n here is always far below
    // 2^64 so multiply-shift keeps the bias below 2^-53.
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  Rng fork(std::uint64_t tag) const { return Rng(mix(seed_, tag)); }
  Rng fork(std::uint64_t a, std::uint64_t b) const { return fork(a).fork(b); }
  Rng fork(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return fork(a).fork(b).fork(c);
  }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
    // splitmix64 finalizer over the pair.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

// Stream tags for top-level consumers, so seed derivations are stable and
// collision-free across the codebase.
namespace rng_stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kTrainNoise = 3;
inline constexpr std::uint64_t kTrainMask = 4;
inline constexpr std::uint64_t kTrainTime = 5;
inline constexpr std::uint64_t kCfgDropout = 6;
inline constexpr std::uint64_t kDropout = 7;
inline constexpr std::uint64_t kValidation = 8;
inline constexpr std::uint64_t kProbe = 9;
inline constexpr std::uint64_t kSampler = 10;
inline constexpr std::uint64_t kBatch = 11;
}  // namespace rng_stream

}  // namespace geoflow
