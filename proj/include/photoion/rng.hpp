#ifndef PHOTOION_RNG_HPP
#define PHOTOION_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace photoion {

/// One step of the SplitMix64 generator; advances `state` and returns the
/// mixed output.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Name of the sub-seed derivation scheme, recorded in run manifests.
inline constexpr const char* kSeedScheme = "splitmix64-path-v1";

/// Derives a sub-seed from a master seed and a path of counters
/// (stream id, point index, cycle index, ...). Each path element is folded
/// through SplitMix64, so sibling paths give statistically independent
/// streams and the result depends only on (master, path), never on the
/// order in which work is scheduled.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t state = master;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t k : path) {
    state = out ^ (k * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL);
    out = splitmix64(state);
  }
  return out;
}

/// Random source used throughout the simulator. Wraps `std::mt19937_64`
/// (whose output sequence is fixed by the standard) and derives all
/// variates itself, so streams are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Exponential waiting time with the given rate (> 0).
  double exponential(double rate) noexcept { return -std::log(uniform()) / rate; }

  /// Standard normal variate (Box-Muller, pairs cached).
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t next_u64() noexcept { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace photoion

#endif  // PHOTOION_RNG_HPP
