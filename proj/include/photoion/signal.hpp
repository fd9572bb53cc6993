#ifndef PHOTOION_SIGNAL_HPP
#define PHOTOION_SIGNAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "photoion/ctmc.hpp"
#include "photoion/errors.hpp"
#include "photoion/rng.hpp"

namespace photoion {

/// Readout chain: two current levels, a single-pole low-pass and white
/// Gaussian amplifier noise added after the filter.
struct TraceParams {
  double sample_rate = 100e3;  ///< Hz
  double level_high = 1.0;     ///< trap occupied
  double level_low = 0.0;      ///< trap ionised
  double noise_sigma = 0.1;    ///< same units as the levels
  double bandwidth = 10e3;     ///< low-pass cutoff, Hz

  double dt() const noexcept { return 1.0 / sample_rate; }
  double separation() const noexcept { return level_high - level_low; }
  double midpoint() const noexcept { return 0.5 * (level_high + level_low); }
  /// RC time constant of the low-pass, s.
  double time_constant() const noexcept { return 1.0 / (2.0 * std::numbers::pi * bandwidth); }

  void validate() const {
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth", "bandwidth must be > 0");
    if (!(sample_rate > 2.0 * bandwidth))
      throw ConfigError("sample_rate", "sample_rate must exceed 2*bandwidth");
    if (!(level_high > level_low))
      throw ConfigError("level_high", "level_high must be greater than level_low");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "noise_sigma must be >= 0");
  }
};

/// Uniformly sampled current record; sample k is taken at start_time + k*dt.
struct CurrentTrace {
  double start_time = 0.0;
  double dt = 1e-5;
  std::vector<float> samples;
  TraceParams params;

  std::size_t size() const noexcept { return samples.size(); }
  double time_at(std::size_t k) const noexcept {
    return start_time + static_cast<double>(k) * dt;
  }
  double end_time() const noexcept { return time_at(samples.size()); }

  friend bool operator==(const CurrentTrace& a, const CurrentTrace& b) {
    return a.start_time == b.start_time && a.dt == b.dt && a.samples == b.samples;
  }
};

/// Renders the trap-occupancy history of `log` on [t_begin, t_end) as a
/// filtered, noisy current. The low-pass is integrated exactly for the
/// piecewise-constant ideal signal (including transitions between samples),
/// starting settled at the level occupied at t_begin. Times before 0 read as
/// the initial GroundNeutral state.
inline CurrentTrace synthesize(const EventLog& log, const TraceParams& params, std::uint64_t seed,
                               double t_begin, double t_end) {
  params.validate();
  if (!(t_end > t_begin)) throw DomainError("synthesize: empty time window");

  CurrentTrace trace;
  trace.params = params;
  trace.start_time = t_begin;
  trace.dt = params.dt();
  const auto n = static_cast<std::size_t>(std::floor((t_end - t_begin) * params.sample_rate + 1e-9));
  if (n == 0) throw DomainError("synthesize: window shorter than one sample");
  trace.samples.resize(n);

  const double tau = params.time_constant();
  auto level = [&](SystemState s) { return trap_occupied(s) ? params.level_high : params.level_low; };

  auto it = std::upper_bound(log.events.begin(), log.events.end(), t_begin,
                             [](double v, const Event& e) { return v < e.time; });
  double input = level(it == log.events.begin() ? SystemState::GroundNeutral
                                                : target_state(std::prev(it)->transition));
  double y = input;
  double t = t_begin;
  Rng rng(seed);
  const bool noisy = params.noise_sigma > 0.0;

  for (std::size_t k = 0; k < n; ++k) {
    const double tk = trace.time_at(k);
    while (it != log.events.end() && it->time <= tk) {
      const double next = level(target_state(it->transition));
      if (next != input) {
        y = input + (y - input) * std::exp(-(it->time - t) / tau);
        t = it->time;
        input = next;
      }
      ++it;
    }
    y = input + (y - input) * std::exp(-(tk - t) / tau);
    t = tk;
    double v = y;
    if (noisy) v += params.noise_sigma * rng.normal();
    trace.samples[k] = static_cast<float>(v);
  }
  return trace;
}

/// Whole-run trace covering [0, log.duration).
inline CurrentTrace synthesize(const EventLog& log, const TraceParams& params, std::uint64_t seed) {
  return synthesize(log, params, seed, 0.0, log.duration);
}

}  // namespace photoion

#endif  // PHOTOION_SIGNAL_HPP
