#ifndef PHOTOION_CTMC_HPP
#define PHOTOION_CTMC_HPP

// Three-state Markov model of a single Er ion coupled to a charge trap:
//
//   GroundNeutral --excite--> ExcitedNeutral --ionising decay--> GroundIonised
//        ^                         |                                  |
//        +---- non-ionising decay -+                                  |
//        +------------------------------- reset ----------------------+
//
// Units: time in s, rates and detunings in Hz, optical power in uW.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "photoion/errors.hpp"
#include "photoion/rng.hpp"

namespace photoion {

enum class SystemState : std::uint8_t { GroundNeutral, ExcitedNeutral, GroundIonised };

enum class Transition : std::uint8_t { Excite, DecayNonIonising, DecayIonising, Reset };

constexpr SystemState source_state(Transition t) noexcept {
  switch (t) {
    case Transition::Excite: return SystemState::GroundNeutral;
    case Transition::DecayNonIonising:
    case Transition::DecayIonising: return SystemState::ExcitedNeutral;
    case Transition::Reset: return SystemState::GroundIonised;
  }
  return SystemState::GroundNeutral;
}

constexpr SystemState target_state(Transition t) noexcept {
  switch (t) {
    case Transition::Excite: return SystemState::ExcitedNeutral;
    case Transition::DecayNonIonising:
    case Transition::Reset: return SystemState::GroundNeutral;
    case Transition::DecayIonising: return SystemState::GroundIonised;
  }
  return SystemState::GroundNeutral;
}

/// State after applying `t` in `s`, or nullopt if the transition is illegal.
constexpr std::optional<SystemState> apply(SystemState s, Transition t) noexcept {
  if (source_state(t) != s) return std::nullopt;
  return target_state(t);
}

/// True while the trap holds its electron (high current level).
constexpr bool trap_occupied(SystemState s) noexcept {
  return s != SystemState::GroundIonised;
}

inline const char* to_string(Transition t) noexcept {
  switch (t) {
    case Transition::Excite: return "excite";
    case Transition::DecayNonIonising: return "decay_non_ionising";
    case Transition::DecayIonising: return "decay_ionising";
    case Transition::Reset: return "reset";
  }
  return "?";
}

inline std::optional<Transition> transition_from_string(const std::string& s) {
  for (auto t : {Transition::Excite, Transition::DecayNonIonising, Transition::DecayIonising,
                 Transition::Reset}) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

struct RateParams {
  double gamma_e_per_power = 4153.2258064516;  ///< Hz/uW, on-resonance excitation per resonant uW
  double homogeneous_fwhm = 32e6;              ///< Hz
  double gamma_i = 625e3;                      ///< ionising decay, Hz
  double gamma_ni = 625e3;                     ///< non-ionising decay, Hz
  double reset_spontaneous = 199.0;            ///< Hz, reset rate in the dark
  double reset_per_power = 2210.0;             ///< Hz/uW of total power

  double total_decay() const noexcept { return gamma_i + gamma_ni; }
  double ionising_fraction() const noexcept { return gamma_i / total_decay(); }
  double reset_rate(double power) const noexcept {
    return reset_spontaneous + reset_per_power * power;
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(name, std::string(name) + " must be > 0");
    };
    positive(gamma_e_per_power, "gamma_e_per_power");
    positive(homogeneous_fwhm, "homogeneous_fwhm");
    positive(gamma_i, "gamma_i");
    positive(gamma_ni, "gamma_ni");
    positive(reset_per_power, "reset_per_power");
    if (!(reset_spontaneous >= 0.0) || !std::isfinite(reset_spontaneous))
      throw ConfigError("reset_spontaneous", "reset_spontaneous must be >= 0");
  }
};

/// Mean-reverting Gaussian (Ornstein-Uhlenbeck) wander of the transition
/// centre frequency. The stationary standard deviation follows the total
/// optical power of the current drive segment.
struct DiffusionParams {
  double sigma_per_power = 0.0;  ///< Hz/uW
  double correlation_time = 0.2e-6;  ///< s
  bool enabled = false;

  double sigma(double power) const noexcept { return enabled ? sigma_per_power * power : 0.0; }

  void validate() const {
    if (!(sigma_per_power >= 0.0) || !std::isfinite(sigma_per_power))
      throw ConfigError("sigma_per_power", "sigma_per_power must be >= 0");
    if (!(correlation_time > 0.0) || !std::isfinite(correlation_time))
      throw ConfigError("correlation_time", "correlation_time must be > 0");
  }
};

struct DriveSegment {
  double duration = 0.0;           ///< s
  double power = 0.0;              ///< total optical power, uW
  double resonant_fraction = 0.0;  ///< alpha in [0, 1]
  double detuning = 0.0;           ///< laser detuning from line centre, Hz
};

/// Piecewise-constant excitation schedule: `segments` played in order,
/// `repeat_count` times.
struct LaserDrive {
  std::vector<DriveSegment> segments;
  std::size_t repeat_count = 1;

  static LaserDrive continuous(double duration, double power, double alpha, double detuning) {
    return LaserDrive{{DriveSegment{duration, power, alpha, detuning}}, 1};
  }

  double cycle_duration() const noexcept {
    double total = 0.0;
    for (const auto& s : segments) total += s.duration;
    return total;
  }

  double total_duration() const noexcept {
    return cycle_duration() * static_cast<double>(repeat_count);
  }

  void validate() const {
    if (segments.empty()) throw DomainError("laser drive has no segments");
    if (repeat_count == 0) throw ConfigError("repeat_count", "repeat_count must be >= 1");
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      const std::string at = "segments[" + std::to_string(i) + "].";
      if (!(s.duration > 0.0) || !std::isfinite(s.duration))
        throw ConfigError(at + "duration", "duration must be > 0");
      if (!(s.power >= 0.0) || !std::isfinite(s.power))
        throw ConfigError(at + "power", "power must be >= 0");
      if (!(s.resonant_fraction >= 0.0 && s.resonant_fraction <= 1.0))
        throw ConfigError(at + "resonant_fraction", "resonant_fraction must be in [0,1]");
      if (!std::isfinite(s.detuning)) throw ConfigError(at + "detuning", "detuning must be finite");
    }
  }
};

struct Event {
  double time;
  Transition transition;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Timestamped transition history of one run, starting in GroundNeutral at t = 0.
struct EventLog {
  std::vector<Event> events;
  double duration = 0.0;
  std::uint64_t seed = 0;

  /// State just after time `t` (the initial state for t < first event).
  SystemState state_at(double t) const {
    auto it = std::upper_bound(events.begin(), events.end(), t,
                               [](double v, const Event& e) { return v < e.time; });
    if (it == events.begin()) return SystemState::GroundNeutral;
    return target_state(std::prev(it)->transition);
  }

  /// Replays the log through the state automaton; false on any illegal
  /// transition or out-of-order / out-of-range timestamp.
  bool valid() const {
    SystemState s = SystemState::GroundNeutral;
    double last = 0.0;
    bool first = true;
    for (const auto& e : events) {
      if (e.time < 0.0 || e.time > duration) return false;
      if (!first && !(e.time > last)) return false;
      auto next = apply(s, e.transition);
      if (!next) return false;
      s = *next;
      last = e.time;
      first = false;
    }
    return true;
  }

  friend bool operator==(const EventLog&, const EventLog&) = default;
};

/// Excitation rate under a unit-peak Lorentzian lineshape of FWHM
/// `homogeneous_fwhm`, linear in the resonant power alpha * P.
inline double excitation_rate(double detuning, double power, double alpha, double center_offset,
                              const RateParams& params) {
  if (!(power >= 0.0)) throw DomainError("excitation_rate: power must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw DomainError("excitation_rate: resonant_fraction must be in [0,1]");
  const double peak = params.gamma_e_per_power * alpha * power;
  if (peak == 0.0) return 0.0;
  const double hw = 0.5 * params.homogeneous_fwhm;
  const double d = detuning - center_offset;
  return peak * hw * hw / (d * d + hw * hw);
}

/// Exact one-step update of the OU centre offset over `dt` with the
/// stationary sigma set by `power`.
inline double step_diffusion(double current_offset, double dt, double power,
                             const DiffusionParams& params, Rng& rng) {
  if (!params.enabled) return 0.0;
  const double decay = std::exp(-dt / params.correlation_time);
  const double sigma = params.sigma(power);
  const double mean = current_offset * decay;
  if (sigma == 0.0) return mean;
  // 1 - decay^2 without cancellation for small dt
  const double var_fraction = -std::expm1(-2.0 * dt / params.correlation_time);
  return mean + sigma * std::sqrt(var_fraction) * rng.normal();
}

struct ReducedRates {
  double ionisation;  ///< nu_i, Hz
  double reset;       ///< nu_r, Hz
};

/// Two-state reduction of the chain (diffusion ignored): nu_i is the
/// inverse mean first-passage time GroundNeutral -> GroundIonised.
inline ReducedRates reduce_rates(const RateParams& params, double power, double alpha,
                                 double detuning) {
  const double ge = excitation_rate(detuning, power, alpha, 0.0, params);
  const double nu_i = ge * params.gamma_i / (ge + params.total_decay());
  return {nu_i, params.reset_rate(power)};
}

/// Simulates one trajectory of the chain. Decay and reset are drawn as
/// exponential clocks that are redrawn at segment boundaries (memoryless).
/// Excitation under spectral diffusion is sampled by thinning against the
/// on-resonance rate gamma_e_per_power * alpha * P; the OU offset is advanced
/// exactly to every proposal time and to every segment boundary.
inline EventLog simulate(const RateParams& params, const DiffusionParams& diffusion,
                         const LaserDrive& drive, std::uint64_t seed) {
  params.validate();
  diffusion.validate();
  drive.validate();

  Rng rng(seed);
  EventLog log;
  log.seed = seed;
  log.duration = drive.total_duration();

  std::vector<double> seg_start(drive.segments.size());
  double acc = 0.0;
  for (std::size_t s = 0; s < drive.segments.size(); ++s) {
    seg_start[s] = acc;
    acc += drive.segments[s].duration;
  }
  const double period = acc;

  SystemState state = SystemState::GroundNeutral;
  double offset = 0.0;

  for (std::size_t rep = 0; rep < drive.repeat_count; ++rep) {
    const double cycle_t0 = static_cast<double>(rep) * period;
    for (std::size_t s = 0; s < drive.segments.size(); ++s) {
      const DriveSegment& seg = drive.segments[s];
      const double t_begin = cycle_t0 + seg_start[s];
      const bool last = rep + 1 == drive.repeat_count && s + 1 == drive.segments.size();
      const double t_end = last ? log.duration : t_begin + seg.duration;

      const double bound = params.gamma_e_per_power * seg.resonant_fraction * seg.power;
      const double reset = params.reset_rate(seg.power);
      const double decay = params.total_decay();
      double t = t_begin;
      double offset_time = t_begin;

      while (true) {
        double rate = 0.0;
        switch (state) {
          case SystemState::GroundNeutral: rate = bound; break;
          case SystemState::ExcitedNeutral: rate = decay; break;
          case SystemState::GroundIonised: rate = reset; break;
        }
        if (rate <= 0.0) break;
        const double t_next = t + rng.exponential(rate);
        if (t_next >= t_end) break;
        t = t_next > t ? t_next : std::nextafter(t, t_end);

        switch (state) {
          case SystemState::GroundNeutral: {
            double accept = 1.0;
            if (diffusion.enabled) {
              offset = step_diffusion(offset, t - offset_time, seg.power, diffusion, rng);
              offset_time = t;
            }
            const double ge =
                excitation_rate(seg.detuning, seg.power, seg.resonant_fraction, offset, params);
            accept = ge / bound;
            if (rng.uniform() < accept) {
              log.events.push_back({t, Transition::Excite});
              state = SystemState::ExcitedNeutral;
            }
            break;
          }
          case SystemState::ExcitedNeutral: {
            if (rng.uniform() * decay < params.gamma_i) {
              log.events.push_back({t, Transition::DecayIonising});
              state = SystemState::GroundIonised;
            } else {
              log.events.push_back({t, Transition::DecayNonIonising});
              state = SystemState::GroundNeutral;
            }
            break;
          }
          case SystemState::GroundIonised:
            log.events.push_back({t, Transition::Reset});
            state = SystemState::GroundNeutral;
            break;
        }
      }
      if (diffusion.enabled) {
        offset = step_diffusion(offset, t_end - offset_time, seg.power, diffusion, rng);
      }
    }
  }
  return log;
}

}  // namespace photoion

#endif  // PHOTOION_CTMC_HPP
