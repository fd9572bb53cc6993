#ifndef PHOTOION_EVENTS_HPP
#define PHOTOION_EVENTS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "photoion/ctmc.hpp"
#include "photoion/errors.hpp"
#include "photoion/signal.hpp"

namespace photoion {

/// Waiting times extracted from a telegraph signal.
struct DwellRecord {
  std::vector<double> ionisation_times;  ///< t_i: durations of occupied (high) intervals, s
  std::vector<double> reset_times;       ///< t_r: durations of ionised (low) intervals, s
  std::size_t excluded = 0;              ///< intervals shorter than `resolution`, merged away
  double resolution = 0.0;               ///< s
  std::string warning;                   ///< non-empty when detection was not attempted
};

/// Exact dwell structure of a simulated run. The first occupied interval
/// starts at t = 0 in GroundNeutral and is kept; the trailing interval is
/// censored by the end of the run and dropped.
inline DwellRecord dwells_from_log(const EventLog& log) {
  DwellRecord rec;
  double since = 0.0;
  for (const auto& e : log.events) {
    if (e.transition == Transition::DecayIonising) {
      rec.ionisation_times.push_back(e.time - since);
      since = e.time;
    } else if (e.transition == Transition::Reset) {
      rec.reset_times.push_back(e.time - since);
      since = e.time;
    }
  }
  return rec;
}

/// Robust white-noise estimate: MAD of first differences, scaled to a
/// Gaussian sigma. Level steps occupy few differences and do not bias it.
inline double robust_noise_sigma(std::span<const float> samples) {
  if (samples.size() < 3) return 0.0;
  std::vector<double> d(samples.size() - 1);
  for (std::size_t k = 0; k + 1 < samples.size(); ++k)
    d[k] = std::abs(static_cast<double>(samples[k + 1]) - samples[k]);
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return 1.4826 * *mid / std::sqrt(2.0);
}

/// Schmitt-trigger segmentation of a two-level trace. The state drops when
/// the signal falls below threshold - hysteresis and rises above
/// threshold + hysteresis; crossing times are linearly interpolated between
/// samples. Intervals shorter than `resolution` are treated as unresolved
/// and merged into their neighbours. Partial intervals at both ends of the
/// trace are discarded.
inline DwellRecord detect_events(const CurrentTrace& trace, double threshold, double hysteresis,
                                 double resolution = 0.0) {
  DwellRecord rec;
  rec.resolution = resolution;
  if (trace.samples.empty()) {
    rec.warning = "empty trace";
    return rec;
  }
  if (!(hysteresis >= 0.0)) throw DomainError("detect_events: hysteresis must be >= 0");
  const auto [lo_it, hi_it] = std::minmax_element(trace.samples.begin(), trace.samples.end());
  if (threshold <= *lo_it || threshold >= *hi_it) {
    rec.warning = "threshold outside trace range";
    return rec;
  }

  const double fall_level = threshold - hysteresis;
  const double rise_level = threshold + hysteresis;
  struct Crossing {
    double time;
    bool to_high;
  };
  std::vector<Crossing> crossings;

  bool high = trace.samples[0] >= threshold;
  for (std::size_t k = 1; k < trace.samples.size(); ++k) {
    const double x = trace.samples[k];
    const double prev = trace.samples[k - 1];
    if (high && x < fall_level) {
      const double f = prev > x ? std::clamp((prev - fall_level) / (prev - x), 0.0, 1.0) : 1.0;
      crossings.push_back({trace.time_at(k - 1) + f * trace.dt, false});
      high = false;
    } else if (!high && x > rise_level) {
      const double f = x > prev ? std::clamp((rise_level - prev) / (x - prev), 0.0, 1.0) : 1.0;
      crossings.push_back({trace.time_at(k - 1) + f * trace.dt, true});
      high = true;
    }
  }

  std::vector<Crossing> kept;
  kept.reserve(crossings.size());
  for (const auto& c : crossings) {
    if (!kept.empty() && c.time - kept.back().time < resolution) {
      kept.pop_back();
      ++rec.excluded;
      continue;
    }
    kept.push_back(c);
  }

  for (std::size_t i = 1; i < kept.size(); ++i) {
    const double len = kept[i].time - kept[i - 1].time;
    if (kept[i - 1].to_high)
      rec.ionisation_times.push_back(len);
    else
      rec.reset_times.push_back(len);
  }
  return rec;
}

struct RateEstimate {
  double rate = 0.0;       ///< Hz
  double std_error = 0.0;  ///< Hz
  std::size_t n = 0;
};

/// Maximum-likelihood exponential rate. With `truncation` > 0 the dwells are
/// taken as left-truncated at that value (shorter ones unobservable), and the
/// memoryless MLE n / sum(t - truncation) applies.
inline RateEstimate fit_exponential(std::span<const double> dwells, double truncation = 0.0) {
  if (dwells.size() < 2) throw InsufficientData("fit_exponential: need at least 2 dwells");
  double sum = 0.0;
  for (double t : dwells) {
    if (!(t >= truncation)) throw DomainError("fit_exponential: dwell below truncation");
    sum += t - truncation;
  }
  const double n = static_cast<double>(dwells.size());
  if (!(sum > 0.0)) throw DomainError("fit_exponential: dwells carry no time above truncation");
  const double rate = n / sum;
  return {rate, rate / std::sqrt(n), dwells.size()};
}

/// Undoes the bias from unresolved short intervals. An occupied interval
/// survives as long as every intervening ionised interval is shorter than the
/// resolution c, so the apparent ionisation rate is nu_i * exp(-nu_r c) (and
/// symmetrically for reset). Solved by fixed-point iteration.
inline ReducedRates correct_missed_events(double apparent_ionisation, double apparent_reset,
                                          double resolution) {
  double ni = apparent_ionisation;
  double nr = apparent_reset;
  if (resolution <= 0.0) return {ni, nr};
  for (int iter = 0; iter < 200; ++iter) {
    const double ni_next = apparent_ionisation * std::exp(nr * resolution);
    const double nr_next = apparent_reset * std::exp(ni_next * resolution);
    const bool done = std::abs(ni_next - ni) <= 1e-13 * ni_next &&
                      std::abs(nr_next - nr) <= 1e-13 * nr_next;
    ni = ni_next;
    nr = nr_next;
    if (done) break;
  }
  return {ni, nr};
}

struct HistogramBin {
  double center;
  std::size_t count;
};

/// Uniform left-closed bins [k w, (k+1) w) starting at 0, up to the last
/// occupied bin.
inline std::vector<HistogramBin> histogram(std::span<const double> dwells, double bin_width) {
  if (!(bin_width > 0.0)) throw DomainError("histogram: bin_width must be > 0");
  std::vector<HistogramBin> bins;
  for (double t : dwells) {
    if (t < 0.0) throw DomainError("histogram: negative dwell");
    const auto k = static_cast<std::size_t>(std::floor(t / bin_width));
    if (k >= bins.size()) {
      const std::size_t old = bins.size();
      bins.resize(k + 1);
      for (std::size_t j = old; j <= k; ++j) bins[j] = {(static_cast<double>(j) + 0.5) * bin_width, 0};
    }
    ++bins[k].count;
  }
  return bins;
}

/// Time window relative to a trace's start, [begin, end).
struct Window {
  double begin;
  double end;
};

enum class CycleOutcome { Ionised, Idle, Invalid, Skipped };

struct CycleCounts {
  std::size_t ionised = 0;
  std::size_t idle = 0;
  std::size_t invalid = 0;
  std::size_t skipped = 0;  ///< traces whose windows fell outside the record

  std::size_t valid() const noexcept { return ionised + idle; }
  /// Photoionisation probability: ionised over valid cycles.
  double probability() const {
    if (valid() == 0) throw InsufficientData("no valid cycles");
    return static_cast<double>(ionised) / static_cast<double>(valid());
  }
  double invalid_fraction() const noexcept {
    const std::size_t total = valid() + invalid;
    return total == 0 ? 0.0 : static_cast<double>(invalid) / static_cast<double>(total);
  }
};

namespace detail {

inline bool window_range(const CurrentTrace& trace, Window w, std::size_t& first, std::size_t& last) {
  if (!(w.end > w.begin) || w.begin < 0.0) return false;
  first = static_cast<std::size_t>(std::ceil(w.begin / trace.dt - 1e-9));
  last = static_cast<std::size_t>(std::ceil(w.end / trace.dt - 1e-9));
  return first < last && last <= trace.samples.size();
}

}  // namespace detail

/// Mean of the samples inside `w`; NaN if the window is not inside the trace.
inline double window_mean(const CurrentTrace& trace, Window w) {
  std::size_t a = 0, b = 0;
  if (!detail::window_range(trace, w, a, b)) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (std::size_t k = a; k < b; ++k) s += trace.samples[k];
  return s / static_cast<double>(b - a);
}

/// Minimum of the samples inside `w`; NaN if the window is not inside the trace.
inline double window_min(const CurrentTrace& trace, Window w) {
  std::size_t a = 0, b = 0;
  if (!detail::window_range(trace, w, a, b)) return std::numeric_limits<double>::quiet_NaN();
  return *std::min_element(trace.samples.begin() + static_cast<std::ptrdiff_t>(a),
                           trace.samples.begin() + static_cast<std::ptrdiff_t>(b));
}

/// Per-cycle classification of pulsed-mode traces.
///
/// `threshold` is a level in baseline-subtracted units (negative for a
/// current drop). Each trace is referenced to its own pre-window mean; a
/// cycle is ionised when the readout minimum falls below that baseline plus
/// `threshold`. A cycle is invalid (trap not reset by the previous cycle)
/// when its pre-window mean sits below the batch reference, the median
/// pre-window mean, by more than |threshold|.
inline std::vector<CycleOutcome> classify_each(std::span<const CurrentTrace> traces, Window pre_window,
                                               Window readout_window, double threshold) {
  std::vector<double> pre(traces.size());
  std::vector<double> valid_pre;
  valid_pre.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    pre[i] = window_mean(traces[i], pre_window);
    if (!std::isnan(pre[i])) valid_pre.push_back(pre[i]);
  }
  double reference = 0.0;
  if (!valid_pre.empty()) {
    auto mid = valid_pre.begin() + static_cast<std::ptrdiff_t>(valid_pre.size() / 2);
    std::nth_element(valid_pre.begin(), mid, valid_pre.end());
    reference = *mid;
  }

  std::vector<CycleOutcome> out(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double low = window_min(traces[i], readout_window);
    if (std::isnan(pre[i]) || std::isnan(low)) {
      out[i] = CycleOutcome::Skipped;
    } else if (pre[i] - reference < threshold) {
      out[i] = CycleOutcome::Invalid;
    } else if (low - pre[i] < threshold) {
      out[i] = CycleOutcome::Ionised;
    } else {
      out[i] = CycleOutcome::Idle;
    }
  }
  return out;
}

inline CycleCounts tally(std::span<const CycleOutcome> outcomes) {
  CycleCounts c;
  for (auto o : outcomes) {
    switch (o) {
      case CycleOutcome::Ionised: ++c.ionised; break;
      case CycleOutcome::Idle: ++c.idle; break;
      case CycleOutcome::Invalid: ++c.invalid; break;
      case CycleOutcome::Skipped: ++c.skipped; break;
    }
  }
  return c;
}

inline CycleCounts classify_cycles(std::span<const CurrentTrace> traces, Window pre_window,
                                   Window readout_window, double threshold) {
  const auto outcomes = classify_each(traces, pre_window, readout_window, threshold);
  return tally(outcomes);
}

}  // namespace photoion

#endif  // PHOTOION_EVENTS_HPP
