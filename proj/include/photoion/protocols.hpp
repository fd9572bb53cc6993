#ifndef PHOTOION_PROTOCOLS_HPP
#define PHOTOION_PROTOCOLS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "photoion/ctmc.hpp"
#include "photoion/errors.hpp"
#include "photoion/events.hpp"
#include "photoion/optimize.hpp"
#include "photoion/parallel.hpp"
#include "photoion/rng.hpp"
#include "photoion/signal.hpp"
#include "photoion/spectroscopy.hpp"

namespace photoion {

/// Diffusion strength (Hz/uW) for which a 41 uW spectrum on the standard
/// 25-point grid, weighted by counting statistics, fits to an 85 MHz
/// Lorentzian; the output of calibrate_sigma_per_power(32e6, 41, 85e6),
/// frozen.
inline constexpr double kDefaultSigmaPerPower = 952714.4876;

struct Physics {
  RateParams rates;
  DiffusionParams diffusion{kDefaultSigmaPerPower, 0.2e-6, true};

  void validate() const {
    rates.validate();
    diffusion.validate();
  }
};

/// Top-level seed streams; a point's seed is derive_seed(master, {stream,
/// condition, point}) and its simulation / synthesis sub-streams are
/// derive_seed(point_seed, {0}) and derive_seed(point_seed, {1, ...}).
enum class Stream : std::uint64_t { Cw = 1, Pulsed = 2, TwoPulse = 3, Persistence = 4, Fraction = 5, Sweep = 6 };

inline std::uint64_t point_seed(std::uint64_t master, Stream stream, std::uint64_t condition,
                                std::uint64_t point) {
  return derive_seed(master, {static_cast<std::uint64_t>(stream), condition, point});
}
inline std::uint64_t simulation_seed(std::uint64_t pseed) { return derive_seed(pseed, {0}); }
inline std::uint64_t synthesis_seed(std::uint64_t pseed) { return derive_seed(pseed, {1}); }
inline std::uint64_t cycle_seed(std::uint64_t pseed, std::uint64_t cycle) {
  return derive_seed(pseed, {1, cycle});
}

// ---------------------------------------------------------------------------
// Result containers

struct SpectrumResult {
  std::string label;
  double power = 0.0;  ///< uW
  double alpha = 0.0;
  double delay = 0.0;  ///< s, persistence protocol only
  std::vector<SpectrumPoint> points;
  std::optional<LorentzianFit> fit;
  std::string fit_error;         ///< set when `fit` is empty
  double reset_rate = 0.0;       ///< Hz, measured (CW) or assumed (pulsed)
  double reset_rate_error = 0.0;
  std::vector<CycleCounts> counts;  ///< pulsed only, parallel to `points`
  std::vector<std::string> warnings;
};

struct Summary {
  std::string name;
  double value = 0.0;
  double std_error = 0.0;
  std::string unit;
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ProtocolResult {
  std::string protocol;
  std::uint64_t master_seed = 0;
  std::vector<SpectrumResult> spectra;
  std::vector<Summary> summaries;
  std::vector<Table> tables;
  std::vector<std::string> warnings;

  const Summary* find(std::string_view name) const {
    for (const auto& s : summaries)
      if (s.name == name) return &s;
    return nullptr;
  }
  const Summary& summary(std::string_view name) const {
    const Summary* s = find(name);
    if (!s) throw DomainError("no summary named " + std::string(name));
    return *s;
  }
  const Table* table(std::string_view name) const {
    for (const auto& t : tables)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

inline void attach_fit(SpectrumResult& s) {
  std::vector<SpectrumPoint> usable;
  for (const auto& p : s.points)
    if (std::isfinite(p.nu_i)) usable.push_back(p);
  try {
    s.fit = fit_lorentzian(usable);
  } catch (const LorentzianFitFailure& e) {
    s.fit_error = e.what();
  } catch (const std::exception& e) {
    s.fit_error = e.what();
  }
}

/// Largest |W_i - W_j| / sqrt(e_i^2 + e_j^2) over fitted spectra.
inline double max_pairwise_sigma(const std::vector<const SpectrumResult*>& spectra) {
  double worst = 0.0;
  for (std::size_t i = 0; i < spectra.size(); ++i)
    for (std::size_t j = i + 1; j < spectra.size(); ++j) {
      const auto& a = *spectra[i]->fit;
      const auto& b = *spectra[j]->fit;
      const double e = std::hypot(a.fwhm_error, b.fwhm_error);
      worst = std::max(worst, std::abs(a.fwhm - b.fwhm) / e);
    }
  return worst;
}

}  // namespace detail

/// Approximate fitted linewidth expected from the model: power-broadened
/// homogeneous line convolved with the stationary diffusion spread.
inline double predicted_linewidth(const Physics& physics, double power, double alpha) {
  const double peak = physics.rates.gamma_e_per_power * alpha * power;
  const double lorentz = physics.rates.homogeneous_fwhm * std::sqrt(1.0 + peak / physics.rates.total_decay());
  return voigt_fwhm_estimate(lorentz, physics.diffusion.sigma(power));
}

/// Explicit detuning list, or an automatic symmetric grid scaled to the
/// predicted linewidth.
struct DetuningGrid {
  std::vector<double> values;  ///< Hz; overrides the automatic grid when non-empty
  double span_widths = 2.5;
  std::size_t points = 25;

  std::vector<double> resolve(double predicted_width) const {
    if (!values.empty()) return values;
    return detuning_grid(predicted_width, span_widths, points);
  }
  void validate() const {
    if (values.empty() && (points < 5 || !(span_widths > 0.0)))
      throw ConfigError("grid", "automatic grid needs points >= 5 and span_widths > 0");
  }
};

// ---------------------------------------------------------------------------
// CW analysis

struct DetectionSettings {
  double hysteresis_factor = 4.0;               ///< x robust noise sigma
  double min_resolution_time_constants = 2.0;   ///< lower bound on the dead time, x filter tau
  double resolution_margin = 1.2;
  std::optional<double> threshold;   ///< default: midpoint of the levels
  std::optional<double> hysteresis;  ///< default: from the noise estimate
  std::optional<double> resolution;  ///< default: from the filter response

  void validate() const {
    if (!(hysteresis_factor >= 0.0)) throw ConfigError("detection.hysteresis_factor", "must be >= 0");
    if (!(min_resolution_time_constants >= 0.0))
      throw ConfigError("detection.min_resolution_time_constants", "must be >= 0");
    if (!(resolution_margin >= 1.0)) throw ConfigError("detection.resolution_margin", "must be >= 1");
    if (hysteresis && !(*hysteresis >= 0.0)) throw ConfigError("detection.hysteresis", "must be >= 0");
    if (resolution && !(*resolution >= 0.0)) throw ConfigError("detection.resolution", "must be >= 0");
  }
};

struct DetectionPlan {
  double threshold = 0.0;
  double hysteresis = 0.0;
  double resolution = 0.0;  ///< s
  double noise_sigma = 0.0;
};

/// Threshold, hysteresis and dead time for a trace. The dead time is the
/// time a settled filter output needs to cross the far hysteresis level,
/// times a margin, and never below a fixed number of filter time constants;
/// intervals shorter than it are not reliably resolved.
inline DetectionPlan plan_detection(const CurrentTrace& trace, const TraceParams& levels,
                                    const DetectionSettings& s) {
  DetectionPlan plan;
  const double sep = levels.separation();
  plan.noise_sigma = robust_noise_sigma(trace.samples);
  plan.threshold = s.threshold.value_or(levels.midpoint());
  plan.hysteresis = s.hysteresis ? *s.hysteresis
                                 : std::clamp(s.hysteresis_factor * plan.noise_sigma, 0.05 * sep, 0.45 * sep);
  if (s.resolution) {
    plan.resolution = *s.resolution;
  } else {
    const double tau = levels.time_constant();
    const double far = 0.5 * sep - plan.hysteresis;
    if (!(far > 0.0)) throw DomainError("plan_detection: hysteresis must be below half the level separation");
    plan.resolution = std::max(s.min_resolution_time_constants * tau,
                               s.resolution_margin * tau * std::log(sep / far));
  }
  return plan;
}

struct CwRates {
  RateEstimate ionisation;  ///< corrected for missed events
  RateEstimate reset;
  RateEstimate apparent_ionisation;
  RateEstimate apparent_reset;
};

/// Dead-time-truncated MLE of both dwell distributions followed by the
/// missed-event correction. Standard errors scale with the correction.
inline CwRates estimate_cw_rates(const DwellRecord& dwells, double resolution) {
  CwRates out;
  out.apparent_ionisation = fit_exponential(dwells.ionisation_times, resolution);
  out.apparent_reset = fit_exponential(dwells.reset_times, resolution);
  const auto corr = correct_missed_events(out.apparent_ionisation.rate, out.apparent_reset.rate, resolution);
  const auto scale = [](const RateEstimate& a, double v) {
    return RateEstimate{v, a.std_error * v / a.rate, a.n};
  };
  out.ionisation = scale(out.apparent_ionisation, corr.ionisation);
  out.reset = scale(out.apparent_reset, corr.reset);
  return out;
}

struct CwPointResult {
  double detuning = 0.0;
  bool ok = false;
  std::string error;
  CwRates rates;
  DetectionPlan plan;
  std::size_t excluded = 0;
};

/// Full in-process CW chain for one drive setting:
/// simulate -> synthesize -> detect -> fit.
inline CwPointResult measure_cw_point(const Physics& physics, const TraceParams& trace_params,
                                      const DetectionSettings& detection, double duration, double power,
                                      double alpha, double detuning, std::uint64_t pseed) {
  CwPointResult out;
  out.detuning = detuning;
  const auto log = simulate(physics.rates, physics.diffusion,
                            LaserDrive::continuous(duration, power, alpha, detuning), simulation_seed(pseed));
  const auto trace = synthesize(log, trace_params, synthesis_seed(pseed));
  out.plan = plan_detection(trace, trace_params, detection);
  const auto dwells = detect_events(trace, out.plan.threshold, out.plan.hysteresis, out.plan.resolution);
  out.excluded = dwells.excluded;
  if (!dwells.warning.empty()) {
    out.error = dwells.warning;
    return out;
  }
  try {
    out.rates = estimate_cw_rates(dwells, out.plan.resolution);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

struct CwScanConfig {
  std::vector<double> powers{0.08, 0.17, 0.33, 0.6, 1.1};  ///< uW
  double alpha = 0.496;
  double trace_duration = 20.0;  ///< s per detuning point
  DetuningGrid grid{{}, 2.5, 21};
  DetectionSettings detection;

  void validate() const {
    if (powers.empty()) throw ConfigError("cw.powers", "at least one power required");
    for (double p : powers)
      if (!(p > 0.0)) throw ConfigError("cw.powers", "powers must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("cw.alpha", "resonant_fraction must be in [0,1]");
    if (!(trace_duration > 0.0)) throw ConfigError("cw.trace_duration", "must be > 0");
    grid.validate();
    detection.validate();
  }
};

inline ProtocolResult run_cw_scan(const Physics& physics, const TraceParams& trace_params,
                                  const CwScanConfig& cfg, std::uint64_t master_seed, unsigned threads = 1) {
  physics.validate();
  trace_params.validate();
  cfg.validate();
  ProtocolResult result;
  result.protocol = "scan-cw";
  result.master_seed = master_seed;

  std::vector<std::vector<double>> grids;
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t c = 0; c < cfg.powers.size(); ++c) {
    grids.push_back(cfg.grid.resolve(predicted_linewidth(physics, cfg.powers[c], cfg.alpha)));
    for (std::size_t k = 0; k < grids.back().size(); ++k) jobs.emplace_back(c, k);
  }
  std::vector<CwPointResult> out(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto [c, k] = jobs[j];
    out[j] = measure_cw_point(physics, trace_params, cfg.detection, cfg.trace_duration, cfg.powers[c],
                              cfg.alpha, grids[c][k], point_seed(master_seed, Stream::Cw, c, k));
  });

  Table table{"cw_points",
              {"power_uw", "detuning_hz", "nu_i_hz", "nu_i_stderr_hz", "nu_r_hz", "nu_r_stderr_hz",
               "n_ionisation", "n_reset", "excluded", "resolution_s"},
              {}};
  std::size_t j = 0;
  for (std::size_t c = 0; c < cfg.powers.size(); ++c) {
    SpectrumResult s;
    s.power = cfg.powers[c];
    s.alpha = cfg.alpha;
    s.label = "cw P=" + detail::fmt("%g", s.power) + "uW";
    double wsum = 0.0, wr = 0.0;
    for (std::size_t k = 0; k < grids[c].size(); ++k, ++j) {
      const auto& pt = out[j];
      if (!pt.ok) {
        s.warnings.push_back("detuning " + detail::fmt("%.6g", pt.detuning) + " Hz: " + pt.error);
        continue;
      }
      s.points.push_back({pt.detuning, pt.rates.ionisation.rate, pt.rates.ionisation.std_error});
      const double w = 1.0 / (pt.rates.reset.std_error * pt.rates.reset.std_error);
      wsum += w;
      wr += w * pt.rates.reset.rate;
      table.rows.push_back({s.power, pt.detuning, pt.rates.ionisation.rate, pt.rates.ionisation.std_error,
                            pt.rates.reset.rate, pt.rates.reset.std_error,
                            static_cast<double>(pt.rates.ionisation.n), static_cast<double>(pt.rates.reset.n),
                            static_cast<double>(pt.excluded), pt.plan.resolution});
    }
    if (wsum > 0.0) {
      s.reset_rate = wr / wsum;
      s.reset_rate_error = 1.0 / std::sqrt(wsum);
    }
    detail::attach_fit(s);
    result.spectra.push_back(std::move(s));
  }
  result.tables.push_back(std::move(table));

  std::vector<double> p, amp, amp_err, pr, nr, nr_err;
  Table summary{"cw_power_dependence",
                {"power_uw", "fwhm_hz", "fwhm_stderr_hz", "nu_ip_hz", "nu_ip_stderr_hz", "center_hz", "nu_r_hz",
                 "nu_r_stderr_hz"},
                {}};
  for (const auto& s : result.spectra) {
    if (s.reset_rate_error > 0.0) {
      pr.push_back(s.power);
      nr.push_back(s.reset_rate);
      nr_err.push_back(s.reset_rate_error);
    }
    if (!s.fit) {
      result.warnings.push_back(s.label + ": " + s.fit_error);
      continue;
    }
    p.push_back(s.power);
    amp.push_back(s.fit->amplitude);
    amp_err.push_back(s.fit->amplitude_error);
    summary.rows.push_back({s.power, s.fit->fwhm, s.fit->fwhm_error, s.fit->amplitude, s.fit->amplitude_error,
                            s.fit->center, s.reset_rate, s.reset_rate_error});
  }
  result.tables.push_back(std::move(summary));
  if (p.size() >= 2) {
    const auto f = linear_fit(p, amp, amp_err);
    result.summaries.push_back({"nu_ip_slope", f.slope, f.slope_error, "Hz/uW"});
    result.summaries.push_back({"nu_ip_intercept", f.intercept, f.intercept_error, "Hz"});
  }
  if (pr.size() >= 2) {
    const auto f = linear_fit(pr, nr, nr_err);
    result.summaries.push_back({"nu_r_slope", f.slope, f.slope_error, "Hz/uW"});
    result.summaries.push_back({"nu_r_intercept", f.intercept, f.intercept_error, "Hz"});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Pulsed analysis

/// Where each cycle's record is cut and which windows are compared. All
/// times are relative to the start of the cycle (pre-window) or the end of
/// the probe pulse (readout).
struct ReadoutSettings {
  double lead = 200e-6;          ///< record starts this long before the cycle
  Window pre{-100e-6, -10e-6};   ///< baseline window relative to the cycle start
  double readout_delay = 30e-6;  ///< readout starts this long after the probe ends
  double readout_length = 270e-6;
  double threshold_fraction = 0.5;  ///< drop, in units of the level separation
  double invalid_warning = 0.2;     ///< warn above this invalid-cycle fraction

  void validate() const {
    if (!(lead > 0.0)) throw ConfigError("readout.lead", "must be > 0");
    if (!(pre.end > pre.begin) || pre.begin < -lead || pre.end > 0.0)
      throw ConfigError("readout.pre", "pre window must lie inside [-lead, 0]");
    if (!(readout_delay >= 0.0)) throw ConfigError("readout.readout_delay", "must be >= 0");
    if (!(readout_length > 0.0)) throw ConfigError("readout.readout_length", "must be > 0");
    if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0))
      throw ConfigError("readout.threshold_fraction", "must be in (0,1)");
  }
};

/// Reset rate used to invert pulsed probabilities: a straight line in power
/// (as extrapolated from a CW fit), or the configured physics directly.
struct ResetModel {
  bool from_physics = false;
  double intercept = 199.0;  ///< Hz
  double slope = 2210.0;     ///< Hz/uW

  double rate(const Physics& physics, double power) const {
    return from_physics ? physics.rates.reset_rate(power) : intercept + slope * power;
  }
  void validate() const {
    if (!from_physics && (!(intercept >= 0.0) || !(slope >= 0.0)))
      throw ConfigError("reset", "reset line must have intercept >= 0 and slope >= 0");
  }
};

struct PulseTiming {
  double pulse = 4e-6;   ///< s
  double dark = 5e-3;    ///< s
  std::size_t cycles = 20000;

  void validate() const {
    if (!(pulse > 0.0)) throw ConfigError("timing.pulse", "must be > 0");
    if (!(dark > 0.0)) throw ConfigError("timing.dark", "must be > 0");
    if (cycles == 0) throw ConfigError("timing.cycles", "must be >= 1");
  }
};

/// One repeated cycle of drive segments and the analysis windows on it.
struct CycleLayout {
  std::vector<DriveSegment> segments;
  double record_begin = 0.0;  ///< relative to cycle start (negative = before)
  double record_end = 0.0;
  Window pre{0.0, 0.0};
  std::vector<Window> readouts;
};

/// Simulates `cycles` repetitions of the layout, renders one record per
/// cycle and classifies every readout window against the shared
/// pre-window. Returns outcomes indexed [readout][cycle].
inline std::vector<std::vector<CycleOutcome>> run_cycles(const Physics& physics, const TraceParams& trace_params,
                                                         const CycleLayout& layout, std::size_t cycles,
                                                         double threshold, std::uint64_t pseed) {
  LaserDrive drive{layout.segments, cycles};
  const auto log = simulate(physics.rates, physics.diffusion, drive, simulation_seed(pseed));
  const double period = drive.cycle_duration();
  std::vector<CurrentTrace> traces;
  traces.reserve(cycles);
  for (std::size_t k = 0; k < cycles; ++k) {
    const double t0 = static_cast<double>(k) * period;
    // one extra sample so that every window ending at record_end is covered
    traces.push_back(synthesize(log, trace_params, cycle_seed(pseed, k), t0 + layout.record_begin,
                                t0 + layout.record_end + trace_params.dt()));
  }
  auto shift = [&](Window w) { return Window{w.begin - layout.record_begin, w.end - layout.record_begin}; };
  std::vector<std::vector<CycleOutcome>> out;
  for (const auto& r : layout.readouts) out.push_back(classify_each(traces, shift(layout.pre), shift(r), threshold));
  return out;
}

/// Spectrum point from pulsed tallies: R = ionised / valid, inverted through
/// the pulse response. The binomial error (floored at one count) is carried
/// through dR/dnu_i.
inline SpectrumPoint pulsed_point(double detuning, const CycleCounts& counts, double nu_r, double t_p) {
  const double n = static_cast<double>(counts.valid());
  if (n == 0.0) throw InsufficientData("no valid cycles");
  const double R = counts.probability();
  if (R >= 1.0) throw DomainError("every valid cycle ionised; probability not invertible");
  const auto inv = eq1_invert(R, nu_r, t_p);
  const double sR = std::sqrt(std::max(R, 1.0 / n) * (1.0 - R) / n);
  return {detuning, inv.nu_i, sR / eq1_derivative(inv.nu_i, nu_r, t_p)};
}

namespace detail {

/// Layout of [optional preamble][probe][dark] with the readout after the probe.
inline CycleLayout probe_layout(std::vector<DriveSegment> preamble, const DriveSegment& probe, double dark,
                                const ReadoutSettings& r) {
  CycleLayout layout;
  layout.segments = std::move(preamble);
  double probe_end = 0.0;
  for (const auto& s : layout.segments) probe_end += s.duration;
  probe_end += probe.duration;
  layout.segments.push_back(probe);
  layout.segments.push_back({dark, 0.0, 0.0, 0.0});
  layout.record_begin = -r.lead;
  layout.pre = r.pre;
  const Window readout{probe_end + r.readout_delay, probe_end + r.readout_delay + r.readout_length};
  layout.readouts.push_back(readout);
  layout.record_end = readout.end;
  if (readout.end > probe_end + dark) throw ConfigError("timing.dark", "dark period shorter than the readout");
  return layout;
}

struct PulsedCondition {
  std::string label;
  double power = 0.0;
  double alpha = 0.0;
  double delay = 0.0;
  std::vector<DriveSegment> preamble;  ///< segments before the probe
  std::vector<double> detunings;
};

/// Shared driver for pulsed spectra: every (condition, detuning) pair is one
/// independently seeded job.
inline std::vector<SpectrumResult> run_pulsed_conditions(const Physics& physics, const TraceParams& trace_params,
                                                         const std::vector<PulsedCondition>& conditions,
                                                         const PulseTiming& timing, const ReadoutSettings& readout,
                                                         const ResetModel& reset, Stream stream,
                                                         std::uint64_t master_seed, unsigned threads) {
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t c = 0; c < conditions.size(); ++c)
    for (std::size_t k = 0; k < conditions[c].detunings.size(); ++k) jobs.emplace_back(c, k);
  const double threshold = -readout.threshold_fraction * trace_params.separation();
  std::vector<CycleCounts> counts(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto [c, k] = jobs[j];
    const auto& cond = conditions[c];
    const DriveSegment probe{timing.pulse, cond.power, cond.alpha, cond.detunings[k]};
    const auto layout = probe_layout(cond.preamble, probe, timing.dark, readout);
    const auto outcomes = run_cycles(physics, trace_params, layout, timing.cycles, threshold,
                                     point_seed(master_seed, stream, c, k));
    counts[j] = tally(outcomes[0]);
  });

  std::vector<SpectrumResult> spectra;
  std::size_t j = 0;
  for (const auto& cond : conditions) {
    SpectrumResult s;
    s.label = cond.label;
    s.power = cond.power;
    s.alpha = cond.alpha;
    s.delay = cond.delay;
    s.reset_rate = reset.rate(physics, cond.power);
    for (std::size_t k = 0; k < cond.detunings.size(); ++k, ++j) {
      const auto& c = counts[j];
      s.counts.push_back(c);
      if (c.invalid_fraction() > readout.invalid_warning)
        s.warnings.push_back("detuning " + fmt("%.6g", cond.detunings[k]) + " Hz: invalid-cycle fraction " +
                             fmt("%.3f", c.invalid_fraction()));
      try {
        s.points.push_back(pulsed_point(cond.detunings[k], c, s.reset_rate, timing.pulse));
      } catch (const std::exception& e) {
        s.warnings.push_back("detuning " + fmt("%.6g", cond.detunings[k]) + " Hz: " + e.what());
      }
    }
    attach_fit(s);
    spectra.push_back(std::move(s));
  }
  return spectra;
}

inline Table linewidth_table(const std::vector<SpectrumResult>& spectra) {
  Table t{"linewidths",
          {"power_uw", "alpha", "delay_s", "fwhm_hz", "fwhm_stderr_hz", "nu_ip_hz", "nu_ip_stderr_hz", "center_hz",
           "center_stderr_hz"},
          {}};
  for (const auto& s : spectra)
    if (s.fit)
      t.rows.push_back({s.power, s.alpha, s.delay, s.fit->fwhm, s.fit->fwhm_error, s.fit->amplitude,
                        s.fit->amplitude_error, s.fit->center, s.fit->center_error});
  return t;
}

inline void collect_warnings(ProtocolResult& r) {
  for (const auto& s : r.spectra) {
    if (!s.fit) r.warnings.push_back(s.label + ": fit failed: " + s.fit_error);
    for (const auto& w : s.warnings) r.warnings.push_back(s.label + ": " + w);
  }
}

}  // namespace detail

struct PulsedScanConfig {
  std::vector<double> powers{5.8, 9.0, 18.0, 30.0, 41.0, 61.0};  ///< uW
  double alpha = 0.496;
  PulseTiming timing;
  DetuningGrid grid;
  ReadoutSettings readout;
  ResetModel reset;

  void validate() const {
    if (powers.empty()) throw ConfigError("pulsed.powers", "at least one power required");
    for (double p : powers)
      if (!(p > 0.0)) throw ConfigError("pulsed.powers", "powers must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("pulsed.alpha", "resonant_fraction must be in [0,1]");
    timing.validate();
    grid.validate();
    readout.validate();
    reset.validate();
  }
};

inline ProtocolResult run_pulsed_scan(const Physics& physics, const TraceParams& trace_params,
                                      const PulsedScanConfig& cfg, std::uint64_t master_seed, unsigned threads = 1) {
  physics.validate();
  trace_params.validate();
  cfg.validate();
  std::vector<detail::PulsedCondition> conds;
  for (double p : cfg.powers)
    conds.push_back({"pulsed P=" + detail::fmt("%g", p) + "uW", p, cfg.alpha, 0.0, {},
                     cfg.grid.resolve(predicted_linewidth(physics, p, cfg.alpha))});
  ProtocolResult result;
  result.protocol = "scan-pulsed";
  result.master_seed = master_seed;
  result.spectra = detail::run_pulsed_conditions(physics, trace_params, conds, cfg.timing, cfg.readout, cfg.reset,
                                                 Stream::Pulsed, master_seed, threads);
  result.tables.push_back(detail::linewidth_table(result.spectra));
  detail::collect_warnings(result);
  return result;
}

// ---------------------------------------------------------------------------
// Persistence of the broadening after a strong pulse

struct PersistenceConfig {
  double strong_power = 375.0;      ///< uW, off resonance (alpha = 0)
  double strong_duration = 4e-6;    ///< s
  std::vector<double> delays{50e-9, 0.2e-6, 0.5e-6, 1e-6, 2e-6, 5e-6, 10e-6};  ///< t_w, s
  double probe_power = 9.0;
  double probe_alpha = 0.496;
  PulseTiming timing;
  DetuningGrid grid;
  ReadoutSettings readout;
  ResetModel reset;

  void validate() const {
    if (!(strong_power >= 0.0)) throw ConfigError("persistence.strong_power", "must be >= 0");
    if (!(strong_duration > 0.0)) throw ConfigError("persistence.strong_duration", "must be > 0");
    if (delays.empty()) throw ConfigError("persistence.delays", "at least one delay required");
    for (double d : delays)
      if (!(d > 0.0)) throw ConfigError("persistence.delays", "delays must be > 0");
    if (!(probe_power > 0.0)) throw ConfigError("persistence.probe_power", "must be > 0");
    if (!(probe_alpha > 0.0 && probe_alpha <= 1.0))
      throw ConfigError("persistence.probe_alpha", "resonant_fraction must be in [0,1]");
    timing.validate();
    grid.validate();
    readout.validate();
    reset.validate();
  }
};

inline ProtocolResult run_persistence_scan(const Physics& physics, const TraceParams& trace_params,
                                           const PersistenceConfig& cfg, std::uint64_t master_seed,
                                           unsigned threads = 1) {
  physics.validate();
  trace_params.validate();
  cfg.validate();
  const auto grid = cfg.grid.resolve(predicted_linewidth(physics, cfg.probe_power, cfg.probe_alpha));
  std::vector<detail::PulsedCondition> conds;
  for (double d : cfg.delays) {
    detail::PulsedCondition c;
    c.label = "persistence t_w=" + detail::fmt("%g", d) + "s";
    c.power = cfg.probe_power;
    c.alpha = cfg.probe_alpha;
    c.delay = d;
    c.preamble = {{cfg.strong_duration, cfg.strong_power, 0.0, 0.0}, {d, 0.0, 0.0, 0.0}};
    c.detunings = grid;
    conds.push_back(std::move(c));
  }
  ProtocolResult result;
  result.protocol = "persistence";
  result.master_seed = master_seed;
  result.spectra = detail::run_pulsed_conditions(physics, trace_params, conds, cfg.timing, cfg.readout, cfg.reset,
                                                 Stream::Persistence, master_seed, threads);
  result.tables.push_back(detail::linewidth_table(result.spectra));
  detail::collect_warnings(result);

  std::vector<const SpectrumResult*> fitted;
  for (const auto& s : result.spectra)
    if (s.fit) fitted.push_back(&s);
  if (fitted.size() >= 2) {
    result.summaries.push_back({"fwhm_max_pairwise_sigma", detail::max_pairwise_sigma(fitted), 0.0, ""});
    const auto& first = *fitted.front()->fit;
    const auto& last = *fitted.back()->fit;
    result.summaries.push_back({"fwhm_decrease", first.fwhm - last.fwhm,
                                std::hypot(first.fwhm_error, last.fwhm_error), "Hz"});
    double mean = 0.0, w = 0.0;
    for (const auto* s : fitted) {
      const double wi = 1.0 / (s->fit->fwhm_error * s->fit->fwhm_error);
      mean += wi * s->fit->fwhm;
      w += wi;
    }
    result.summaries.push_back({"fwhm_mean", mean / w, 1.0 / std::sqrt(w), "Hz"});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Resonant-fraction scan

struct FractionConfig {
  double power = 41.0;  ///< uW
  std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4, 0.496};
  PulseTiming timing;
  DetuningGrid grid;
  ReadoutSettings readout;
  ResetModel reset;

  void validate() const {
    if (!(power > 0.0)) throw ConfigError("fraction.power", "must be > 0");
    if (alphas.empty()) throw ConfigError("fraction.alphas", "at least one alpha required");
    for (double a : alphas)
      if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("fraction.alphas", "resonant_fraction must be in [0,1]");
    timing.validate();
    grid.validate();
    readout.validate();
    reset.validate();
  }
};

inline ProtocolResult run_resonant_fraction_scan(const Physics& physics, const TraceParams& trace_params,
                                                 const FractionConfig& cfg, std::uint64_t master_seed,
                                                 unsigned threads = 1) {
  physics.validate();
  trace_params.validate();
  cfg.validate();
  const double amax = *std::max_element(cfg.alphas.begin(), cfg.alphas.end());
  const auto grid = cfg.grid.resolve(predicted_linewidth(physics, cfg.power, amax));
  std::vector<detail::PulsedCondition> conds;
  for (double a : cfg.alphas)
    conds.push_back({"fraction alpha=" + detail::fmt("%g", a), cfg.power, a, 0.0, {}, grid});
  ProtocolResult result;
  result.protocol = "fraction";
  result.master_seed = master_seed;
  result.spectra = detail::run_pulsed_conditions(physics, trace_params, conds, cfg.timing, cfg.readout, cfg.reset,
                                                 Stream::Fraction, master_seed, threads);
  result.tables.push_back(detail::linewidth_table(result.spectra));
  detail::collect_warnings(result);

  std::vector<const SpectrumResult*> fitted;
  std::vector<double> a, amp, amp_err;
  std::size_t dark_ionised = 0, dark_valid = 0;
  for (const auto& s : result.spectra) {
    if (s.alpha == 0.0)
      for (const auto& c : s.counts) {
        dark_ionised += c.ionised;
        dark_valid += c.valid();
      }
    if (!s.fit || s.alpha == 0.0) continue;
    fitted.push_back(&s);
    a.push_back(s.alpha);
    amp.push_back(s.fit->amplitude);
    amp_err.push_back(s.fit->amplitude_error);
  }
  if (fitted.size() >= 2)
    result.summaries.push_back({"fwhm_max_pairwise_sigma", detail::max_pairwise_sigma(fitted), 0.0, ""});
  if (a.size() >= 2) {
    const auto f = linear_fit(a, amp, amp_err);
    result.summaries.push_back({"nu_ip_slope", f.slope, f.slope_error, "Hz"});
    result.summaries.push_back({"nu_ip_intercept", f.intercept, f.intercept_error, "Hz"});
  }
  if (dark_valid > 0) {
    result.summaries.push_back({"zero_alpha_ionised_cycles", static_cast<double>(dark_ionised), 0.0, ""});
    result.summaries.push_back({"zero_alpha_valid_cycles", static_cast<double>(dark_valid), 0.0, ""});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Two-pulse reset measurement

struct TwoPulseConfig {
  double first_power = 41.0;  ///< uW, resonant pulse that ionises the trap
  double first_alpha = 0.496;
  double first_detuning = 0.0;
  double first_pulse = 4e-6;
  double first_readout = 300e-6;  ///< dark gap holding the first check
  std::vector<double> second_powers{0.0, 0.6, 2.0, 6.0, 20.0, 60.0};  ///< uW
  /// Second-pulse lengths in units of 1 / nu_r(P2) from the reset line.
  std::vector<double> length_multiples{0.0, 0.25, 0.5, 1.0, 1.5};
  double second_alpha = 0.0;
  double second_detuning = 0.0;
  double check_length = 20e-6;  ///< s, each readout window
  double dark = 5e-3;
  std::size_t cycles = 20000;
  ReadoutSettings readout;
  ResetModel nominal_reset;  ///< only sets the length grid

  void validate() const {
    if (!(first_power > 0.0)) throw ConfigError("two_pulse.first_power", "must be > 0");
    if (!(first_alpha > 0.0 && first_alpha <= 1.0))
      throw ConfigError("two_pulse.first_alpha", "resonant_fraction must be in [0,1]");
    if (!(second_alpha >= 0.0 && second_alpha <= 1.0))
      throw ConfigError("two_pulse.second_alpha", "resonant_fraction must be in [0,1]");
    if (!(first_pulse > 0.0)) throw ConfigError("two_pulse.first_pulse", "must be > 0");
    if (!(check_length > 0.0)) throw ConfigError("two_pulse.check_length", "must be > 0");
    if (!(first_readout >= readout.readout_delay + check_length))
      throw ConfigError("two_pulse.first_readout", "too short for the first check");
    if (!(dark >= readout.readout_delay + check_length + readout.lead))
      throw ConfigError("two_pulse.dark", "too short for the second check");
    if (second_powers.empty()) throw ConfigError("two_pulse.second_powers", "at least one power required");
    for (double p : second_powers)
      if (!(p >= 0.0)) throw ConfigError("two_pulse.second_powers", "powers must be >= 0");
    if (length_multiples.size() < 2) throw ConfigError("two_pulse.length_multiples", "need at least 2 lengths");
    for (double m : length_multiples)
      if (!(m >= 0.0)) throw ConfigError("two_pulse.length_multiples", "must be >= 0");
    if (cycles == 0) throw ConfigError("two_pulse.cycles", "must be >= 1");
    readout.validate();
    nominal_reset.validate();
  }
};

/// Gap between the two checks that is not covered by the second pulse.
inline double two_pulse_dark_gap(const TwoPulseConfig& cfg) { return cfg.readout.readout_delay; }

inline ProtocolResult run_two_pulse_reset(const Physics& physics, const TraceParams& trace_params,
                                          const TwoPulseConfig& cfg, std::uint64_t master_seed, unsigned threads = 1) {
  physics.validate();
  trace_params.validate();
  cfg.validate();
  struct Job {
    std::size_t power, length;
    double L;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cfg.second_powers.size(); ++c) {
    const double nominal = cfg.nominal_reset.rate(physics, cfg.second_powers[c]);
    if (!(nominal > 0.0)) throw ConfigError("two_pulse.nominal_reset", "nominal reset rate must be > 0");
    for (std::size_t k = 0; k < cfg.length_multiples.size(); ++k)
      jobs.push_back({c, k, cfg.length_multiples[k] / nominal});
  }
  const double threshold = -cfg.readout.threshold_fraction * trace_params.separation();
  struct Outcome {
    std::size_t first = 0, both = 0, invalid = 0;
  };
  std::vector<Outcome> out(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    CycleLayout layout;
    layout.segments.push_back({cfg.first_pulse, cfg.first_power, cfg.first_alpha, cfg.first_detuning});
    layout.segments.push_back({cfg.first_readout, 0.0, 0.0, 0.0});
    if (job.L > 0.0)
      layout.segments.push_back({job.L, cfg.second_powers[job.power], cfg.second_alpha, cfg.second_detuning});
    layout.segments.push_back({cfg.dark, 0.0, 0.0, 0.0});
    const double second_start = cfg.first_pulse + cfg.first_readout;
    const double second_end = second_start + job.L;
    layout.pre = cfg.readout.pre;
    layout.record_begin = -cfg.readout.lead;
    layout.readouts.push_back({second_start - cfg.check_length, second_start});
    const double c2 = second_end + cfg.readout.readout_delay;
    layout.readouts.push_back({c2, c2 + cfg.check_length});
    layout.record_end = c2 + cfg.check_length;
    const auto outcomes = run_cycles(physics, trace_params, layout, cfg.cycles, threshold,
                                     point_seed(master_seed, Stream::TwoPulse, job.power, job.length));
    Outcome o;
    for (std::size_t k = 0; k < cfg.cycles; ++k) {
      if (outcomes[0][k] == CycleOutcome::Invalid) ++o.invalid;
      if (outcomes[0][k] != CycleOutcome::Ionised) continue;
      ++o.first;
      if (outcomes[1][k] == CycleOutcome::Ionised) ++o.both;
    }
    out[j] = o;
  });

  ProtocolResult result;
  result.protocol = "reset-rate";
  result.master_seed = master_seed;
  Table probs{"remaining_probability",
              {"power_uw", "length_s", "probability", "stderr", "first_ionised", "remaining", "invalid"},
              {}};
  Table rates{"reset_rates", {"power_uw", "nu_r_hz", "nu_r_stderr_hz"}, {}};
  std::vector<double> rp, rv, re;
  for (std::size_t c = 0; c < cfg.second_powers.size(); ++c) {
    std::vector<double> L, y, ye;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].power != c) continue;
      const auto& o = out[j];
      if (o.first == 0) {
        result.warnings.push_back("P2=" + detail::fmt("%g", cfg.second_powers[c]) + "uW L=" +
                                  detail::fmt("%g", jobs[j].L) + "s: no ionised first readout, point skipped");
        continue;
      }
      const double n = static_cast<double>(o.first);
      const double p = static_cast<double>(o.both) / n;
      const double sp = std::sqrt(std::max(p, 1.0 / n) * std::max(1.0 - p, 1.0 / n) / n);
      probs.rows.push_back({cfg.second_powers[c], jobs[j].L, p, sp, n, static_cast<double>(o.both),
                            static_cast<double>(o.invalid)});
      if (o.both > 0) {
        L.push_back(jobs[j].L);
        y.push_back(std::log(p));
        ye.push_back(sp / p);
      }
    }
    if (L.size() < 2) {
      result.warnings.push_back("P2=" + detail::fmt("%g", cfg.second_powers[c]) + "uW: too few points for a decay fit");
      continue;
    }
    const auto f = linear_fit(L, y, ye);
    rates.rows.push_back({cfg.second_powers[c], -f.slope, f.slope_error});
    rp.push_back(cfg.second_powers[c]);
    rv.push_back(-f.slope);
    re.push_back(f.slope_error);
  }
  result.tables.push_back(std::move(probs));
  result.tables.push_back(std::move(rates));
  if (rp.size() >= 2) {
    const auto f = linear_fit(rp, rv, re);
    result.summaries.push_back({"nu_r_slope", f.slope, f.slope_error, "Hz/uW"});
    result.summaries.push_back({"nu_r_intercept", f.intercept, f.intercept_error, "Hz"});
    result.summaries.push_back({"nu_r_fit_chi2", f.chi2, 0.0, ""});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Excitation-rate sweep against the first-passage oracle

struct SweepConfig {
  double gamma_e_min = 1e3;   ///< Hz
  double gamma_e_max = 1e6;   ///< Hz
  std::size_t points = 13;    ///< log-spaced
  std::vector<double> ratios{0.2, 1.0, 5.0};  ///< gamma_i / gamma_ni
  double total_decay = 1.25e6;  ///< gamma_i + gamma_ni, Hz
  double reset_rate = 12.5e3;   ///< Hz
  std::size_t min_ionisations = 10000;
  double linear_limit = 0.05;   ///< low-gamma_e region, fraction of total decay

  std::vector<double> excitation_rates() const {
    std::vector<double> g(points);
    for (std::size_t k = 0; k < points; ++k) {
      const double f = points == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(points - 1);
      g[k] = gamma_e_min * std::pow(gamma_e_max / gamma_e_min, f);
    }
    return g;
  }
  void validate() const {
    if (!(gamma_e_min > 0.0 && gamma_e_max >= gamma_e_min)) throw ConfigError("sweep.gamma_e_min", "need 0 < min <= max");
    if (points == 0) throw ConfigError("sweep.points", "must be >= 1");
    if (ratios.empty()) throw ConfigError("sweep.ratios", "at least one ratio required");
    for (double r : ratios)
      if (!(r > 0.0)) throw ConfigError("sweep.ratios", "ratios must be > 0");
    if (!(total_decay > 0.0)) throw ConfigError("sweep.total_decay", "must be > 0");
    if (!(reset_rate > 0.0)) throw ConfigError("sweep.reset_rate", "must be > 0");
    if (min_ionisations < 2) throw ConfigError("sweep.min_ionisations", "must be >= 2");
  }
};

/// Rate parameters that realise a given on-resonance excitation rate with
/// P = 1 uW, alpha = 1 and a power-independent reset.
inline RateParams sweep_rates(double gamma_e, double ratio, double total_decay, double reset_rate) {
  RateParams r;
  r.gamma_e_per_power = gamma_e;
  r.gamma_i = total_decay * ratio / (1.0 + ratio);
  r.gamma_ni = total_decay / (1.0 + ratio);
  r.reset_spontaneous = 0.0;
  r.reset_per_power = reset_rate;
  return r;
}

inline ProtocolResult run_rate_sweep(const SweepConfig& cfg, std::uint64_t master_seed, unsigned threads = 1) {
  cfg.validate();
  const auto ge = cfg.excitation_rates();
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t c = 0; c < cfg.ratios.size(); ++c)
    for (std::size_t k = 0; k < ge.size(); ++k) jobs.emplace_back(c, k);

  struct Row {
    RateEstimate ionisation, reset;
    double oracle = 0.0;
  };
  std::vector<Row> rows(jobs.size());
  const DiffusionParams off{};
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto [c, k] = jobs[j];
    const auto rates = sweep_rates(ge[k], cfg.ratios[c], cfg.total_decay, cfg.reset_rate);
    const auto oracle = reduce_rates(rates, 1.0, 1.0, 0.0);
    const std::uint64_t pseed = point_seed(master_seed, Stream::Sweep, c, k);
    const double target = static_cast<double>(cfg.min_ionisations);
    double duration = 1.05 * target * (1.0 / oracle.ionisation + 1.0 / oracle.reset);
    for (std::uint64_t attempt = 0;; ++attempt) {
      const auto log = simulate(rates, off, LaserDrive::continuous(duration, 1.0, 1.0, 0.0),
                                derive_seed(pseed, {0, attempt}));
      const auto d = dwells_from_log(log);
      if (d.ionisation_times.size() >= cfg.min_ionisations) {
        rows[j] = {fit_exponential(d.ionisation_times), fit_exponential(d.reset_times), oracle.ionisation};
        return;
      }
      const double got = std::max<double>(1.0, static_cast<double>(d.ionisation_times.size()));
      duration *= 1.1 * target / got;
    }
  });

  ProtocolResult result;
  result.protocol = "sweep-rates";
  result.master_seed = master_seed;
  Table t{"nu_i_vs_gamma_e",
          {"ratio", "gamma_e_hz", "nu_i_hz", "nu_i_stderr_hz", "nu_i_oracle_hz", "relative_error", "nu_r_hz",
           "n_ionisation"},
          {}};
  double worst = 0.0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto [c, k] = jobs[j];
    const auto& r = rows[j];
    const double rel = (r.ionisation.rate - r.oracle) / r.oracle;
    worst = std::max(worst, std::abs(rel));
    t.rows.push_back({cfg.ratios[c], ge[k], r.ionisation.rate, r.ionisation.std_error, r.oracle, rel, r.reset.rate,
                      static_cast<double>(r.ionisation.n)});
  }
  result.tables.push_back(std::move(t));
  result.summaries.push_back({"max_relative_error", worst, 0.0, ""});
  for (std::size_t c = 0; c < cfg.ratios.size(); ++c) {
    std::vector<double> x, y, e;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].first != c || ge[jobs[j].second] > cfg.linear_limit * cfg.total_decay) continue;
      x.push_back(ge[jobs[j].second]);
      y.push_back(rows[j].ionisation.rate);
      e.push_back(rows[j].ionisation.std_error);
    }
    const std::string tag = detail::fmt("%g", cfg.ratios[c]);
    const double expected = cfg.ratios[c] / (1.0 + cfg.ratios[c]);
    result.summaries.push_back({"ionising_fraction_ratio_" + tag, expected, 0.0, ""});
    if (x.size() >= 2) {
      const auto f = linear_fit(x, y, e);
      result.summaries.push_back({"low_slope_ratio_" + tag, f.slope, f.slope_error, ""});
    } else {
      result.warnings.push_back("ratio " + tag + ": fewer than 2 points in the linear region");
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Effective-power collapse

struct CollapseResult {
  double min_width = 0.0;
  std::vector<double> effective_power;  ///< uW
  std::vector<double> peak_rate;        ///< Hz
  std::vector<std::string> labels;
  ProportionalFit fit;
};

/// Peak ionisation rate against alpha * P * W_min / W over every fitted
/// spectrum, with W_min the narrowest fitted linewidth among them.
inline CollapseResult effective_power_collapse(std::span<const SpectrumResult* const> spectra) {
  CollapseResult out;
  out.min_width = std::numeric_limits<double>::infinity();
  for (const auto* s : spectra)
    if (s->fit) out.min_width = std::min(out.min_width, s->fit->fwhm);
  if (!std::isfinite(out.min_width)) throw InsufficientData("effective_power_collapse: no fitted spectra");
  for (const auto* s : spectra) {
    if (!s->fit) continue;
    out.effective_power.push_back(effective_power(s->power, s->alpha, s->fit->fwhm, out.min_width));
    out.peak_rate.push_back(s->fit->amplitude);
    out.labels.push_back(s->label);
  }
  out.fit = proportional_fit(out.effective_power, out.peak_rate);
  return out;
}

}  // namespace photoion

#endif  // PHOTOION_PROTOCOLS_HPP
