#include "commands.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "manifest.hpp"

namespace photoion::cli {
namespace fs = std::filesystem;

namespace {

/// Input that cannot be used as given (bad file, missing argument):
/// reported with the validation exit code.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-')
      out.push_back(c);
    else if (!out.empty() && out.back() != '_')
      out.push_back('_');
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

void write_file(const fs::path& full, const std::function<void(std::ostream&)>& body, bool binary = false) {
  fs::create_directories(full.parent_path());
  std::ofstream os(full, binary ? std::ios::binary : std::ios::out);
  if (!os) throw std::runtime_error("cannot write '" + full.string() + "'");
  body(os);
  if (!os) throw std::runtime_error("write failed for '" + full.string() + "'");
}

class Run {
 public:
  Run(const CommandOptions& opts, RunConfig cfg, fs::path out)
      : opts_(opts), cfg_(std::move(cfg)), out_(std::move(out)), manifest_(opts.command, out_) {
    manifest_.set_config(dump_config(cfg_), cfg_.seed, opts.threads);
    manifest_.set_argv(opts.argv);
  }

  void emit(const fs::path& rel, const std::function<void(std::ostream&)>& body, bool binary = false) {
    write_file(out_ / rel, body, binary);
    manifest_.add_file(rel);
  }

  const CommandOptions& opts() const { return opts_; }
  const RunConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }
  Manifest& manifest() { return manifest_; }

 private:
  const CommandOptions& opts_;
  RunConfig cfg_;
  fs::path out_;
  Manifest manifest_;
};

const std::string& single_input(const CommandOptions& o) {
  if (o.inputs.size() != 1) throw InputError(o.command + ": exactly one --input is required");
  return o.inputs.front();
}

std::vector<double> read_dwell_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  return io::read_dwells(in);
}

double auto_bin_width(std::span<const double> d, double configured) {
  if (configured > 0.0) return configured;
  if (d.empty()) return 1.0;
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  return mean > 0.0 ? mean / 10.0 : 1.0;
}

// ---------------------------------------------------------------------------

void cmd_simulate(Run& run) {
  const auto& c = run.cfg();
  const std::uint64_t pseed = point_seed(c.seed, Stream::Cw, 0, 0);
  const auto log = simulate(c.physics.rates, c.physics.diffusion, c.drive, simulation_seed(pseed));
  const auto trace = synthesize(log, c.trace, synthesis_seed(pseed));
  run.emit("events.csv", [&](std::ostream& os) { io::write_event_log(os, log); });
  if (run.opts().format == TraceFormat::Binary)
    run.emit("trace.bin", [&](std::ostream& os) { io::write_trace_binary(os, trace); }, true);
  else
    run.emit("trace.csv", [&](std::ostream& os) { io::write_trace_csv(os, trace); });
}

void cmd_detect(Run& run) {
  const auto& c = run.cfg();
  const fs::path input = single_input(run.opts());
  const auto trace = read_trace_file(input);
  run.manifest().add_input(input);
  const auto plan = plan_detection(trace, c.trace, c.detection);
  const auto rec = detect_events(trace, plan.threshold, plan.hysteresis, plan.resolution);
  if (!rec.warning.empty()) run.manifest().add_warning(rec.warning);
  run.emit("ionisation_dwells.csv", [&](std::ostream& os) { io::write_dwells(os, rec.ionisation_times); });
  run.emit("reset_dwells.csv", [&](std::ostream& os) { io::write_dwells(os, rec.reset_times); });
  run.emit("ionisation_histogram.csv", [&](std::ostream& os) {
    io::write_histogram(os, histogram(rec.ionisation_times, auto_bin_width(rec.ionisation_times, c.histogram_bin_width)));
  });
  run.emit("reset_histogram.csv", [&](std::ostream& os) {
    io::write_histogram(os, histogram(rec.reset_times, auto_bin_width(rec.reset_times, c.histogram_bin_width)));
  });
  run.emit("detection.csv", [&](std::ostream& os) {
    os << "threshold,hysteresis,resolution_s,noise_sigma,excluded\n"
       << io::num(plan.threshold) << ',' << io::num(plan.hysteresis) << ',' << io::num(plan.resolution) << ','
       << io::num(plan.noise_sigma) << ',' << rec.excluded << '\n';
  });
}

DetectionPlan read_detection_file(const fs::path& p, std::size_t& excluded) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot open '" + p.string() + "'");
  std::string header, line;
  std::getline(in, header);
  io::strip_cr(header);
  if (header != "threshold,hysteresis,resolution_s,noise_sigma,excluded")
    throw InputError("'" + p.string() + "' is not a detection summary");
  std::getline(in, line);
  io::strip_cr(line);
  const auto f = io::split(line);
  if (f.size() != 5) throw InputError("'" + p.string() + "': expected 5 columns");
  DetectionPlan plan;
  plan.threshold = io::parse_double(f[0], "threshold");
  plan.hysteresis = io::parse_double(f[1], "hysteresis");
  plan.resolution = io::parse_double(f[2], "resolution_s");
  plan.noise_sigma = io::parse_double(f[3], "noise_sigma");
  excluded = static_cast<std::size_t>(io::parse_double(f[4], "excluded"));
  return plan;
}

void cmd_fit(Run& run) {
  const auto& kind = run.opts().fit_kind;
  const fs::path input = single_input(run.opts());
  if (kind == "rates") {
    if (!fs::is_directory(input)) throw InputError("fit --kind rates expects the output directory of detect");
    DwellRecord rec;
    rec.ionisation_times = read_dwell_file(input / "ionisation_dwells.csv");
    rec.reset_times = read_dwell_file(input / "reset_dwells.csv");
    std::size_t excluded = 0;
    const auto plan = read_detection_file(input / "detection.csv", excluded);
    for (const char* f : {"ionisation_dwells.csv", "reset_dwells.csv", "detection.csv"})
      run.manifest().add_input(input / f);
    const auto r = estimate_cw_rates(rec, plan.resolution);
    run.emit("rates.csv", [&](std::ostream& os) {
      os << "quantity,rate_hz,stderr_hz,n\n";
      auto row = [&](const char* name, const RateEstimate& e) {
        os << name << ',' << io::num(e.rate) << ',' << io::num(e.std_error) << ',' << e.n << '\n';
      };
      row("nu_i", r.ionisation);
      row("nu_r", r.reset);
      row("nu_i_apparent", r.apparent_ionisation);
      row("nu_r_apparent", r.apparent_reset);
    });
  } else if (kind == "exp") {
    const auto d = read_dwell_file(input);
    run.manifest().add_input(input);
    const auto e = fit_exponential(d);
    run.emit("exp_fit.csv", [&](std::ostream& os) {
      os << "rate_hz,stderr_hz,n\n" << io::num(e.rate) << ',' << io::num(e.std_error) << ',' << e.n << '\n';
    });
  } else if (kind == "emg") {
    const auto d = read_dwell_file(input);
    run.manifest().add_input(input);
    const auto f = fit_emg(d);
    run.emit("emg_fit.csv", [&](std::ostream& os) {
      os << "mu_s,mu_stderr_s,sigma_s,sigma_stderr_s,tau_s,tau_stderr_s,log_likelihood,gaussian_mu_s,gaussian_sigma_s,gaussian_log_likelihood,aic_emg,"
            "aic_gaussian,preferred,n\n"
         << io::num(f.mu) << ',' << io::num(f.mu_error) << ',' << io::num(f.sigma) << ',' << io::num(f.sigma_error)
         << ',' << io::num(f.tau) << ',' << io::num(f.tau_error) << ',' << io::num(f.log_likelihood)
         << ',' << io::num(f.gaussian_mu) << ',' << io::num(f.gaussian_sigma) << ','
         << io::num(f.gaussian_log_likelihood) << ',' << io::num(f.aic()) << ',' << io::num(f.gaussian_aic()) << ','
         << (f.prefers_emg() ? "emg" : "gaussian") << ',' << f.n << '\n';
    });
  } else if (kind == "lorentzian") {
    std::ifstream in(input);
    if (!in) throw InputError("cannot open '" + input.string() + "'");
    const auto pts = read_spectrum(in);
    run.manifest().add_input(input);
    SpectrumResult s;
    s.label = input.stem().string();
    s.points = pts;
    s.fit = fit_lorentzian(pts);
    run.emit("fits.csv", [&](std::ostream& os) { io::write_fit_summary(os, std::span(&s, 1)); });
  } else {
    throw ConfigError("--kind", "unknown fit kind '" + kind + "' (rates, exp, emg, lorentzian)");
  }
}

void emit_result(Run& run, const ProtocolResult& r) {
  for (const auto& rel : write_protocol_result(run.out(), r)) run.manifest().add_file(rel);
  for (const auto& w : r.warnings) run.manifest().add_warning(w);
}

void cmd_report(Run& run) {
  if (run.opts().inputs.empty()) throw InputError("report: at least one --input run directory is required");
  bool all_ok = true;
  std::vector<SpectrumResult> fitted;
  std::ostringstream md;
  md << "# photoion report\n\n";
  for (const auto& in : run.opts().inputs) {
    const fs::path dir = in;
    md << "## " << dir.string() << "\n\n";
    std::vector<VerifyIssue> issues;
    try {
      issues = verify_manifest(dir);
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
    if (issues.empty()) {
      md << "Manifest verified: all listed files match their hashes.\n\n";
    } else {
      all_ok = false;
      md << "Manifest verification FAILED:\n\n";
      for (const auto& i : issues) md << "- " << i.path << ": " << i.problem << "\n";
      md << "\n";
    }
    const fs::path summaries = dir / "summaries.csv";
    if (fs::exists(summaries)) {
      md << "| name | value | stderr | unit |\n|---|---|---|---|\n";
      std::ifstream s(summaries);
      std::string line;
      std::getline(s, line);
      while (std::getline(s, line)) {
        const auto f = io::split(line);
        if (f.size() >= 4) md << "| " << f[0] << " | " << f[1] << " | " << f[2] << " | " << f[3] << " |\n";
      }
      md << "\n";
    }
    const fs::path fits = dir / "fits.csv";
    if (fs::exists(fits)) {
      md << "| label | fwhm_hz | fwhm_stderr_hz | amplitude_hz | status |\n|---|---|---|---|---|\n";
      std::ifstream s(fits);
      std::string line;
      std::getline(s, line);
      while (std::getline(s, line)) {
        const auto f = io::split(line);
        if (f.size() < 16) continue;
        md << "| " << f[0] << " | " << f[6] << " | " << f[7] << " | " << f[8] << " | " << f[15] << " |\n";
        if (f[15] != "ok") continue;
        SpectrumResult r;
        r.label = f[0];
        r.power = io::parse_double(f[1], "power_uw");
        r.alpha = io::parse_double(f[2], "alpha");
        LorentzianFit lf;
        lf.fwhm = io::parse_double(f[6], "fwhm_hz");
        lf.amplitude = io::parse_double(f[8], "amplitude_hz");
        r.fit = lf;
        fitted.push_back(std::move(r));
      }
      md << "\n";
    }
  }
  if (fitted.size() >= 2) {
    std::vector<const SpectrumResult*> ptrs;
    for (const auto& r : fitted) ptrs.push_back(&r);
    const auto c = effective_power_collapse(ptrs);
    run.emit("collapse.csv", [&](std::ostream& os) {
      os << "label,effective_power_uw,peak_rate_hz\n";
      for (std::size_t i = 0; i < c.labels.size(); ++i)
        os << c.labels[i] << ',' << io::num(c.effective_power[i]) << ',' << io::num(c.peak_rate[i]) << '\n';
    });
    md << "## Effective-power collapse\n\n"
       << "W_min = " << io::short_num(c.min_width) << " Hz over " << c.fit.n << " spectra; peak rate = "
       << io::short_num(c.fit.slope) << " * P_eff (stderr " << io::short_num(c.fit.slope_error) << " Hz/uW), R^2 = "
       << io::short_num(c.fit.r_squared) << " (centred " << io::short_num(c.fit.r_squared_centered) << ").\n";
  }
  const std::string text = md.str();
  run.emit("report.md", [&](std::ostream& os) { os << text; });
  if (!all_ok) throw std::runtime_error("manifest verification failed");
}

void cmd_defaults(Run& run) {
  RunConfig d;
  const std::string text = dump_config(d);
  run.emit("defaults.yaml", [&](std::ostream& os) { os << text; });
}

void dispatch(Run& run, const std::string& name) {
  const auto& c = run.cfg();
  const unsigned t = run.opts().threads;
  if (name == "simulate") return cmd_simulate(run);
  if (name == "detect") return cmd_detect(run);
  if (name == "fit") return cmd_fit(run);
  if (name == "report") return cmd_report(run);
  if (name == "defaults") return cmd_defaults(run);
  if (name == "scan-cw") return emit_result(run, run_cw_scan(c.physics, c.trace, c.cw, c.seed, t));
  if (name == "scan-pulsed") return emit_result(run, run_pulsed_scan(c.physics, c.trace, c.pulsed, c.seed, t));
  if (name == "reset-rate") return emit_result(run, run_two_pulse_reset(c.physics, c.trace, c.two_pulse, c.seed, t));
  if (name == "persistence") return emit_result(run, run_persistence_scan(c.physics, c.trace, c.persistence, c.seed, t));
  if (name == "fraction") return emit_result(run, run_resonant_fraction_scan(c.physics, c.trace, c.fraction, c.seed, t));
  if (name == "sweep-rates") return emit_result(run, run_rate_sweep(c.sweep, c.seed, t));
  throw ConfigError("protocol", "unknown command '" + name + "'");
}

}  // namespace

fs::path resolve_out_dir(const CommandOptions& opts, const RunConfig& cfg) {
  if (opts.out_dir) return *opts.out_dir;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* root = std::getenv("PHOTOION_OUT_ROOT"); root && *root) return fs::path(root) / opts.command;
  return fs::path("photoion-out") / opts.command;
}

CurrentTrace read_trace_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open trace '" + path.string() + "'");
  char magic[4] = {};
  in.read(magic, 4);
  in.clear();
  in.seekg(0);
  try {
    if (in.gcount() == 4 && std::equal(magic, magic + 4, io::kTraceMagic.begin())) return io::read_trace_binary(in);
    return io::read_trace_csv(in);
  } catch (const FormatError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<fs::path> write_protocol_result(const fs::path& dir, const ProtocolResult& r) {
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& rel, const std::function<void(std::ostream&)>& body) {
    write_file(dir / rel, body);
    written.push_back(rel);
  };
  for (std::size_t i = 0; i < r.spectra.size(); ++i) {
    const auto& s = r.spectra[i];
    char idx[8];
    std::snprintf(idx, sizeof idx, "%02zu_", i);
    const std::string name = std::string(idx) + slug(s.label) + ".csv";
    emit(fs::path("spectra") / name, [&](std::ostream& os) { io::write_spectrum(os, s.points); });
    emit(fs::path("plots") / name, [&](std::ostream& os) { io::write_plot(os, s.points); });
    if (!s.counts.empty())
      emit(fs::path("counts") / name, [&](std::ostream& os) {
        os << "detuning_hz,ionised,idle,invalid,skipped\n";
        for (std::size_t k = 0; k < s.counts.size() && k < s.points.size(); ++k)
          os << io::num(s.points[k].detuning) << ',' << s.counts[k].ionised << ',' << s.counts[k].idle << ','
             << s.counts[k].invalid << ',' << s.counts[k].skipped << '\n';
      });
  }
  if (!r.spectra.empty()) emit("fits.csv", [&](std::ostream& os) { io::write_fit_summary(os, r.spectra); });
  emit("summaries.csv", [&](std::ostream& os) { io::write_summaries(os, r.summaries); });
  for (const auto& t : r.tables) emit(fs::path("tables") / (t.name + ".csv"), [&](std::ostream& os) { io::write_table(os, t); });
  emit("warnings.txt", [&](std::ostream& os) {
    for (const auto& w : r.warnings) os << w << '\n';
  });
  return written;
}

std::vector<SpectrumPoint> read_spectrum(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty spectrum file");
  io::strip_cr(line);
  if (line != "detuning_hz,nu_i_hz,stderr_hz") throw FormatError("expected header 'detuning_hz,nu_i_hz,stderr_hz'");
  std::vector<SpectrumPoint> out;
  while (std::getline(is, line)) {
    io::strip_cr(line);
    if (line.empty()) continue;
    const auto f = io::split(line);
    if (f.size() != 3) throw FormatError("expected 3 columns in spectrum row");
    out.push_back({io::parse_double(f[0], "detuning_hz"), io::parse_double(f[1], "nu_i_hz"),
                   io::parse_double(f[2], "stderr_hz")});
  }
  return out;
}

namespace {

/// Manifest for a run that stopped at configuration loading.
void record_rejected_config(const CommandOptions& opts, const std::string& kind, const std::string& message,
                            const std::string& field, std::ostream& err) {
  try {
    Manifest m(opts.command, resolve_out_dir(opts, RunConfig{}));
    m.set_argv(opts.argv);
    if (opts.config_path) m.add_input(*opts.config_path);
    m.add_error(kind, message, field);
    m.write(kValidationError);
  } catch (const std::exception& e) {
    err << "photoion: " << e.what() << '\n';
  }
}

}  // namespace

int run_command(const CommandOptions& opts, std::ostream& err) {
  RunConfig cfg;
  try {
    if (opts.config_path) cfg = load_config(*opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.command != "run" && !cfg.protocol.empty() && cfg.protocol != opts.command && opts.command != "defaults" &&
        opts.command != "report")
      throw ConfigError("protocol", "config is for '" + cfg.protocol + "' but command is '" + opts.command + "'");
    if (opts.command == "run" && cfg.protocol.empty()) throw ConfigError("protocol", "run needs a protocol in the config");
  } catch (const ConfigError& e) {
    err << "photoion: configuration error: " << e.what() << '\n';
    record_rejected_config(opts, "validation", e.message(), e.field(), err);
    return kValidationError;
  } catch (const ConfigParseError& e) {
    err << "photoion: parse error: " << e.what() << '\n';
    record_rejected_config(opts, "parse", e.what(), "", err);
    return kValidationError;
  }

  const std::string name = opts.command == "run" ? cfg.protocol : opts.command;
  const fs::path out = resolve_out_dir(opts, cfg);
  CommandOptions effective = opts;
  effective.command = name;
  Run run(effective, cfg, out);
  int code = kOk;
  try {
    fs::create_directories(out);
    dispatch(run, name);
  } catch (const ConfigError& e) {
    run.manifest().add_error("validation", e.message(), e.field());
    err << "photoion: configuration error: " << e.what() << '\n';
    code = kValidationError;
  } catch (const InputError& e) {
    run.manifest().add_error("input", e.what());
    err << "photoion: input error: " << e.what() << '\n';
    code = kValidationError;
  } catch (const FormatError& e) {
    run.manifest().add_error("input", e.what());
    err << "photoion: input error: " << e.what() << '\n';
    code = kValidationError;
  } catch (const std::exception& e) {
    run.manifest().add_error("runtime", e.what());
    err << "photoion: " << name << " failed: " << e.what() << '\n';
    code = kRuntimeError;
  }
  try {
    run.manifest().write(code);
  } catch (const std::exception& e) {
    err << "photoion: " << e.what() << '\n';
    if (code == kOk) code = kRuntimeError;
  }
  return code;
}

}  // namespace photoion::cli
