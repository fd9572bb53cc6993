#include "config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t fields are read as uint64_t");

namespace photoion::cli {
namespace {

// One schema definition drives both parsing and emission: each visit_*
// function names every field of a section exactly once.

class Reader {
 public:
  Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError(path_.empty() ? "<root>" : path_, "expected a mapping" + where(node_));
  }

  template <class T>
  void field(const char* key, T& out) {
    const YAML::Node v = lookup(key);
    if (!v) return;
    read(v, join(key), out);
  }

  template <class Fn>
  void section(const char* key, Fn&& fn) {
    const YAML::Node v = lookup(key);
    Reader sub(v ? v : YAML::Node(), join(key));
    fn(sub);
    sub.finish();
  }

  template <class T, class Fn>
  void list(const char* key, std::vector<T>& out, Fn&& fn) {
    const YAML::Node v = lookup(key);
    if (!v) return;
    if (!v.IsSequence()) throw ConfigError(join(key), "expected a list" + where(v));
    out.assign(v.size(), T{});
    for (std::size_t i = 0; i < v.size(); ++i) {
      Reader sub(v[i], join(key) + "[" + std::to_string(i) + "]");
      if (!v[i].IsMap()) throw ConfigError(sub.path_, "expected a mapping" + where(v[i]));
      fn(sub, out[i]);
      sub.finish();
    }
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError(join(key.c_str()), "unknown key" + where(kv.first));
    }
  }

 private:
  static std::string where(const YAML::Node& n) {
    const auto m = n.Mark();
    if (m.is_null()) return "";
    return " (line " + std::to_string(m.line + 1) + ", column " + std::to_string(m.column + 1) + ")";
  }

  std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node lookup(const char* key) {
    seen_.insert(key);
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& cn = node_;
    YAML::Node v = cn[key];
    if (!v.IsDefined()) return YAML::Node(YAML::NodeType::Undefined);
    return v;
  }

  static void read(const YAML::Node& v, const std::string& path, double& out) {
    if (!v.IsScalar()) throw ConfigError(path, "expected a number" + where(v));
    try {
      out = v.as<double>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path, "expected a number, got '" + v.Scalar() + "'" + where(v));
    }
  }
  static void read(const YAML::Node& v, const std::string& path, bool& out) {
    try {
      out = v.as<bool>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path, "expected true/false" + where(v));
    }
  }
  static void read(const YAML::Node& v, const std::string& path, std::uint64_t& out) {
    try {
      if (!v.IsScalar() || (!v.Scalar().empty() && v.Scalar()[0] == '-')) throw YAML::Exception({}, "");
      out = v.as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path, "expected a non-negative integer" + where(v));
    }
  }
  static void read(const YAML::Node& v, const std::string& path, int& out) {
    try {
      out = v.as<int>();
    } catch (const YAML::Exception&) {
      throw ConfigError(path, "expected an integer" + where(v));
    }
  }
  static void read(const YAML::Node& v, const std::string& path, std::string& out) {
    if (!v.IsScalar()) throw ConfigError(path, "expected a string" + where(v));
    out = v.Scalar();
  }
  static void read(const YAML::Node& v, const std::string& path, std::optional<double>& out) {
    if (v.IsNull()) {
      out.reset();
      return;
    }
    double d = 0.0;
    read(v, path, d);
    out = d;
  }
  static void read(const YAML::Node& v, const std::string& path, std::vector<double>& out) {
    if (!v.IsSequence()) throw ConfigError(path, "expected a list of numbers" + where(v));
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double d = 0.0;
      read(v[i], path + "[" + std::to_string(i) + "]", d);
      out.push_back(d);
    }
  }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(YAML::Emitter& e) : e_(e) {}

  template <class T>
  void field(const char* key, const T& v) {
    e_ << YAML::Key << key << YAML::Value;
    write(v);
  }

  template <class Fn>
  void section(const char* key, Fn&& fn) {
    e_ << YAML::Key << key << YAML::Value << YAML::BeginMap;
    fn(*this);
    e_ << YAML::EndMap;
  }

  template <class T, class Fn>
  void list(const char* key, std::vector<T>& items, Fn&& fn) {
    e_ << YAML::Key << key << YAML::Value << YAML::BeginSeq;
    for (auto& item : items) {
      e_ << YAML::BeginMap;
      fn(*this, item);
      e_ << YAML::EndMap;
    }
    e_ << YAML::EndSeq;
  }

 private:
  void write(double v) { e_ << v; }
  void write(bool v) { e_ << (v ? "true" : "false"); }
  void write(std::uint64_t v) { e_ << v; }
  void write(int v) { e_ << v; }
  void write(const std::string& v) { e_ << YAML::DoubleQuoted << v; }
  void write(const std::optional<double>& v) {
    if (v)
      e_ << *v;
    else
      e_ << YAML::Null;
  }
  void write(const std::vector<double>& v) {
    e_ << YAML::Flow << YAML::BeginSeq;
    for (double d : v) e_ << d;
    e_ << YAML::EndSeq;
  }

  YAML::Emitter& e_;
};

template <class V>
void visit_grid(V& v, DetuningGrid& g) {
  v.field("values", g.values);
  v.field("span_widths", g.span_widths);
  v.field("points", g.points);
}

template <class V>
void visit_timing(V& v, PulseTiming& t) {
  v.field("pulse", t.pulse);
  v.field("dark", t.dark);
  v.field("cycles", t.cycles);
}

template <class V>
void visit_readout(V& v, ReadoutSettings& r) {
  v.field("lead", r.lead);
  v.field("pre_begin", r.pre.begin);
  v.field("pre_end", r.pre.end);
  v.field("readout_delay", r.readout_delay);
  v.field("readout_length", r.readout_length);
  v.field("threshold_fraction", r.threshold_fraction);
  v.field("invalid_warning", r.invalid_warning);
}

template <class V>
void visit_reset(V& v, ResetModel& r) {
  v.field("from_physics", r.from_physics);
  v.field("intercept", r.intercept);
  v.field("slope", r.slope);
}

template <class V>
void visit(V& v, RunConfig& c) {
  v.field("schema_version", c.schema_version);
  v.field("protocol", c.protocol);
  v.field("seed", c.seed);
  v.field("output_dir", c.output_dir);
  v.section("physics", [&](V& p) {
    p.section("rates", [&](V& r) {
      r.field("gamma_e_per_power", c.physics.rates.gamma_e_per_power);
      r.field("homogeneous_fwhm", c.physics.rates.homogeneous_fwhm);
      r.field("gamma_i", c.physics.rates.gamma_i);
      r.field("gamma_ni", c.physics.rates.gamma_ni);
      r.field("reset_spontaneous", c.physics.rates.reset_spontaneous);
      r.field("reset_per_power", c.physics.rates.reset_per_power);
    });
    p.section("diffusion", [&](V& d) {
      d.field("enabled", c.physics.diffusion.enabled);
      d.field("sigma_per_power", c.physics.diffusion.sigma_per_power);
      d.field("correlation_time", c.physics.diffusion.correlation_time);
    });
  });
  v.section("trace", [&](V& t) {
    t.field("sample_rate", c.trace.sample_rate);
    t.field("level_high", c.trace.level_high);
    t.field("level_low", c.trace.level_low);
    t.field("noise_sigma", c.trace.noise_sigma);
    t.field("bandwidth", c.trace.bandwidth);
  });
  v.section("detection", [&](V& d) {
    d.field("hysteresis_factor", c.detection.hysteresis_factor);
    d.field("min_resolution_time_constants", c.detection.min_resolution_time_constants);
    d.field("resolution_margin", c.detection.resolution_margin);
    d.field("threshold", c.detection.threshold);
    d.field("hysteresis", c.detection.hysteresis);
    d.field("resolution", c.detection.resolution);
    d.field("histogram_bin_width", c.histogram_bin_width);
  });
  v.section("drive", [&](V& d) {
    d.field("repeat_count", c.drive.repeat_count);
    d.list("segments", c.drive.segments, [](V& s, DriveSegment& seg) {
      s.field("duration", seg.duration);
      s.field("power", seg.power);
      s.field("resonant_fraction", seg.resonant_fraction);
      s.field("detuning", seg.detuning);
    });
  });
  v.section("cw", [&](V& s) {
    s.field("powers", c.cw.powers);
    s.field("alpha", c.cw.alpha);
    s.field("trace_duration", c.cw.trace_duration);
    s.section("grid", [&](V& g) { visit_grid(g, c.cw.grid); });
  });
  v.section("pulsed", [&](V& s) {
    s.field("powers", c.pulsed.powers);
    s.field("alpha", c.pulsed.alpha);
    s.section("timing", [&](V& t) { visit_timing(t, c.pulsed.timing); });
    s.section("grid", [&](V& g) { visit_grid(g, c.pulsed.grid); });
    s.section("readout", [&](V& r) { visit_readout(r, c.pulsed.readout); });
    s.section("reset", [&](V& r) { visit_reset(r, c.pulsed.reset); });
  });
  v.section("two_pulse", [&](V& s) {
    auto& t = c.two_pulse;
    s.field("first_power", t.first_power);
    s.field("first_alpha", t.first_alpha);
    s.field("first_detuning", t.first_detuning);
    s.field("first_pulse", t.first_pulse);
    s.field("first_readout", t.first_readout);
    s.field("second_powers", t.second_powers);
    s.field("length_multiples", t.length_multiples);
    s.field("second_alpha", t.second_alpha);
    s.field("second_detuning", t.second_detuning);
    s.field("check_length", t.check_length);
    s.field("dark", t.dark);
    s.field("cycles", t.cycles);
    s.section("readout", [&](V& r) { visit_readout(r, t.readout); });
    s.section("nominal_reset", [&](V& r) { visit_reset(r, t.nominal_reset); });
  });
  v.section("persistence", [&](V& s) {
    auto& p = c.persistence;
    s.field("strong_power", p.strong_power);
    s.field("strong_duration", p.strong_duration);
    s.field("delays", p.delays);
    s.field("probe_power", p.probe_power);
    s.field("probe_alpha", p.probe_alpha);
    s.section("timing", [&](V& t) { visit_timing(t, p.timing); });
    s.section("grid", [&](V& g) { visit_grid(g, p.grid); });
    s.section("readout", [&](V& r) { visit_readout(r, p.readout); });
    s.section("reset", [&](V& r) { visit_reset(r, p.reset); });
  });
  v.section("fraction", [&](V& s) {
    auto& f = c.fraction;
    s.field("power", f.power);
    s.field("alphas", f.alphas);
    s.section("timing", [&](V& t) { visit_timing(t, f.timing); });
    s.section("grid", [&](V& g) { visit_grid(g, f.grid); });
    s.section("readout", [&](V& r) { visit_readout(r, f.readout); });
    s.section("reset", [&](V& r) { visit_reset(r, f.reset); });
  });
  v.section("sweep", [&](V& s) {
    auto& w = c.sweep;
    s.field("gamma_e_min", w.gamma_e_min);
    s.field("gamma_e_max", w.gamma_e_max);
    s.field("points", w.points);
    s.field("ratios", w.ratios);
    s.field("total_decay", w.total_decay);
    s.field("reset_rate", w.reset_rate);
    s.field("min_ionisations", w.min_ionisations);
    s.field("linear_limit", w.linear_limit);
  });
}

template <class Fn>
void prefixed(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.field(), e.message());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported schema version " + std::to_string(schema_version) +
                                            " (expected " + std::to_string(kSchemaVersion) + ")");
  prefixed("physics.rates.", [&] { physics.rates.validate(); });
  prefixed("physics.diffusion.", [&] { physics.diffusion.validate(); });
  prefixed("trace.", [&] { trace.validate(); });
  prefixed("", [&] { detection.validate(); });
  if (!(histogram_bin_width >= 0.0)) throw ConfigError("detection.histogram_bin_width", "must be >= 0");
  prefixed("drive.", [&] {
    try {
      drive.validate();
    } catch (const DomainError& e) {
      throw ConfigError("segments", e.what());
    }
  });
  prefixed("", [&] { cw.validate(); });
  prefixed("", [&] { pulsed.validate(); });
  prefixed("", [&] { two_pulse.validate(); });
  prefixed("", [&] { persistence.validate(); });
  prefixed("", [&] { fraction.validate(); });
  prefixed("", [&] { sweep.validate(); });
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigParseError(source, e.mark.line + 1, e.mark.column + 1, e.msg);
  }
  RunConfig cfg;
  if (root.IsNull()) {
    cfg.validate();
    return cfg;
  }
  Reader reader(root, "");
  visit(reader, cfg);
  reader.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  Writer w(e);
  visit(w, copy);
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace photoion::cli
