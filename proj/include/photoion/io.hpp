#ifndef PHOTOION_IO_HPP
#define PHOTOION_IO_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "photoion/ctmc.hpp"
#include "photoion/errors.hpp"
#include "photoion/events.hpp"
#include "photoion/protocols.hpp"
#include "photoion/signal.hpp"

namespace photoion {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw FormatError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError("cannot parse " + what + " value '" + s + "'");
  }
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

/// Sample rate of a trace; the configured value when it matches dt, so that
/// reading back reproduces dt bit for bit.
inline double sample_rate_of(const CurrentTrace& t) {
  const double r = t.params.sample_rate;
  return r > 0.0 && 1.0 / r == t.dt ? r : 1.0 / t.dt;
}

// ---------------------------------------------------------------------------
// Trace: binary

inline constexpr std::array<char, 4> kTraceMagic{'P', 'I', 'T', 'R'};
inline constexpr std::uint32_t kTraceVersion = 1;

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw FormatError("truncated trace header");
  return v;
}

/// Little-endian: magic "PITR", u32 version, f64 sample_rate, f64
/// start_time, u64 count, then count float32 samples.
inline void write_trace_binary(std::ostream& os, const CurrentTrace& t) {
  os.write(kTraceMagic.data(), 4);
  put_le<std::uint32_t>(os, kTraceVersion);
  put_le<double>(os, sample_rate_of(t));
  put_le<double>(os, t.start_time);
  put_le<std::uint64_t>(os, t.samples.size());
  os.write(reinterpret_cast<const char*>(t.samples.data()),
           static_cast<std::streamsize>(t.samples.size() * sizeof(float)));
}

inline CurrentTrace read_trace_binary(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kTraceMagic) throw FormatError("not a binary trace (bad magic)");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kTraceVersion) throw FormatError("unsupported trace version " + std::to_string(version));
  CurrentTrace t;
  const double rate = get_le<double>(is);
  if (!(rate > 0.0)) throw FormatError("trace sample rate must be > 0");
  t.dt = 1.0 / rate;
  t.params.sample_rate = rate;
  t.start_time = get_le<double>(is);
  const auto n = get_le<std::uint64_t>(is);
  t.samples.resize(n);
  is.read(reinterpret_cast<char*>(t.samples.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw FormatError("truncated trace payload");
  return t;
}

// ---------------------------------------------------------------------------
// Trace: CSV

inline void write_trace_csv(std::ostream& os, const CurrentTrace& t) {
  os << "# sample_rate_hz=" << num(sample_rate_of(t)) << ",start_time_s=" << num(t.start_time) << "\n";
  os << "time_s,current\n";
  for (std::size_t k = 0; k < t.samples.size(); ++k)
    os << num(t.time_at(k)) << ',' << short_num(t.samples[k]) << '\n';
}

inline CurrentTrace read_trace_csv(std::istream& is) {
  std::string line;
  CurrentTrace t;
  bool have_rate = false, have_header = false;
  std::vector<double> times;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const auto& kv : split(line.substr(1))) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string key = kv.substr(0, eq);
        key.erase(0, key.find_first_not_of(' '));
        const std::string val = kv.substr(eq + 1);
        if (key == "sample_rate_hz") {
          const double r = parse_double(val, key);
          t.dt = 1.0 / r;
          t.params.sample_rate = r;
          have_rate = true;
        } else if (key == "start_time_s") {
          t.start_time = parse_double(val, key);
        }
      }
      continue;
    }
    if (!have_header) {
      if (line != "time_s,current") throw FormatError("expected header 'time_s,current' at line " + std::to_string(lineno));
      have_header = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 2) throw FormatError("expected 2 columns at line " + std::to_string(lineno));
    times.push_back(parse_double(f[0], "time_s"));
    t.samples.push_back(static_cast<float>(parse_double(f[1], "current")));
  }
  if (!have_header) throw FormatError("missing trace CSV header");
  if (!have_rate) {
    if (times.size() < 2) throw FormatError("sample rate unknown: no comment line and fewer than 2 samples");
    t.dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    t.params.sample_rate = 1.0 / t.dt;
    t.start_time = times.front();
  }
  return t;
}

// ---------------------------------------------------------------------------
// Event log

inline void write_event_log(std::ostream& os, const EventLog& log) {
  os << "# duration_s=" << num(log.duration) << ",seed=" << log.seed << "\n";
  os << "time_s,transition\n";
  for (const auto& e : log.events) os << num(e.time) << ',' << to_string(e.transition) << '\n';
}

inline EventLog read_event_log(std::istream& is) {
  EventLog log;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const auto& kv : split(line.substr(1))) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string key = kv.substr(0, eq);
        key.erase(0, key.find_first_not_of(' '));
        const std::string val = kv.substr(eq + 1);
        if (key == "duration_s") log.duration = parse_double(val, key);
        if (key == "seed") log.seed = std::stoull(val);
      }
      continue;
    }
    if (!header) {
      if (line != "time_s,transition") throw FormatError("expected header 'time_s,transition'");
      header = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 2) throw FormatError("expected 2 columns at line " + std::to_string(lineno));
    const auto tr = transition_from_string(f[1]);
    if (!tr) throw FormatError("unknown transition '" + f[1] + "' at line " + std::to_string(lineno));
    log.events.push_back({parse_double(f[0], "time_s"), *tr});
  }
  if (!header) throw FormatError("missing event log header");
  if (!log.valid()) throw FormatError("event log violates the state automaton or time ordering");
  return log;
}

// ---------------------------------------------------------------------------
// Dwells, histograms, spectra, tables

inline void write_dwells(std::ostream& os, std::span<const double> dwells) {
  os << "dwell_s\n";
  for (double d : dwells) os << num(d) << '\n';
}

inline std::vector<double> read_dwells(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty dwell file");
  strip_cr(line);
  if (line != "dwell_s") throw FormatError("expected header 'dwell_s'");
  std::vector<double> out;
  while (std::getline(is, line)) {
    strip_cr(line);
    if (!line.empty()) out.push_back(parse_double(line, "dwell_s"));
  }
  return out;
}

inline void write_histogram(std::ostream& os, std::span<const HistogramBin> bins) {
  os << "bin_center_s,count\n";
  for (const auto& b : bins) os << num(b.center) << ',' << b.count << '\n';
}

inline void write_spectrum(std::ostream& os, std::span<const SpectrumPoint> pts) {
  os << "detuning_hz,nu_i_hz,stderr_hz\n";
  for (const auto& p : pts) os << num(p.detuning) << ',' << num(p.nu_i) << ',' << num(p.std_error) << '\n';
}

/// Plot-ready x,y,yerr triples.
inline void write_plot(std::ostream& os, std::span<const SpectrumPoint> pts) {
  os << "x,y,yerr\n";
  for (const auto& p : pts) os << num(p.detuning) << ',' << num(p.nu_i) << ',' << num(p.std_error) << '\n';
}

inline void write_table(std::ostream& os, const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << num(r[i]);
    os << '\n';
  }
}

inline void write_fit_summary(std::ostream& os, std::span<const SpectrumResult> spectra) {
  os << "label,power_uw,alpha,delay_s,center_hz,center_stderr_hz,fwhm_hz,fwhm_stderr_hz,amplitude_hz,"
        "amplitude_stderr_hz,offset_hz,offset_stderr_hz,chi2,dof,reset_rate_hz,status\n";
  for (const auto& s : spectra) {
    os << s.label << ',' << num(s.power) << ',' << num(s.alpha) << ',' << num(s.delay) << ',';
    if (s.fit) {
      const auto& f = *s.fit;
      os << num(f.center) << ',' << num(f.center_error) << ',' << num(f.fwhm) << ',' << num(f.fwhm_error) << ','
         << num(f.amplitude) << ',' << num(f.amplitude_error) << ',' << num(f.offset) << ',' << num(f.offset_error)
         << ',' << num(f.chi2) << ',' << f.dof << ',' << num(s.reset_rate) << ",ok\n";
    } else {
      os << ",,,,,,,,,," << num(s.reset_rate) << ",failed: ";
      for (char c : s.fit_error) os << (c == ',' ? ';' : c);
      os << '\n';
    }
  }
}

inline void write_summaries(std::ostream& os, std::span<const Summary> summaries) {
  os << "name,value,stderr,unit\n";
  for (const auto& s : summaries) os << s.name << ',' << num(s.value) << ',' << num(s.std_error) << ',' << s.unit << '\n';
}

}  // namespace io
}  // namespace photoion

#endif  // PHOTOION_IO_HPP
