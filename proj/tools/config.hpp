#ifndef PHOTOION_TOOLS_CONFIG_HPP
#define PHOTOION_TOOLS_CONFIG_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

#include "photoion/photoion.hpp"

namespace photoion::cli {

inline constexpr int kSchemaVersion = 1;

/// Malformed structured text; the message carries source:line:column.
class ConfigParseError : public std::invalid_argument {
 public:
  ConfigParseError(const std::string& source, int line, int column, const std::string& message)
      : std::invalid_argument(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string protocol;  ///< command the config is meant for; empty = any
  std::uint64_t seed = 1;
  std::string output_dir;

  Physics physics;
  TraceParams trace;
  DetectionSettings detection;
  double histogram_bin_width = 0.0;  ///< s; 0 = one tenth of the mean dwell

  LaserDrive drive = LaserDrive::continuous(20.0, 0.33, 0.496, 0.0);

  CwScanConfig cw;
  PulsedScanConfig pulsed;
  TwoPulseConfig two_pulse;
  PersistenceConfig persistence;
  FractionConfig fraction;
  SweepConfig sweep;

  /// Checks every section against the module preconditions.
  void validate() const;
};

/// Parses YAML text. Unknown keys and type mismatches are rejected with the
/// offending field path; syntax errors carry line and column.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Full configuration as YAML, every field explicit; parse_config of the
/// result reproduces `cfg`.
std::string dump_config(const RunConfig& cfg);

}  // namespace photoion::cli

#endif  // PHOTOION_TOOLS_CONFIG_HPP
