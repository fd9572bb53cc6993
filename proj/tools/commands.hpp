#ifndef PHOTOION_TOOLS_COMMANDS_HPP
#define PHOTOION_TOOLS_COMMANDS_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "photoion/photoion.hpp"

namespace photoion::cli {

enum ExitCode : int { kOk = 0, kValidationError = 1, kRuntimeError = 2 };

enum class TraceFormat { Csv, Binary };

struct CommandOptions {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  unsigned threads = 1;
  TraceFormat format = TraceFormat::Binary;
  std::vector<std::string> inputs;
  std::string fit_kind = "rates";  ///< rates | exp | emg | lorentzian
  std::vector<std::string> argv;
};

/// Runs one subcommand end to end (config, outputs, manifest) and returns
/// its exit code. Diagnostics go to `err`.
int run_command(const CommandOptions& opts, std::ostream& err);

/// Output directory: --out, else config output_dir, else
/// $PHOTOION_OUT_ROOT/<command>, else ./photoion-out/<command>.
std::filesystem::path resolve_out_dir(const CommandOptions& opts, const RunConfig& cfg);

/// Reads a trace, detecting the binary format by its magic bytes.
CurrentTrace read_trace_file(const std::filesystem::path& path);

/// Writes every spectrum, fit, summary, table and warning of a protocol
/// result below `dir`; returns the written paths relative to `dir`.
std::vector<std::filesystem::path> write_protocol_result(const std::filesystem::path& dir, const ProtocolResult& r);

std::vector<SpectrumPoint> read_spectrum(std::istream& is);

inline constexpr const char* kCommands[] = {"simulate",    "detect",   "fit",         "scan-cw",
                                            "scan-pulsed", "reset-rate", "persistence", "fraction",
                                            "sweep-rates", "report",   "defaults",    "run"};

}  // namespace photoion::cli

#endif  // PHOTOION_TOOLS_COMMANDS_HPP
