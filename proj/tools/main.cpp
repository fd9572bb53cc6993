#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace photoion::cli;
  CLI::App app{"photoion: single-ion photoionisation spectroscopy simulator and analysis pipeline"};
  app.require_subcommand(1);

  CommandOptions opts;
  for (int i = 0; i < argc; ++i) opts.argv.emplace_back(argv[i]);
  std::string format = "binary";
  std::uint64_t seed = 0;

  struct Entry {
    const char* name;
    const char* help;
  };
  const Entry entries[] = {
      {"simulate", "simulate the drive in the config; write the event log and current trace"},
      {"detect", "segment a trace (--input) into dwell lists and histograms"},
      {"fit", "fit dwell or spectrum files (--kind rates|exp|emg|lorentzian)"},
      {"scan-cw", "CW spectra versus power with rate regressions"},
      {"scan-pulsed", "pulsed spectra via cycle classification and pulse-response inversion"},
      {"reset-rate", "two-pulse reset-rate measurement"},
      {"persistence", "linewidth after a strong pulse versus delay"},
      {"fraction", "spectra at fixed power versus resonant fraction"},
      {"sweep-rates", "ionisation rate versus excitation rate against the analytic oracle"},
      {"report", "verify run directories (--input) and summarise them"},
      {"defaults", "write the full default configuration"},
      {"run", "run the command named by the config's protocol key"},
  };
  for (const auto& s : entries) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config,-c", opts.config_path, "YAML configuration file (schema_version: 1)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed,-s", seed, "master seed (overrides the config)");
    sub->add_option("--out,-o", opts.out_dir, "output directory (default: $PHOTOION_OUT_ROOT/<command>)");
    sub->add_option("--threads,-j", opts.threads, "worker threads; 0 = all cores")->capture_default_str();
    sub->add_option("--format", format, "trace format for simulate")
        ->check(CLI::IsMember({"csv", "binary"}))
        ->capture_default_str();
    sub->add_option("--input,-i", opts.inputs, "input file or directory");
    sub->add_option("--kind", opts.fit_kind, "fit kind: rates, exp, emg, lorentzian")
        ->check(CLI::IsMember({"rates", "exp", "emg", "lorentzian"}))
        ->capture_default_str();
    sub->callback([&opts, &format, &seed, sub, name = std::string(s.name)] {
      opts.command = name;
      if (sub->count("--seed")) opts.seed = seed;
      opts.format = format == "csv" ? TraceFormat::Csv : TraceFormat::Binary;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidationError;
  }
  return run_command(opts, std::cerr);
}
