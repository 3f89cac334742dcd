// Command-line front end: run experiments, draw plots, validate outputs.
//
// Log verbosity comes from FEDOSD_LOG_LEVEL (trace, debug, info, warn,
// error, off); default info.

#include <cstdlib>
#include <iostream>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fedosd/fedosd.hpp"

namespace {

void configure_logging() {
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("FEDOSD_LOG_LEVEL");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

int report(const fedosd::Error& e) {
  spdlog::error("{} error: {}", fedosd::to_string(e.kind()), e.what());
  return e.exit_code();
}

int cmd_run(const std::string& config_path, const fedosd::RunOptions& opts) {
  const fedosd::ParsedConfig parsed = fedosd::parse_config(config_path);
  for (const auto& note : parsed.notes) spdlog::info("note: {}", note);
  const auto root = fedosd::run_all(parsed.config, opts, [](fedosd::Algorithm a, std::uint64_t seed,
                                                             const fedosd::ExperimentResult& r) {
    const auto& last = r.records.back();
    spdlog::info("{} seed {}: {} records, unlearning {} after {} rounds, final asr {:.3f} r_acc {:.3f}",
                 fedosd::to_string(a), seed, r.records.size(), fedosd::to_string(r.unlearn_status),
                 r.unlearn_rounds_run, last.asr, last.r_acc_mean);
  });
  spdlog::info("outputs written to {}", root.string());
  return 0;
}

int cmd_plot(const std::string& dir) {
  for (const auto& p : fedosd::emit_plots(dir)) spdlog::info("wrote {}", p);
  return 0;
}

int cmd_validate(const std::string& config_path, const std::string& dir) {
  if (!config_path.empty()) {
    const auto parsed = fedosd::parse_config(config_path);
    for (const auto& note : parsed.notes) spdlog::info("note: {}", note);
    spdlog::info("config ok: {}", config_path);
  }
  if (dir.empty()) return 0;
  const auto problems = fedosd::validate_output(dir);
  for (const auto& p : problems) spdlog::error("{}", p);
  if (!problems.empty()) return static_cast<int>(fedosd::ErrorKind::Io);
  spdlog::info("output tree ok: {}", dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Federated unlearning with orthogonal steepest descent"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  bool force = false;
  std::uint64_t seed_override = 0;

  auto* run = app.add_subcommand("run", "run every configured (algorithm, seed) job");
  run->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* out_opt = run->add_option("--output", output_dir, "output directory (overrides cli.output_dir)");
  run->add_flag("--force", force, "overwrite a non-empty output directory");
  auto* seed_opt = run->add_option("--seed-override", seed_override, "run this single seed instead");

  auto* plot = app.add_subcommand("plot", "write asr.svg, racc.svg and dist.svg for an output directory");
  plot->add_option("--output", output_dir, "output directory of a previous run")->required();

  auto* validate = app.add_subcommand("validate", "check a config file and/or an output directory");
  validate->add_option("--config", config_path, "config to parse");
  validate->add_option("--output", output_dir, "output directory to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(fedosd::ErrorKind::Config);
  }

  try {
    if (*run) {
      fedosd::RunOptions opts;
      if (*out_opt) opts.output_dir = output_dir;
      if (*seed_opt) opts.seed_override = seed_override;
      opts.force = force;
      return cmd_run(config_path, opts);
    }
    if (*plot) return cmd_plot(output_dir);
    if (config_path.empty() && output_dir.empty()) {
      spdlog::error("validate needs --config and/or --output");
      return static_cast<int>(fedosd::ErrorKind::Config);
    }
    return cmd_validate(config_path, output_dir);
  } catch (const fedosd::Error& e) {
    return report(e);
  } catch (const std::exception& e) {
    spdlog::error("unexpected error: {}", e.what());
    return 1;
  }
}
