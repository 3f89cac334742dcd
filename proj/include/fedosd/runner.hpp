#pragma once

// Output-directory orchestration behind the `run`, `plot` and `validate`
// subcommands.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedosd/checkpoint.hpp"
#include "fedosd/config.hpp"
#include "fedosd/experiment.hpp"
#include "fedosd/metrics.hpp"
#include "fedosd/plot.hpp"

namespace fedosd {

struct RunOptions {
  std::optional<std::string> output_dir;  // overrides the config's output_dir
  std::optional<std::uint64_t> seed_override;
  bool force = false;
};

/// Progress hook: (algorithm, seed, result) after each finished job.
using RunObserver = std::function<void(Algorithm, std::uint64_t, const ExperimentResult&)>;

inline std::filesystem::path job_dir(const std::filesystem::path& root, Algorithm a, std::uint64_t seed) {
  return root / to_string(a) / std::to_string(seed);
}

inline void write_error_file(const std::filesystem::path& dir, const Error& e) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(e.kind());
  j["exit_code"] = e.exit_code();
  j["message"] = e.what();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) return;
  try {
    write_text_file((dir / "error.json").string(), j.dump(2) + "\n");
  } catch (const Error&) {
  }
}

inline void write_job(const std::filesystem::path& dir, Algorithm a, std::uint64_t seed,
                      const ExperimentResult& r) {
  std::filesystem::create_directories(dir);
  write_records(r.records, (dir / "records.csv").string());
  write_summary(r.records, to_string(a), seed, (dir / "summary.json").string());
  if (!r.origin.flat.empty()) save_checkpoint(r.origin, (dir / "omega0.ckpt").string());
  if (!r.unlearned.flat.empty()) save_checkpoint(r.unlearned, (dir / "omega_unlearn.ckpt").string());
  save_checkpoint(r.final_model, (dir / "omega_final.ckpt").string());
}

/// Runs every (algorithm, seed) job of `c` and writes the output tree.
/// Returns the output root. Throws Error on failure after writing
/// error.json into the root.
inline std::filesystem::path run_all(ExperimentConfig c, const RunOptions& opts,
                                     const RunObserver& observer = {}) {
  namespace fs = std::filesystem;
  if (opts.output_dir) c.output_dir = *opts.output_dir;
  if (opts.seed_override) c.seeds = {*opts.seed_override};
  const fs::path root = c.output_dir;

  std::error_code ec;
  if (fs::exists(root, ec) && !fs::is_empty(root, ec)) {
    if (!opts.force) throw IoError("output directory exists and is not empty: " + root.string() + " (use --force)");
    fs::remove_all(root, ec);
    if (ec) throw IoError("cannot clear " + root.string() + ": " + ec.message());
  }
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

  try {
    write_text_file((root / "config.resolved.json").string(), to_json(c).dump(2) + "\n");
    nlohmann::ordered_json top = nlohmann::ordered_json::array();
    for (Algorithm a : c.algorithms) {
      for (std::uint64_t seed : c.seeds) {
        ExperimentResult r = run_experiment(c, a, seed);
        write_job(job_dir(root, a, seed), a, seed, r);
        nlohmann::ordered_json e;
        e["algorithm"] = to_string(a);
        e["seed"] = seed;
        e["unlearn_status"] = to_string(r.unlearn_status);
        e["unlearn_rounds_run"] = r.unlearn_rounds_run;
        e["stages"] = stage_summary(r.records);
        top.push_back(std::move(e));
        if (observer) observer(a, seed, r);
      }
    }
    write_text_file((root / "summary.json").string(), top.dump(2) + "\n");
  } catch (const Error& e) {
    write_error_file(root, e);
    throw;
  }
  return root;
}

/// Structural checks over an output tree; returns one message per problem.
inline std::vector<std::string> validate_output(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::vector<std::string> problems;
  if (!fs::is_regular_file(root / "config.resolved.json")) {
    problems.push_back("missing config.resolved.json");
    return problems;
  }
  ExperimentConfig c;
  try {
    c = parse_config((root / "config.resolved.json").string()).config;
  } catch (const Error& e) {
    problems.push_back(std::string("config.resolved.json: ") + e.what());
    return problems;
  }
  for (Algorithm a : c.algorithms) {
    for (std::uint64_t seed : c.seeds) {
      const fs::path dir = job_dir(root, a, seed);
      const std::string tag = std::string(to_string(a)) + "/" + std::to_string(seed);
      std::vector<RoundRecord> recs;
      try {
        recs = read_records((dir / "records.csv").string());
      } catch (const Error& e) {
        problems.push_back(tag + ": " + e.what());
        continue;
      }
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const RoundRecord& r = recs[i];
        if (i > 0 && r.round <= recs[i - 1].round) problems.push_back(tag + ": rounds not increasing at row " + std::to_string(i));
        const bool in_unit = r.asr >= 0 && r.asr <= 1 && r.r_acc_worst >= 0 && r.r_acc_best <= 1;
        const bool ordered = r.r_acc_worst <= r.r_acc_mean + 1e-12 && r.r_acc_mean <= r.r_acc_best + 1e-12;
        if (!in_unit || !ordered) problems.push_back(tag + ": metric out of range at round " + std::to_string(r.round));
      }
      std::vector<const char*> ckpts{"omega_final.ckpt"};
      if (a != Algorithm::Retrain) ckpts.insert(ckpts.end(), {"omega0.ckpt", "omega_unlearn.ckpt"});
      for (const char* name : ckpts) {
        try {
          (void)load_checkpoint((dir / name).string());
        } catch (const Error& e) {
          problems.push_back(tag + ": " + e.what());
        }
      }
      if (!fs::is_regular_file(dir / "summary.json")) problems.push_back(tag + ": missing summary.json");
    }
  }
  return problems;
}

}  // namespace fedosd
