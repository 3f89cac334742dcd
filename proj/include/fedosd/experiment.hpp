#pragma once

// Pretrain -> unlearn -> post-train for one (algorithm, seed) pair.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedosd/baselines.hpp"
#include "fedosd/config.hpp"
#include "fedosd/data.hpp"
#include "fedosd/engine.hpp"

namespace fedosd {

// Independent RNG streams derived from the experiment seed.
enum class Stream : std::uint64_t { Data = 1, Partition = 2, Poison = 3, Init = 4, Training = 5, Direction = 6 };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s) {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

inline FullDataset load_dataset(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.source == DataSource::Idx)
    return load_idx_dataset(c.idx.train_images, c.idx.train_labels, c.idx.test_images, c.idx.test_labels);
  Rng rng(stream_seed(seed, Stream::Data));
  return generate_blobs(c.blobs, rng);
}

/// Data, partition, poisoned target and initial model, ready for pretraining.
inline FlState build_initial_state(const ExperimentConfig& c, std::uint64_t seed) {
  const FullDataset ds = load_dataset(c, seed);
  Rng part_rng(stream_seed(seed, Stream::Partition));
  FlState s;
  s.clients = partition(ds, c.partition, part_rng);
  if (c.target_client >= s.clients.size()) throw ConfigError("target client out of range");
  Rng poison_rng(stream_seed(seed, Stream::Poison));
  PoisonResult p = poison(s.clients[c.target_client], c.trigger, c.poison_fraction, ds.shape,
                          ds.num_classes, poison_rng);
  s.clients[c.target_client] = std::move(p.client);
  s.trigger_test = std::move(p.trigger_test);
  s.target_id = c.target_client;

  Rng init_rng(stream_seed(seed, Stream::Init));
  s.model = init_model(mlp_shapes(ds.train.dim(), c.hidden, ds.num_classes), init_rng);
  s.origin = s.model;
  s.stage = Stage::Pretrain;
  s.lr = c.schedule.lr0;
  s.lr_decay = c.schedule.lr_decay;
  s.seed = stream_seed(seed, Stream::Training);
  s.training = c.training;
  return s;
}

enum class UnlearnStatus { Completed, EarlyStopped, TooManySkips, NotRun };

inline const char* to_string(UnlearnStatus s) {
  switch (s) {
    case UnlearnStatus::Completed: return "completed";
    case UnlearnStatus::EarlyStopped: return "early_stopped";
    case UnlearnStatus::TooManySkips: return "too_many_skips";
    case UnlearnStatus::NotRun: return "not_run";
  }
  return "?";
}

struct ExperimentResult {
  std::vector<RoundRecord> records;
  ModelParams origin;     // omega^0 (empty for retraining)
  ModelParams unlearned;  // omega^{T_u} (empty for retraining)
  ModelParams final_model;
  UnlearnStatus unlearn_status = UnlearnStatus::NotRun;
  int unlearn_rounds_run = 0;
};

/// Error raised while running a stage, tagged with where it happened.
class StageError : public Error {
 public:
  StageError(const Error& cause, Stage stage, std::size_t round)
      : Error(cause.kind(), std::string(to_string(stage)) + " round " + std::to_string(round) + ": " + cause.what()) {}
};

/// Unlearning loop: at most T_u rounds, ending early once the trigger ASR
/// stays at or below early_stop_asr for early_stop_patience rounds, or after
/// max_consecutive_skips skipped rounds in a row.
inline UnlearnStatus run_unlearning(FlState& s, const DirectionStrategy& strategy, int max_rounds,
                                    const UnlearnOptions& opts, std::vector<RoundRecord>& records,
                                    int* rounds_run = nullptr) {
  int low_asr = 0, skips = 0, n = 0;
  UnlearnStatus status = UnlearnStatus::Completed;
  while (n < max_rounds) {
    RoundRecord rec = unlearn_round(s, strategy, opts);
    ++n;
    skips = rec.has_flag("skipped") ? skips + 1 : 0;
    low_asr = rec.asr <= opts.early_stop_asr ? low_asr + 1 : 0;
    if (low_asr >= opts.early_stop_patience) {
      rec.add_flag("early_stop");
      status = UnlearnStatus::EarlyStopped;
    } else if (skips >= opts.max_consecutive_skips) {
      rec.add_flag("too_many_skips");
      status = UnlearnStatus::TooManySkips;
    }
    records.push_back(std::move(rec));
    if (status != UnlearnStatus::Completed) break;
  }
  if (rounds_run) *rounds_run = n;
  return status;
}

inline ExperimentResult run_experiment(const ExperimentConfig& c, Algorithm algorithm, std::uint64_t seed) {
  c.schedule.validate();
  FlState s = build_initial_state(c, seed);
  ExperimentResult out;

  auto guarded = [&](auto&& body) {
    try {
      body();
    } catch (const Error& e) {
      throw StageError(e, s.stage, s.round);
    }
  };

  if (algorithm == Algorithm::Retrain) {
    const ModelParams init = s.model;
    guarded([&] {
      RetrainResult r = retrain(s, init, c.schedule);
      out.records = std::move(r.records);
      out.final_model = std::move(r.model);
    });
    return out;
  }

  guarded([&] {
    for (int r = 0; r < c.schedule.pretrain_rounds; ++r) out.records.push_back(pretrain_round(s));
  });
  out.origin = s.model;
  s.origin = s.model;

  s.stage = Stage::Unlearn;
  const DirectionStrategy strategy =
      make_strategy(direction_kind(algorithm), c.directions, stream_seed(seed, Stream::Direction));
  guarded([&] {
    out.unlearn_status = run_unlearning(s, strategy, c.schedule.unlearn_rounds, c.unlearn, out.records,
                                        &out.unlearn_rounds_run);
  });
  if (out.unlearn_rounds_run == 0) out.unlearn_status = UnlearnStatus::NotRun;
  out.unlearned = s.model;

  s.stage = Stage::PostTrain;
  s.target_excluded = true;
  const bool project = algorithm != Algorithm::M5;
  guarded([&] {
    for (int r = c.schedule.unlearn_rounds; r < c.schedule.total_rounds; ++r)
      out.records.push_back(posttrain_round(s, project));
  });
  s.stage = Stage::Done;
  out.final_model = s.model;
  return out;
}

}  // namespace fedosd
