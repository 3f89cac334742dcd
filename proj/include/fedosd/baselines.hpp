#pragma once

// Stage-level baselines sharing the engine's round plumbing: projection-free
// post-training (M5) and retraining from scratch without the target.

#include <vector>

#include "fedosd/engine.hpp"

namespace fedosd {

/// M5: a FedAvg step over the remaining clients with no projection.
inline RoundRecord plain_posttrain_round(FlState& s) { return posttrain_round(s, /*project=*/false); }

struct RetrainResult {
  ModelParams model;
  std::vector<RoundRecord> records;
};

/// Runs the full pretraining schedule from `init` with the target excluded.
/// `s` supplies the clients, target, trigger set and RNG root.
inline RetrainResult retrain(FlState s, const ModelParams& init, const StageSchedule& schedule) {
  schedule.validate();
  s.model = init;
  s.origin = init;
  s.round = 0;
  s.stage = Stage::Pretrain;
  s.lr = schedule.lr0;
  s.lr_decay = schedule.lr_decay;
  s.target_excluded = true;
  RetrainResult out;
  for (int r = 0; r < schedule.pretrain_rounds; ++r) out.records.push_back(pretrain_round(s));
  out.model = std::move(s.model);
  return out;
}

}  // namespace fedosd
