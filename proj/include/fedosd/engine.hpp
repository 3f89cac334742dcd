#pragma once

// Round-level state machine: FedAvg pretraining, the unlearning stage and
// the projected post-training stage.

#include <optional>
#include <string>
#include <vector>

#include "fedosd/data.hpp"
#include "fedosd/directions.hpp"
#include "fedosd/error.hpp"
#include "fedosd/linalg.hpp"
#include "fedosd/metrics.hpp"
#include "fedosd/nn.hpp"
#include "fedosd/random.hpp"

namespace fedosd {

struct StageSchedule {
  int pretrain_rounds = 300;
  int unlearn_rounds = 100;  // T_u
  int total_rounds = 200;    // T; post-training runs T - T_u rounds
  double lr0 = 0.05;
  double lr_decay = 0.999;

  void validate() const {
    if (pretrain_rounds < 0) throw ConfigError("pretrain_rounds must be >= 0");
    if (unlearn_rounds < 0) throw ConfigError("unlearn_rounds must be >= 0");
    if (total_rounds < unlearn_rounds) throw ConfigError("total_rounds must be >= unlearn_rounds");
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  }
};

struct LocalTrainingOptions {
  std::size_t batch_size = 0;  // 0 = full batch
  int local_epochs = 1;
};

struct UnlearnOptions {
  double conflict_tol = kDefaultConflictTol;
  double early_stop_asr = 0.01;   // stop once ASR stays at or below this ...
  int early_stop_patience = 3;    // ... for this many consecutive rounds
  int max_consecutive_skips = 5;
};

struct FlState {
  ModelParams model;
  ModelParams origin;  // omega^0 once unlearning starts; the initial model before that
  std::size_t round = 0;
  Stage stage = Stage::Pretrain;
  double lr = 0.0;
  double lr_decay = 1.0;
  std::vector<ClientDataset> clients;
  std::optional<std::size_t> target_id;
  bool target_excluded = false;  // target dropped from participation
  Batch trigger_test;            // empty when there is no target
  std::uint64_t seed = 0;        // root of the per-(round, client) training streams
  LocalTrainingOptions training;

  bool is_target(std::size_t i) const { return target_id && *target_id == i; }

  std::vector<std::size_t> participants() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < clients.size(); ++i)
      if (!(target_excluded && is_target(i))) ids.push_back(i);
    return ids;
  }

  // Every client except the target, ascending.
  std::vector<std::size_t> remaining() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < clients.size(); ++i)
      if (!is_target(i)) ids.push_back(i);
    return ids;
  }
};

/// Each (round, client) pair draws from its own stream so results do not
/// depend on which other clients trained in the round.
inline Rng client_rng(const FlState& s, std::size_t client) {
  return Rng(derive_seed(derive_seed(s.seed, s.round), client));
}

inline LocalUpdate train_client(const FlState& s, std::size_t client, Loss loss) {
  Rng rng = client_rng(s, client);
  return local_train(s.model, s.clients[client].train, s.lr, s.training.local_epochs,
                     s.training.batch_size, loss, rng);
}

/// Fills the metric fields of `rec` for the current model.
inline void evaluate_into(const FlState& s, RoundRecord& rec) {
  rec.asr = s.trigger_test.size() > 0 ? asr(s.model, s.trigger_test) : 0.0;
  std::vector<const Batch*> tests;
  double ce_sum = 0.0;
  const auto rem = s.remaining();
  for (std::size_t i : rem) {
    tests.push_back(&s.clients[i].test);
    ce_sum += evaluate_loss(s.model, s.clients[i].train, Loss::CrossEntropy);
  }
  const AccuracyStats acc = r_acc(s.model, tests);
  rec.r_acc_mean = acc.mean;
  rec.r_acc_std = acc.std;
  rec.r_acc_worst = acc.worst;
  rec.r_acc_best = acc.best;
  rec.mean_remaining_ce_loss = rem.empty() ? 0.0 : ce_sum / static_cast<double>(rem.size());
  rec.target_uce_loss =
      s.target_id ? evaluate_loss(s.model, s.clients[*s.target_id].train, Loss::Unlearning) : 0.0;
  rec.dist_origin = dist_origin(s.model, s.origin);
}

// Stamps the round/stage/lr the update used, advances the schedule and
// evaluates the updated model.
inline void finish_round(FlState& s, RoundRecord& rec) {
  rec.round = s.round;
  rec.stage = s.stage;
  rec.lr = s.lr;
  s.lr *= s.lr_decay;
  s.round += 1;
  evaluate_into(s, rec);
}

/// FedAvg: every participant trains with CE, the server steps along the
/// uniform average of the uploaded gradients.
inline RoundRecord pretrain_round(FlState& s) {
  if (s.stage != Stage::Pretrain) throw PreconditionError("pretrain_round outside the pretrain stage");
  const auto ids = s.participants();
  if (ids.empty()) throw ConfigError("no participating clients");
  GradientMatrix grads(s.model.size());
  std::vector<double> avg(s.model.size(), 0.0);
  for (std::size_t i : ids) {
    const LocalUpdate up = train_client(s, i, Loss::CrossEntropy);
    axpy(1.0 / static_cast<double>(ids.size()), up.gradient.flat, avg);
    grads.add(i, up.gradient);
  }
  RoundRecord rec;
  if (norm(avg) > 0.0) rec.nc = conflict_count(avg, grads);
  axpy(-s.lr, avg, s.model.flat);
  finish_round(s, rec);
  return rec;
}

/// One unlearning round: the target trains with the strategy's loss, the
/// rest with CE, and the model moves along omega += lr * d.
inline RoundRecord unlearn_round(FlState& s, const DirectionStrategy& strategy,
                                 const UnlearnOptions& opts = {}) {
  if (s.stage != Stage::Unlearn) throw PreconditionError("unlearn_round outside the unlearn stage");
  if (!s.target_id) throw PreconditionError("unlearn_round without a target client");

  RoundRecord rec;
  GradientMatrix remaining(s.model.size());
  for (std::size_t i : s.remaining()) remaining.add(i, train_client(s, i, Loss::CrossEntropy).gradient);

  std::optional<GradVec> g_u;
  try {
    g_u = train_client(s, *s.target_id, strategy.target_loss).gradient;
  } catch (const NumericalError&) {
    rec.add_flag("nonfinite_gradient");
  }

  DirectionOutcome out;
  if (g_u && norm(g_u->flat) == 0.0) {
    rec.add_flag("zero_target_gradient");
  } else if (g_u) {
    out = strategy.compute({remaining, *g_u});
  }
  for (const auto& f : out.flags) rec.add_flag(f);

  if (out.direction) {
    rec.nc = conflict_count(out.direction->flat, remaining, opts.conflict_tol);
    axpy(s.lr, out.direction->flat, s.model.flat);
    if (!all_finite(s.model.flat)) throw NumericalError("model became non-finite in round " + std::to_string(s.round));
  } else {
    rec.add_flag("skipped");
  }
  finish_round(s, rec);
  return rec;
}

/// Post-training with the target gone. With `project` set, each uploaded
/// gradient that points towards omega^0 (g_i . g_a > 0, g_a = omega - omega^0)
/// is projected onto the normal plane of g_a and rescaled.
inline RoundRecord posttrain_round(FlState& s, bool project = true) {
  if (s.stage != Stage::PostTrain) throw PreconditionError("posttrain_round outside the post-training stage");
  if (s.target_id && !s.target_excluded) throw PreconditionError("target must leave before post-training");
  const auto ids = s.participants();
  if (ids.empty()) throw ConfigError("no participating clients");

  GradVec g_a(s.model.size());
  for (std::size_t k = 0; k < g_a.size(); ++k) g_a.flat[k] = s.model.flat[k] - s.origin.flat[k];

  RoundRecord rec;
  GradientMatrix grads(s.model.size());
  std::vector<double> avg(s.model.size(), 0.0);
  for (std::size_t i : ids) {
    GradVec g = train_client(s, i, Loss::CrossEntropy).gradient;
    grads.add(i, g);
    if (project) {
      ProjectionResult p = project_normal_plane(g, g_a);
      if (p.parallel) rec.add_flag("parallel_residual");
      g = std::move(p.gradient);
    }
    axpy(1.0 / static_cast<double>(ids.size()), g.flat, avg);
  }

  if (norm(avg) == 0.0) {
    rec.add_flag("zero_aggregate");
  } else {
    rec.nc = conflict_count(avg, grads);
    axpy(-s.lr, avg, s.model.flat);
  }
  finish_round(s, rec);
  return rec;
}

}  // namespace fedosd
