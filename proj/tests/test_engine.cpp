#include <gtest/gtest.h>

#include <cmath>

#include "fedosd/baselines.hpp"
#include "fedosd/experiment.hpp"
#include "oracles.hpp"

using namespace fedosd;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.blobs = {4, 30, 16, 0.3};
  c.partition = {PartitionScheme::Pathological, 50, 4};
  c.trigger.label_shift = 1;
  c.hidden = {8};
  c.schedule = {20, 8, 16, 0.5, 0.999};
  return c;
}

ClientDataset client_from(const Batch& b, std::size_t id) {
  ClientDataset c;
  c.client_id = id;
  c.train = b;
  c.test = b;
  c.poisoned_mask.assign(b.size(), false);
  return c;
}

FlState toy_state(std::vector<Batch> data, std::uint64_t seed = 0) {
  FlState s;
  Rng rng(seed);
  s.model = init_model(mlp_shapes(data[0].dim(), std::vector<std::size_t>{4}, 3), rng);
  s.origin = s.model;
  s.lr = 0.3;
  s.lr_decay = 0.99;
  for (std::size_t i = 0; i < data.size(); ++i) s.clients.push_back(client_from(data[i], i));
  return s;
}

// A direction strategy that always returns a fixed vector.
DirectionStrategy fixed_strategy(GradVec d) {
  DirectionStrategy s;
  s.kind = DirectionKind::NegGradUce;
  s.compute = [d](const DirectionInputs&) { return DirectionOutcome{d, {}}; };
  return s;
}

}  // namespace

TEST(Pretrain, SingleParticipantIsPlainSgd) {
  Rng rng(1);
  FlState s = toy_state({oracle::random_batch(rng, 10, 5, 3), oracle::random_batch(rng, 10, 5, 3)});
  s.target_id = 0;
  s.target_excluded = true;  // only client 1 trains
  ModelParams w = s.model;
  double lr = s.lr;
  for (int r = 0; r < 5; ++r) {
    const RoundRecord rec = pretrain_round(s);
    EXPECT_EQ(rec.round, static_cast<std::size_t>(r));
    EXPECT_DOUBLE_EQ(rec.lr, lr);
    axpy(-lr, backward(w, s.clients[1].train, Loss::CrossEntropy).flat, w.flat);
    lr *= 0.99;
  }
  for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(s.model.flat[k], w.flat[k], 1e-12);
}

TEST(Pretrain, IdenticalClientsEqualOneClient) {
  Rng rng(2);
  const Batch b = oracle::random_batch(rng, 10, 5, 3);
  FlState two = toy_state({b, b});
  FlState one = toy_state({b, oracle::random_batch(rng, 3, 5, 3)});
  one.target_id = 1;
  one.target_excluded = true;
  for (int r = 0; r < 4; ++r) {
    pretrain_round(two);
    pretrain_round(one);
  }
  for (std::size_t k = 0; k < one.model.size(); ++k) EXPECT_NEAR(two.model.flat[k], one.model.flat[k], 1e-12);
}

TEST(Pretrain, FedAvgStepIsMeanOfClientGradients) {
  Rng rng(3);
  FlState s = toy_state({oracle::random_batch(rng, 6, 5, 3), oracle::random_batch(rng, 9, 5, 3),
                         oracle::random_batch(rng, 4, 5, 3)});
  const ModelParams before = s.model;
  pretrain_round(s);
  std::vector<double> avg(before.size(), 0.0);
  for (const auto& c : s.clients) axpy(1.0 / 3.0, backward(before, c.train, Loss::CrossEntropy).flat, avg);
  for (std::size_t k = 0; k < avg.size(); ++k) EXPECT_NEAR(s.model.flat[k], before.flat[k] - 0.3 * avg[k], 1e-12);
}

TEST(Pretrain, BlobRunReachesHighTrainAccuracy) {
  ExperimentConfig c = small_config();
  c.blobs = {4, 100, 64, 0.3};
  c.hidden = {32};
  FlState s = build_initial_state(c, 0);
  s.target_id.reset();
  s.trigger_test = Batch{};
  // Clean data only: rebuild without the poisoned target.
  Rng prng(stream_seed(0, Stream::Partition));
  Rng drng(stream_seed(0, Stream::Data));
  s.clients = partition(generate_blobs(c.blobs, drng), c.partition, prng);
  for (int r = 0; r < 300; ++r) pretrain_round(s);
  std::size_t hit = 0, total = 0;
  for (const auto& cl : s.clients) {
    hit += static_cast<std::size_t>(std::llround(accuracy(s.model, cl.train) * cl.train.size()));
    total += cl.train.size();
  }
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(total), 0.9);
}

TEST(Unlearn, DisjointCoordinatesStepAlongScaledNegativeGradient) {
  // Client 0 and client 1 use disjoint input coordinates, so with a
  // single-layer model their weight gradients touch disjoint rows. Only the
  // biases are shared.
  Batch a, b;
  a.features = Matrix(4, 4);
  b.features = Matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    a.features(i, i % 2) = 1.0 + i;
    b.features(i, 2 + i % 2) = 1.0 + i;
  }
  a.labels = {0, 1, 2, 0};
  b.labels = {1, 2, 0, 1};
  FlState s;
  s.model = ModelParams::zeros(mlp_shapes(4, {}, 3));
  for (std::size_t k = 0; k < 12; ++k) s.model.flat[k] = 0.1 * static_cast<double>(k % 5);
  s.origin = s.model;
  s.lr = 0.2;
  s.lr_decay = 1.0;
  s.clients = {client_from(a, 0), client_from(b, 1)};
  s.target_id = 0;
  s.stage = Stage::Unlearn;
  const ModelParams before = s.model;
  const GradVec gu = backward(before, a, Loss::Unlearning);
  const GradVec g1 = backward(before, b, Loss::CrossEntropy);
  GradientMatrix G(before.size());
  G.add(1, g1);
  const auto d = osd_direction(G, gu);
  ASSERT_TRUE(d);
  const RoundRecord rec = unlearn_round(s, make_strategy(DirectionKind::FedOsd, {}));
  EXPECT_EQ(rec.nc, 0u);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(s.model.flat[k], before.flat[k] + 0.2 * d->flat[k], 1e-12);
  // On rows 0-1 of W the projection is the identity, leaving -lr * g_u rescaled.
  const double scale_factor = norm(gu.flat) / norm(NullSpaceProjector(G).apply(gu.flat));
  for (std::size_t k = 0; k < 6; ++k)
    EXPECT_NEAR(s.model.flat[k], before.flat[k] - 0.2 * scale_factor * gu.flat[k], 1e-12);
}

TEST(Unlearn, FigureOneGeometryAvoidsConflicts) {
  // Two remaining gradients g1, g2 in the plane and a target gradient whose
  // negation conflicts with g1. A third coordinate leaves room for a null space.
  GradientMatrix G(3);
  G.add(1, std::vector<double>{1.0, 0.2, 0.0});
  G.add(2, std::vector<double>{0.3, 1.0, 0.0});
  const GradVec gu(std::vector<double>{0.8, -0.5, 0.6});
  std::vector<double> neg(gu.flat);
  scale(neg, -1.0);
  EXPECT_GT(conflict_count(neg, G), 0u);
  const auto d = osd_direction(G, gu);
  ASSERT_TRUE(d);
  EXPECT_GE(dot(d->flat, G.row(0)), -1e-12);
  EXPECT_GE(dot(d->flat, G.row(1)), -1e-12);
  EXPECT_EQ(conflict_count(d->flat, G), 0u);
  EXPECT_NEAR(d->flat[2], -norm(gu.flat), 1e-12);
}

TEST(Unlearn, FlagsAndSkips) {
  Rng rng(4);
  FlState s = toy_state({oracle::random_batch(rng, 5, 4, 3), oracle::random_batch(rng, 5, 4, 3)});
  s.target_id = 0;
  s.stage = Stage::Unlearn;
  DirectionStrategy none;
  none.compute = [](const DirectionInputs&) { return DirectionOutcome{std::nullopt, {"degenerate"}}; };
  const ModelParams before = s.model;
  const RoundRecord rec = unlearn_round(s, none);
  EXPECT_TRUE(rec.has_flag("degenerate"));
  EXPECT_TRUE(rec.has_flag("skipped"));
  EXPECT_EQ(s.model, before);
  EXPECT_EQ(s.round, 1u);
  EXPECT_THROW(posttrain_round(s), PreconditionError);
}

TEST(Unlearn, StrategiesShareRoundPlumbing) {
  // Injecting FedOSD's direction into an M2-labelled strategy reproduces the
  // FedOSD trajectory exactly.
  const ExperimentConfig c = small_config();
  FlState a = build_initial_state(c, 3);
  for (int r = 0; r < 10; ++r) pretrain_round(a);
  a.origin = a.model;
  a.stage = Stage::Unlearn;
  FlState b = a;
  const DirectionStrategy osd = make_strategy(DirectionKind::FedOsd, {});
  DirectionStrategy injected = make_strategy(DirectionKind::NegGradUce, {});
  injected.compute = osd.compute;
  for (int r = 0; r < 5; ++r) {
    const RoundRecord ra = unlearn_round(a, osd);
    const RoundRecord rb = unlearn_round(b, injected);
    EXPECT_EQ(ra, rb);
  }
  EXPECT_EQ(a.model, b.model);
}

TEST(Posttrain, AtOriginEqualsPlainStep) {
  Rng rng(5);
  FlState s = toy_state({oracle::random_batch(rng, 5, 4, 3), oracle::random_batch(rng, 6, 4, 3),
                         oracle::random_batch(rng, 7, 4, 3)});
  s.target_id = 0;
  s.target_excluded = true;
  s.stage = Stage::PostTrain;
  FlState t = s;
  posttrain_round(s, true);
  plain_posttrain_round(t);
  EXPECT_EQ(s.model, t.model);
}

TEST(Posttrain, NoPositiveDotsEqualsPlainStep) {
  Rng rng(6);
  FlState s = toy_state({oracle::random_batch(rng, 5, 4, 3), oracle::random_batch(rng, 6, 4, 3),
                         oracle::random_batch(rng, 7, 4, 3)});
  s.target_id = 0;
  s.target_excluded = true;
  s.stage = Stage::PostTrain;
  // omega^0 = omega + avg, so g_a = -avg and g_i . g_a = -g_i . avg.
  std::vector<double> avg(s.model.size(), 0.0);
  for (std::size_t i : {1, 2}) axpy(0.5, backward(s.model, s.clients[i].train, Loss::CrossEntropy).flat, avg);
  s.origin = s.model;
  axpy(1.0, avg, s.origin.flat);
  bool all_nonpositive = true;
  for (std::size_t i : {1, 2}) {
    const auto g = backward(s.model, s.clients[i].train, Loss::CrossEntropy);
    all_nonpositive = all_nonpositive && dot(g.flat, avg) >= 0.0;
  }
  ASSERT_TRUE(all_nonpositive);
  FlState t = s;
  posttrain_round(s, true);
  plain_posttrain_round(t);
  EXPECT_EQ(s.model, t.model);
}

TEST(Posttrain, ProjectedStepDoesNotRevertToFirstOrder) {
  ExperimentConfig c = small_config();
  FlState s = build_initial_state(c, 1);
  for (int r = 0; r < 15; ++r) pretrain_round(s);
  s.origin = s.model;
  s.stage = Stage::Unlearn;
  const auto strat = make_strategy(DirectionKind::FedOsd, {});
  for (int r = 0; r < 5; ++r) unlearn_round(s, strat);
  s.stage = Stage::PostTrain;
  s.target_excluded = true;
  s.lr = 1e-3;
  int projected_rounds = 0;
  for (int r = 0; r < 5; ++r) {
    const double before = dist_origin(s.model, s.origin);
    const RoundRecord rec = posttrain_round(s, true);
    EXPECT_GE(rec.dist_origin, before - 1e-6);
    projected_rounds += rec.dist_origin != before;
  }
  EXPECT_GT(projected_rounds, 0);
}

TEST(Experiment, ZeroUnlearnRoundsLeavesOrigin) {
  ExperimentConfig c = small_config();
  c.schedule.unlearn_rounds = 0;
  c.schedule.total_rounds = 4;
  const ExperimentResult r = run_experiment(c, Algorithm::FedOsd, 0);
  EXPECT_EQ(r.unlearned, r.origin);
  EXPECT_EQ(r.unlearn_status, UnlearnStatus::NotRun);
  EXPECT_EQ(r.records.size(), 24u);
}

TEST(Experiment, DeterministicAndStagesOrdered) {
  const ExperimentConfig c = small_config();
  const ExperimentResult a = run_experiment(c, Algorithm::FedOsd, 5);
  const ExperimentResult b = run_experiment(c, Algorithm::FedOsd, 5);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.final_model, b.final_model);
  for (std::size_t i = 1; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].round, a.records[i - 1].round + 1);
    EXPECT_GE(static_cast<int>(a.records[i].stage), static_cast<int>(a.records[i - 1].stage));
  }
  EXPECT_NE(run_experiment(c, Algorithm::FedOsd, 6).records, a.records);
}

TEST(Experiment, EarlyStopEndsUnlearning) {
  ExperimentConfig c = small_config();
  c.unlearn.early_stop_asr = 1.0;  // always satisfied
  c.unlearn.early_stop_patience = 2;
  const ExperimentResult r = run_experiment(c, Algorithm::FedOsd, 0);
  EXPECT_EQ(r.unlearn_status, UnlearnStatus::EarlyStopped);
  EXPECT_EQ(r.unlearn_rounds_run, 2);
  std::size_t unlearn_rows = 0;
  for (const auto& rec : r.records) unlearn_rows += rec.stage == Stage::Unlearn;
  EXPECT_EQ(unlearn_rows, 2u);
  EXPECT_TRUE(r.records[21].has_flag("early_stop"));
}

TEST(Experiment, TooManySkipsEndsUnlearning) {
  FlState s = build_initial_state(small_config(), 0);
  s.stage = Stage::Unlearn;
  DirectionStrategy none;
  none.compute = [](const DirectionInputs&) { return DirectionOutcome{}; };
  UnlearnOptions opts;
  opts.max_consecutive_skips = 3;
  std::vector<RoundRecord> recs;
  int n = 0;
  EXPECT_EQ(run_unlearning(s, none, 10, opts, recs, &n), UnlearnStatus::TooManySkips);
  EXPECT_EQ(n, 3);
  EXPECT_TRUE(recs.back().has_flag("too_many_skips"));
}

TEST(Experiment, ErrorsCarryStageContext) {
  Rng rng(0);
  FlState s = toy_state({oracle::random_batch(rng, 4, 4, 3), oracle::random_batch(rng, 4, 4, 3)});
  s.target_id = 0;
  s.stage = Stage::Unlearn;
  s.lr = 10.0;
  GradVec huge(s.model.size(), 1e308);  // lr * d overflows
  EXPECT_THROW(unlearn_round(s, fixed_strategy(huge)), NumericalError);
  const StageError e(NumericalError("boom"), Stage::Unlearn, 7);
  EXPECT_EQ(std::string(e.what()), "unlearn round 7: boom");
  EXPECT_EQ(e.exit_code(), 3);
}

TEST(Retrain, TwoClientsIsPlainSgdOnTheOther) {
  Rng rng(7);
  FlState s = toy_state({oracle::random_batch(rng, 6, 4, 3), oracle::random_batch(rng, 8, 4, 3)});
  s.target_id = 0;
  const ModelParams init = s.model;
  const RetrainResult r = retrain(s, init, {6, 0, 0, 0.3, 0.99});
  ModelParams w = init;
  double lr = 0.3;
  for (int k = 0; k < 6; ++k, lr *= 0.99) axpy(-lr, backward(w, s.clients[1].train, Loss::CrossEntropy).flat, w.flat);
  for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(r.model.flat[k], w.flat[k], 1e-12);
  EXPECT_EQ(r.records.size(), 6u);
  EXPECT_EQ(retrain(s, init, {6, 0, 0, 0.3, 0.99}).model, r.model);
}

TEST(Retrain, ExperimentPathUsesSameInitAndExcludesTarget) {
  const ExperimentConfig c = small_config();
  const ExperimentResult r = run_experiment(c, Algorithm::Retrain, 0);
  EXPECT_EQ(r.records.size(), static_cast<std::size_t>(c.schedule.pretrain_rounds));
  for (const auto& rec : r.records) EXPECT_EQ(rec.stage, Stage::Pretrain);
  EXPECT_TRUE(r.origin.flat.empty());
}
