#include <algorithm>
#include <map>
#include <random>

#include "gtest/gtest.h"
#include "splitmix/data.hpp"
#include "splitmix/fed/aggregate.hpp"
#include "splitmix/fed/budget.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/fed/schedule.hpp"
#include "splitmix/fed/splitmix.hpp"
#include "splitmix/fed/tasks.hpp"
#include "fed_fixtures.hpp"
#include "test_util.hpp"

using namespace splitmix;
using namespace splitmix::fed;
using nn::WidthRatio;
using splitmix::testing::federation;
using splitmix::testing::reference_fedavg;

namespace {

std::vector<double> values(const std::vector<WidthRatio>& w) {
  std::vector<double> out;
  for (const auto& x : w) out.push_back(x.value());
  return out;
}

FedConfig small_config(std::size_t rounds) {
  FedConfig cfg;
  cfg.rounds = rounds;
  cfg.local.epochs = 1;
  cfg.local.batch_size = 8;
  cfg.lr.lr = 0.05;
  cfg.eval_every = 0;
  cfg.seed = 3;
  return cfg;
}

nn::ArchSpec small_arch() { return nn::mlp(6, {8}, 3); }

}  // namespace

// ---- budgets ----------------------------------------------------------------

TEST(Budgets, FourExponentialGroups) {
  BudgetConfig cfg;
  EXPECT_EQ(values(assign_budgets(4, cfg, WidthRatio(1, 8), 0)), (std::vector<double>{1, 0.5, 0.25, 0.125}));
  EXPECT_EQ(values(assign_budgets(8, cfg, WidthRatio(1, 8), 0)),
            (std::vector<double>{1, 1, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125}));
}

TEST(Budgets, FormulaReadingHalvesEveryGroup) {
  BudgetConfig cfg;
  cfg.formula_reading = true;
  EXPECT_EQ(raw_budgets(4, cfg, 0), (std::vector<double>{0.5, 0.25, 0.125, 0.0625}));
  // Quantized budgets never fall below one atom.
  EXPECT_EQ(values(assign_budgets(4, cfg, WidthRatio(1, 8), 0)), (std::vector<double>{0.5, 0.25, 0.125, 0.125}));
}

TEST(Budgets, QuantizedToAtomMultiples) {
  BudgetConfig cfg;
  EXPECT_EQ(values(assign_budgets(4, cfg, WidthRatio(1, 4), 0)), (std::vector<double>{1, 0.5, 0.25, 0.25}));
  EXPECT_EQ(quantize_budget(0.7, WidthRatio(1, 4)).value(), 0.5);
  EXPECT_EQ(quantize_budget(1.7, WidthRatio(1, 4)).value(), 1.0);
}

TEST(Budgets, StepIncreaseAndExplicit) {
  BudgetConfig cfg;
  cfg.kind = BudgetKind::step_increase;
  EXPECT_EQ(values(assign_budgets(8, cfg, WidthRatio(1, 4), 0)),
            (std::vector<double>{1, 1, 0.75, 0.75, 0.5, 0.5, 0.25, 0.25}));
  cfg.kind = BudgetKind::explicit_list;
  cfg.widths = {1, 0.5, 0.25, 0.25};
  EXPECT_EQ(values(assign_budgets(6, cfg, WidthRatio(1, 4), 0)), (std::vector<double>{1, 0.5, 0.25, 0.25, 1, 0.5}));
  cfg.kind = BudgetKind::more_sufficient;
  EXPECT_EQ(values(assign_budgets(4, cfg, WidthRatio(1, 8), 0)), (std::vector<double>{1, 1, 0.5, 0.25}));
}

TEST(Budgets, LogNormalMedianBinHoldsMedian) {
  BudgetConfig cfg;
  cfg.kind = BudgetKind::log_normal;
  auto raw = raw_budgets(10000, cfg, 17);
  for (double v : raw) EXPECT_DOUBLE_EQ(std::fmod(v, 0.125), 0.0);
  std::nth_element(raw.begin(), raw.begin() + 5000, raw.end());
  const double lo = raw[5000];
  EXPECT_LE(lo, 0.45);
  EXPECT_GT(lo + 0.125, 0.45);
  for (const auto& w : assign_budgets(1000, cfg, WidthRatio(1, 8), 17)) {
    EXPECT_GE(w.value(), 0.125);
    EXPECT_LE(w.value(), 1.0);
  }
}

// ---- schedules --------------------------------------------------------------

TEST(LrSchedule, Kinds) {
  LrSchedule s;
  s.lr = 0.1;
  EXPECT_EQ(s.at(99), 0.1);
  s.kind = LrKind::step_decay;
  s.milestones = {150, 250};
  EXPECT_DOUBLE_EQ(s.at(149), 0.1);
  EXPECT_DOUBLE_EQ(s.at(150), 0.1 * 0.1);
  EXPECT_DOUBLE_EQ(s.at(399), 0.1 * 0.1 * 0.1);
  s.kind = LrKind::cosine;
  s.total_rounds = 10;
  EXPECT_DOUBLE_EQ(s.at(0), 0.1);
  EXPECT_NEAR(s.at(5), 0.05, 1e-15);
  EXPECT_GT(s.at(9), 0.0);
}

// ---- local training ---------------------------------------------------------

TEST(LocalTrain, ZeroEpochsLeavesParameters) {
  auto clients = federation(1, {1.0}, WidthRatio(1, 1));
  auto m = nn::build_model(small_arch(), {});
  const auto before = nn::flat_params(m);
  LocalTrainConfig cfg;
  cfg.epochs = 0;
  local_train(m, clients[0].train, clients[0].present_classes, cfg, 0.1, 1);
  EXPECT_EQ(nn::flat_params(m), before);
}

TEST(LocalTrain, OneBatchEqualsOneSgdStep) {
  auto clients = federation(1, {1.0}, WidthRatio(1, 1));
  const auto& train = clients[0].train;
  auto a = nn::build_model(small_arch(), {});
  auto b = a;
  LocalTrainConfig cfg;
  cfg.batch_size = train.size();
  cfg.masked_loss = false;
  local_train(a, train, {}, cfg, 0.1, 5);

  // Whole-batch gradient is order-invariant up to summation order; replay the same order.
  Rng rng(5);
  const auto order = data::shuffled_indices(train.size(), rng);
  const auto batch = train.subset(order);
  b.zero_grad();
  nn::ForwardOptions fo;
  auto r = nn::cross_entropy(b.forward(batch.x, fo), batch.y);
  b.backward(r.grad);
  for (auto* p : b.parameters())
    for (std::size_t i = 0; i < p->value.size(); ++i)
      p->value[i] -= 0.1 * (p->grad[i] + 5e-4 * p->value[i]);
  EXPECT_EQ(nn::flat_params(a), nn::flat_params(b));
}

TEST(LocalTrain, ParallelEqualsSequential) {
  auto clients = federation(1, {1.0}, WidthRatio(1, 2));
  auto set = ensemble::build_base_models(nn::mlp(6, {8}, 3), 2, 4);
  LocalTrainConfig cfg;
  cfg.epochs = 2;
  std::vector<nn::Model> par = set.bases, seq = set.bases;
  run_tasks(2, 2, [&](std::size_t i) {
    local_train(par[i], clients[0].train, clients[0].present_classes, cfg, 0.05, 100 + i);
  });
  for (std::size_t i = 0; i < 2; ++i) local_train(seq[i], clients[0].train, clients[0].present_classes, cfg, 0.05, 100 + i);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(nn::flat_params(par[i]), nn::flat_params(seq[i]));
}

TEST(LocalTrain, BudgetViolationIsProtocolError) {
  auto clients = federation(1, {0.25}, WidthRatio(1, 4));
  auto set = ensemble::build_base_models(nn::mlp(6, {8}, 3), 4, 4);
  std::vector<nn::Model*> two{&set.bases[0], &set.bases[1]};
  EXPECT_THROW(local_train_client(two, clients[0], set.atom(), {}, 0.1, {1, 2}), ProtocolError);
  EXPECT_NO_THROW(local_train_client({&set.bases[0]}, clients[0], set.atom(), {}, 0.1, {1}));
}

TEST(LocalTrain, NanLossAborts) {
  auto clients = federation(1, {1.0}, WidthRatio(1, 1));
  auto m = nn::build_model(small_arch(), {});
  m.parameters()[0]->value[0] = std::nan("");
  EXPECT_THROW(local_train(m, clients[0].train, {}, {}, 0.1, 1), NumericError);
}

// ---- aggregation ------------------------------------------------------------

namespace {
nn::Model scalar_model(double v) {
  auto m = nn::build_model(nn::mlp(1, {}, 1), {});
  m.parameters()[0]->value[0] = v;
  m.parameters()[1]->value[0] = -v;
  return m;
}
}  // namespace

TEST(Aggregate, SingleClientIsExact) {
  auto target = scalar_model(0.0);
  AggregationAccumulator acc(1);
  acc.add(0, scalar_model(0.37), 11.0);
  acc.finalize(0, target);
  EXPECT_EQ(target.parameters()[0]->value[0], 0.37);
}

TEST(Aggregate, WeightedMeanOfTwoClients) {
  const double a = 0.3, b = -1.7;
  auto target = scalar_model(0.0);
  AggregationAccumulator acc(1);
  acc.add(0, scalar_model(a), 1.0);
  acc.add(0, scalar_model(b), 3.0);
  acc.finalize(0, target);
  EXPECT_EQ(target.parameters()[0]->value[0], (a + 3.0 * b) / 4.0);
  EXPECT_EQ(acc.weight(0), 4.0);
}

TEST(Aggregate, UncoveredSlotRetained) {
  auto target = scalar_model(0.9);
  AggregationAccumulator acc(2);
  acc.add(1, scalar_model(0.1), 2.0);
  EXPECT_FALSE(acc.finalize(0, target));
  EXPECT_EQ(target.parameters()[0]->value[0], 0.9);
}

TEST(Aggregate, InsideConvexHull) {
  Rng rng(8);
  auto base = nn::build_model(small_arch(), {});
  std::vector<nn::Model> copies(5, base);
  std::uniform_real_distribution<double> u(-1, 1), w(0.5, 20);
  AggregationAccumulator acc(1);
  for (auto& c : copies) {
    for (auto* p : c.parameters())
      for (auto& v : p->value.values()) v = u(rng);
    acc.add(0, c, w(rng));
  }
  acc.finalize(0, base);
  const auto out = nn::flat_params(base);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double lo = 1e9, hi = -1e9;
    for (const auto& c : copies) {
      const double v = nn::flat_params(c)[i];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_GE(out[i], lo - 1e-15);
    EXPECT_LE(out[i], hi + 1e-15);
  }
}

// ---- participation ----------------------------------------------------------

TEST(Participation, AllAndFrequencies) {
  Rng rng(1);
  auto all = select_participants(7, 7, rng);
  EXPECT_EQ(all.size(), 7u);
  std::vector<double> freq(8, 0.0);
  for (int t = 0; t < 16000; ++t) freq[select_participants(8, 1, rng)[0]] += 1.0 / 16000;
  for (double f : freq) EXPECT_NEAR(f, 1.0 / 8, 0.015);
  Rng a(5), b(5);
  for (int t = 0; t < 20; ++t) EXPECT_EQ(select_participants(10, 5, a), select_participants(10, 5, b));
  EXPECT_THROW(select_participants(3, 4, rng), ConfigError);
}

// ---- rounds -----------------------------------------------------------------

TEST(Round, SingleClientSingleBaseIsLocalTraining) {
  auto clients = federation(1, {1.0}, WidthRatio(1, 1));
  auto cfg = small_config(1);
  auto set = ensemble::build_base_models(small_arch(), 1, 2);
  nn::Model reference = set.bases[0];
  SplitMixServer server(set, cfg);
  server.run_round(0, clients);
  local_train(reference, clients[0].train, clients[0].present_classes, cfg.local, cfg.lr.at(0),
              derive_seed(cfg.seed, {0x7a5c, 0, 0, 0}));
  EXPECT_EQ(nn::flat_params(server.bases().bases[0]), nn::flat_params(reference));
}

TEST(Round, AssignmentSizesFollowBudgets) {
  auto clients = federation(4, {1, 0.5, 0.25, 0.25}, WidthRatio(1, 4));
  auto cfg = small_config(1);
  SplitMixServer server(ensemble::build_base_models(small_arch(), 4, 2), cfg);
  const auto rec = server.run_round(0, clients);
  ASSERT_EQ(rec.assignments.size(), 4u);
  EXPECT_EQ(rec.assignments[0].size(), 4u);
  EXPECT_EQ(rec.assignments[1].size(), 2u);
  EXPECT_EQ(rec.assignments[2].size(), 1u);
  EXPECT_EQ(rec.assignments[3].size(), 1u);
  double expected = 0.0, total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) expected += rec.assignments[k].size() * clients[k].train.size();
  for (double c : rec.coverage) total += c;
  EXPECT_EQ(total, expected);
  EXPECT_EQ(rec.uploaded_params, 8u * server.bases().base_params());
}

TEST(Round, UntrainedBaseRetained) {
  // One quarter-budget client per round: three bases see no update.
  auto clients = federation(1, {0.25}, WidthRatio(1, 4));
  auto cfg = small_config(1);
  auto set = ensemble::build_base_models(small_arch(), 4, 2);
  SplitMixServer server(set, cfg);
  const auto rec = server.run_round(0, clients);
  for (std::size_t id = 0; id < 4; ++id) {
    const bool trained = id == rec.assignments[0][0];
    EXPECT_EQ(rec.coverage[id] > 0, trained);
    EXPECT_EQ(nn::flat_params(server.bases().bases[id]) == nn::flat_params(set.bases[id]), !trained);
  }
}

TEST(Round, LocallyTrackedStatsStayOnClients) {
  auto clients = federation(2, {1.0}, WidthRatio(1, 2));
  auto cfg = small_config(1);
  nn::BuildOptions b;
  b.bn_mode = nn::BnMode::locally_tracked;
  auto set = ensemble::build_base_models(small_arch(), 2, 2, b);
  SplitMixServer server(set, cfg);
  server.run_round(0, clients);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(nn::flat_buffers(server.bases().bases[i]), nn::flat_buffers(set.bases[i]));
    nn::Model scratch = server.bases().bases[i];
    server.apply_client_stats(i, 0, scratch);
    EXPECT_NE(nn::flat_buffers(scratch), nn::flat_buffers(set.bases[i]));
  }
}

TEST(Round, TrackedStatsAveraged) {
  auto clients = federation(2, {1.0}, WidthRatio(1, 1));
  auto cfg = small_config(1);
  nn::BuildOptions b;
  b.bn_mode = nn::BnMode::tracked;
  auto set = ensemble::build_base_models(small_arch(), 1, 2, b);
  SplitMixServer server(set, cfg);
  server.run_round(0, clients);
  EXPECT_NE(nn::flat_buffers(server.bases().bases[0]), nn::flat_buffers(set.bases[0]));
}

// ---- whole runs -------------------------------------------------------------


TEST(Run, SingleBaseMatchesReferenceFedAvg) {
  auto clients = federation(5, {1.0}, WidthRatio(1, 1));
  auto cfg = small_config(10);
  nn::BuildOptions b;
  b.bn_mode = nn::BnMode::tracked;
  auto set = ensemble::build_base_models(small_arch(), 1, 2, b);
  const nn::Model expect = reference_fedavg(set.bases[0], clients, cfg);
  ensemble::BaseModelSet trained;
  run_splitmix(set, clients, cfg, {}, {}, {}, &trained);
  EXPECT_EQ(nn::flat_params(trained.bases[0]), nn::flat_params(expect));
  EXPECT_EQ(nn::flat_buffers(trained.bases[0]), nn::flat_buffers(expect));
}

TEST(Run, DeterministicUnderTaskOrderAndThreads) {
  auto clients = federation(6, {1, 0.5, 0.25}, WidthRatio(1, 4));
  auto cfg = small_config(3);
  cfg.eval_every = 1;
  auto set = ensemble::build_base_models(small_arch(), 4, 2);
  const auto a = run_splitmix(set, clients, cfg);
  cfg.threads = 3;
  RunHooks hooks;
  std::mt19937 perm_rng(9);
  hooks.task_order = [&](std::vector<std::size_t>& order) { std::shuffle(order.begin(), order.end(), perm_rng); };
  const auto b = run_splitmix(set, clients, cfg, {}, {}, hooks);
  ASSERT_EQ(a.rounds.size(), b.rounds.size());
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    EXPECT_EQ(a.rounds[t].coverage, b.rounds[t].coverage);
    EXPECT_EQ(a.rounds[t].train_loss, b.rounds[t].train_loss);
    for (std::size_t j = 0; j < a.rounds[t].val.size(); ++j) EXPECT_EQ(a.rounds[t].val[j].acc, b.rounds[t].val[j].acc);
  }
  for (std::size_t j = 0; j < a.final_table.size(); ++j) EXPECT_EQ(a.final_table[j].acc, b.final_table[j].acc);
}

TEST(Run, ZeroRoundsNearChance) {
  auto clients = federation(4, {1.0}, WidthRatio(1, 2), 150);
  auto cfg = small_config(0);
  const auto r = run_splitmix(ensemble::build_base_models(small_arch(), 2, 7), clients, cfg);
  ASSERT_EQ(r.final_table.size(), 2u);
  for (const auto& w : r.final_table) {
    EXPECT_GE(w.acc, 0.0);
    EXPECT_LE(w.acc, 1.0);
  }
  EXPECT_TRUE(r.rounds.empty());
}

TEST(Run, TrainingBeatsChanceAndReportsAccounting) {
  auto clients = federation(4, {1, 0.5}, WidthRatio(1, 2), 80);
  auto cfg = small_config(15);
  auto set = ensemble::build_base_models(small_arch(), 2, 7);
  const auto r = run_splitmix(set, clients, cfg);
  EXPECT_GT(r.final_table.back().acc, 0.7);
  EXPECT_EQ(r.final_table[1].macs, 2 * r.final_table[0].macs);
  EXPECT_EQ(r.final_table[1].params, 2 * set.base_params());
}

TEST(Run, BudgetSafetyUnderFuzzedSchedules) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t M = 1 + rng() % 4, K = 2 + rng() % 5;
    std::vector<double> budgets;
    for (std::size_t k = 0; k < K; ++k) budgets.push_back(std::uniform_real_distribution<double>(0, 1.2)(rng));
    auto clients = federation(K, budgets, WidthRatio(1, static_cast<long>(M)), 12, rng());
    auto cfg = small_config(5);
    cfg.participants = 1 + rng() % K;
    cfg.dropout = 0.2;
    cfg.local.batch_size = 4;
    RunHooks hooks;
    hooks.on_round = [&](const RoundRecord& rec) {
      for (std::size_t i = 0; i < rec.participants.size(); ++i)
        ASSERT_LE(rec.assignments[i].size(), budget_cap(clients[rec.participants[i]].budget, WidthRatio(1, static_cast<long>(M))));
    };
    EXPECT_NO_THROW(run_splitmix(ensemble::build_base_models(nn::mlp(6, {12}, 3), M, rng()), clients, cfg, {}, {}, hooks));
  }
}
