#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace increg;

TEST(Targets, RoundHalfUp) {
  EXPECT_EQ(target_count(0.5, 27), 14u);
  EXPECT_EQ(target_count(0.5, 18), 9u);
  EXPECT_EQ(target_count(0.78, 27), 21u);
  EXPECT_EQ(target_count(0.7, 10), 7u);
  EXPECT_EQ(target_count(0.25, 10), 3u);  // 2.5 rounds up
  EXPECT_EQ(target_count(0.0, 10), 0u);
}

TEST(DeltaLambda, WorkedExamples) {
  // N_g = 10, R = 0.5, A = 1: RN = 5, N_g(1-R)-1 = 4.
  EXPECT_EQ(delta_lambda(0, 0.5, 10, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(delta_lambda(2, 0.5, 10, 1.0), 0.6);
  EXPECT_EQ(delta_lambda(5, 0.5, 10, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(delta_lambda(7, 0.5, 10, 1.0), -0.5);
  EXPECT_EQ(delta_lambda(9, 0.5, 10, 1.0), -1.0);
  EXPECT_THROW(delta_lambda(10, 0.5, 10, 1.0), InvalidArgument);
  EXPECT_THROW(delta_lambda(0, 0.9, 10, 1.0), ConfigError);  // N_g(1-R)-1 = 0
}

TEST(Schedule, ValidationRejectsDegenerateConfigurations) {
  PruneSchedule s;
  s.target_ratio = 0.9;
  EXPECT_THROW(validate_schedule(s, 10), ConfigError);
  s.target_ratio = 0.8;
  EXPECT_NO_THROW(validate_schedule(s, 10));
  s.target_ratio = 1.0;
  EXPECT_THROW(validate_schedule(s, 10), ConfigError);
  s.target_ratio = 0.5;
  s.speed = 0.0;
  EXPECT_THROW(validate_schedule(s, 10), ConfigError);
  s.speed = 0.001;
  s.epsilon = 0.0;
  EXPECT_THROW(validate_schedule(s, 10), ConfigError);
  s.epsilon = 1e-5;
  s.update_interval = 0;
  EXPECT_THROW(validate_schedule(s, 10), ConfigError);
}

TEST(Ranking, MatchesPairwiseOracleAndIsAPermutation) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> coarse(0, 4);  // forces ties
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    std::vector<GroupState> gs(n);
    std::vector<double> l1(n);
    for (std::size_t i = 0; i < n; ++i) {
      gs[i].group_id = i;
      gs[i].l1 = l1[i] = coarse(rng) * 0.25;
    }
    const auto r = rank_groups(gs);
    EXPECT_EQ(r, oracle::pairwise_rank(l1));
    std::vector<std::size_t> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(sorted[i], i);
  }
}

TEST(Ranking, AverageRankAccumulatesOverTheRun) {
  std::vector<GroupState> gs(3);
  for (std::size_t i = 0; i < 3; ++i) gs[i].group_id = i;
  update_avg_rank(gs[0], 0);
  update_avg_rank(gs[0], 2);
  update_avg_rank(gs[1], 1);
  update_avg_rank(gs[1], 1);
  update_avg_rank(gs[2], 2);
  update_avg_rank(gs[2], 0);
  EXPECT_DOUBLE_EQ(gs[0].avg_rank(), 1.0);
  // All averages tie at 1: final ranks fall back to index order.
  EXPECT_EQ(final_rank(gs), (std::vector<std::size_t>{0, 1, 2}));
  update_avg_rank(gs[0], 2);
  EXPECT_EQ(final_rank(gs), (std::vector<std::size_t>{2, 0, 1}));
  std::vector<GroupState> unranked(2);
  EXPECT_THROW(final_rank(unranked), ContractViolation);
}

TEST(UpdateLambda, ClampsAtZeroAndFreezesPruned) {
  GroupState g;
  g.lambda = 0.05;
  update_lambda(g, -0.1);
  EXPECT_EQ(g.lambda, 0.0);
  update_lambda(g, 0.3);
  EXPECT_DOUBLE_EQ(g.lambda, 0.3);
  g.pruned = true;
  auto prev = set_log_sink([](LogLevel, const std::string&) {});
  update_lambda(g, 1.0);
  set_log_sink(prev);
  EXPECT_DOUBLE_EQ(g.lambda, 0.3);
}

TEST(PruneConverged, ExactlyTheGroupsBelowEpsilon) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 3e-5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GroupState> gs(20);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      gs[i].group_id = i;
      gs[i].l1 = u(rng);
      gs[i].pruned = rng() % 5 == 0;
    }
    const auto expect = oracle::below_eps(gs, 1e-5);
    const auto got = prune_converged(gs, 1e-5);
    EXPECT_EQ(got, expect);
    for (auto id : got) EXPECT_TRUE(gs[id].pruned);
  }
  std::vector<GroupState> two(2);
  two[0].l1 = 0.0;
  two[1].group_id = 1;
  two[1].l1 = 2e-5;
  EXPECT_EQ(prune_converged(two, 1e-5), (std::vector<std::size_t>{0}));
  EXPECT_FALSE(two[1].pruned);
  EXPECT_THROW(prune_converged(two, 0.0), InvalidArgument);
}

TEST(PruneConverged, LimitKeepsTheSmallestNorms) {
  std::vector<GroupState> gs(4);
  const double l1[] = {3e-6, 1e-6, 9e-6, 2e-6};
  for (std::size_t i = 0; i < 4; ++i) {
    gs[i].group_id = i;
    gs[i].l1 = l1[i];
  }
  EXPECT_EQ(prune_converged(gs, 1e-5, 2), (std::vector<std::size_t>{1, 3}));
}

TEST(PruneConverged, ZeroesWeightsAndMomentum) {
  auto net = Network<float>::build(toy_architecture(), 1);
  auto lg = make_groups(net, 0, GroupKind::column);
  for (std::size_t f = 0; f < 3; ++f) {
    net.layer(0).weight(f, 4) = 1e-7f;
    net.layer(0).weight_momentum(f, 4) = 0.5f;
  }
  refresh_l1(net, lg);
  const auto ids = prune_converged(net, lg, 1e-5);
  ASSERT_EQ(ids, (std::vector<std::size_t>{4}));
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_EQ(net.layer(0).weight(f, 4), 0.0f);
    EXPECT_EQ(net.layer(0).weight_momentum(f, 4), 0.0f);
  }
}

TEST(Groups, PartitionTheLayer) {
  const auto net = Network<float>::build(toy_architecture(), 1);
  for (auto kind : {GroupKind::row, GroupKind::column, GroupKind::channel}) {
    const auto lg = make_groups(net, 3, kind);
    std::vector<int> hits(net.layer(3).weight.size(), 0);
    for (const auto& g : lg.groups)
      for (auto m : g.members) ++hits[m];
    for (int h : hits) EXPECT_EQ(h, 1) << to_string(kind);
  }
  EXPECT_EQ(make_groups(net, 3, GroupKind::row).groups.size(), 6u);
  EXPECT_EQ(make_groups(net, 3, GroupKind::column).groups.size(), 27u);
  EXPECT_EQ(make_groups(net, 3, GroupKind::channel).groups.size(), 3u);
  EXPECT_THROW(make_groups(net, 1, GroupKind::row), InvalidArgument);
  EXPECT_THROW(parse_group_kind("diagonal"), ConfigError);
}

namespace {

TrainConfig toy_cfg(std::size_t iters) {
  TrainConfig c;
  c.weight_decay = 0.01;
  c.max_iters = iters;
  return c;
}

}  // namespace

TEST(RunPruning, ZeroRatioEqualsPlainTrainingBitwise) {
  const auto data = synthetic_blobs({});
  const auto start = Network<float>::build(toy_architecture(), 4);
  std::vector<PruneSchedule> sched(2);
  sched[0].layer_id = 0;
  sched[1].layer_id = 3;
  for (auto& s : sched) s.target_ratio = 0.0;
  const auto out = run_pruning(start, data.train, toy_cfg(10), sched, toy_cfg(200));
  auto plain = start;
  train(plain, data.train, toy_cfg(200));
  EXPECT_TRUE(out.net == plain);
  EXPECT_EQ(out.report.pruning_iters, 0u);
}

TEST(RunPruning, RejectsBadSchedules) {
  const auto data = synthetic_blobs({});
  const auto net = Network<float>::build(convnet_architecture(4, {3, 32, 32}), 1);
  std::vector<PruneSchedule> s(1);
  s[0].layer_id = 0;  // exempt conv1
  s[0].target_ratio = 0.5;
  EXPECT_THROW(IncRegPruner<float>(net, s), ConfigError);
  s[0].layer_id = 1;  // relu
  EXPECT_THROW(IncRegPruner<float>(net, s), ConfigError);
  s[0].layer_id = 3;
  s.push_back(s[0]);
  EXPECT_THROW(IncRegPruner<float>(net, s), ConfigError);
}

TEST(RunPruning, NonConvergenceCarriesPartialReport) {
  const auto data = synthetic_blobs({});
  auto net = Network<float>::build(toy_architecture(), 2);
  std::vector<PruneSchedule> s(1);
  s[0].layer_id = 3;
  s[0].target_ratio = 0.5;
  s[0].epsilon = 1e-9;
  try {
    run_pruning(net, data.train, toy_cfg(50), s, toy_cfg(0));
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_FALSE(e.report.converged);
    EXPECT_EQ(e.report.pruning_iters, 50u);
    EXPECT_EQ(e.report.rows.size(), 5u * 27u);  // updates at 0, 10, 20, 30, 40
    ASSERT_EQ(e.report.layers.size(), 1u);
    EXPECT_EQ(e.report.layers[0].target, 14u);
  }
}

TEST(RunPruning, UniformImportancePrunesLowestIndices) {
  // All column norms equal and no data gradient on conv1 (zero input): ties resolve
  // by index so exactly the first round(R·N_g) columns go.
  Dataset zeros;
  zeros.classes = 4;
  zeros.images = Tensor4<float>({64, 2, 8, 8});
  for (int i = 0; i < 64; ++i) zeros.labels.push_back(i % 4);
  auto net = Network<float>::build(toy_architecture(), 3);
  for (auto& w : net.layer(0).weight.storage()) w = 0.25f;
  std::vector<PruneSchedule> s(1);
  s[0].layer_id = 0;
  s[0].target_ratio = 0.5;
  s[0].speed = 0.5;
  s[0].update_interval = 1;
  s[0].epsilon = 1e-5;
  auto cfg = toy_cfg(20000);
  cfg.weight_decay = 0.0;
  const auto out = run_pruning(net, zeros, cfg, s, toy_cfg(0));
  const auto& gs = out.groups[0].groups;
  for (std::size_t j = 0; j < gs.size(); ++j) EXPECT_EQ(gs[j].pruned, j < 9) << j;
}
