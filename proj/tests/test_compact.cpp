#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"

using namespace increg;

namespace {

void prune(Network<float>& net, LayerGroups& lg, std::span<const std::size_t> ids) {
  for (auto id : ids) {
    lg.groups[id].pruned = true;
    zero_group(net, lg.groups[id]);
  }
}

Tensor4<float> random_inputs(Shape3 s, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor4<float> x({n, s.c, s.h, s.w});
  oracle::fill_normal(x.data(), rng);
  return x;
}

double compacted_vs_masked(const Network<float>& net, const std::vector<LayerGroups>& groups,
                           Network<float>* out = nullptr) {
  const auto ref = masked(net, groups);
  const auto small = compact(net, build_plan(net, std::span<const LayerGroups>(groups)));
  const auto x = random_inputs(net.input_shape(), 100, 77);
  const double err = oracle::rel_error(infer(small, x).storage(), infer(ref, x).storage());
  if (out) *out = small;
  return err;
}

std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  v.resize(k);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(Plan, NothingPrunedIsIdentity) {
  const auto net = Network<float>::build(toy_architecture(), 1);
  std::vector<LayerGroups> groups{make_groups(net, 0, GroupKind::column),
                                  make_groups(net, 3, GroupKind::column)};
  const auto plan = build_plan(net, std::span<const LayerGroups>(groups));
  EXPECT_TRUE(plan.identity());
  EXPECT_TRUE(compact(net, plan) == net);
}

TEST(Plan, ColumnModeIsLayerLocal) {
  auto net = Network<float>::build(toy_architecture(), 2);
  std::vector<LayerGroups> groups{make_groups(net, 0, GroupKind::column)};
  prune(net, groups[0], std::vector<std::size_t>{5});
  Network<float> small;
  EXPECT_LT(compacted_vs_masked(net, groups, &small), 1e-5);
  EXPECT_EQ(small.layer(0).weight.cols(), 17u);
  EXPECT_EQ(small.layer(3).weight.cols(), 27u);
  EXPECT_EQ(small.layer(3).weight.rows(), 6u);
}

TEST(Plan, RowPruningPropagatesToNextLayer) {
  auto net = Network<float>::build(toy_architecture(), 3);
  std::vector<LayerGroups> groups{make_groups(net, 0, GroupKind::row)};
  prune(net, groups[0], std::vector<std::size_t>{1});
  const auto plan = build_plan(net, std::span<const LayerGroups>(groups));
  const auto* p3 = plan.find(3);
  ASSERT_NE(p3, nullptr);
  EXPECT_EQ(p3->keep_cols.size(), 18u);
  for (auto c : p3->keep_cols) EXPECT_TRUE(c < 9 || c >= 18) << c;
  Network<float> small;
  EXPECT_LT(compacted_vs_masked(net, groups, &small), 1e-5);
  EXPECT_EQ(small.layer(0).weight.rows(), 2u);
  EXPECT_LT(small.parameter_count(), net.parameter_count());
}

TEST(Plan, RowPruningInLastConvShrinksClassifierInputs) {
  auto net = Network<float>::build(toy_architecture(), 4);
  std::vector<LayerGroups> groups{make_groups(net, 3, GroupKind::row)};
  prune(net, groups[0], std::vector<std::size_t>{0, 4});
  Network<float> small;
  EXPECT_LT(compacted_vs_masked(net, groups, &small), 1e-5);
  EXPECT_EQ(small.layer(6).weight.cols(), 4u * 2 * 2);
}

TEST(Plan, ChannelModeRemovesBlockAndProducer) {
  auto net = Network<float>::build(toy_architecture(), 5);
  std::vector<LayerGroups> groups{make_groups(net, 3, GroupKind::channel)};
  prune(net, groups[0], std::vector<std::size_t>{2});
  Network<float> small;
  EXPECT_LT(compacted_vs_masked(net, groups, &small), 1e-5);
  EXPECT_EQ(small.layer(3).weight.cols(), 18u);
  EXPECT_EQ(small.layer(0).weight.rows(), 2u);
}

TEST(Plan, AllButOneColumn) {
  auto net = Network<float>::build(toy_architecture(), 6);
  std::vector<LayerGroups> groups{make_groups(net, 3, GroupKind::column)};
  std::vector<std::size_t> ids(26);
  std::iota(ids.begin(), ids.end(), 1);
  prune(net, groups[0], ids);
  Network<float> small;
  EXPECT_LT(compacted_vs_masked(net, groups, &small), 1e-5);
  EXPECT_EQ(small.layer(3).weight.cols(), 1u);
}

TEST(Plan, RejectsNonzeroPrunedWeightsAndEmptyLayers) {
  auto net = Network<float>::build(toy_architecture(), 7);
  std::vector<LayerGroups> groups{make_groups(net, 0, GroupKind::column)};
  groups[0].groups[3].pruned = true;  // weights left in place
  EXPECT_THROW(build_plan(net, std::span<const LayerGroups>(groups)), InconsistentState);
  for (auto& g : groups[0].groups) {
    g.pruned = true;
    zero_group(net, g);
  }
  EXPECT_THROW(build_plan(net, std::span<const LayerGroups>(groups)), InconsistentState);
}

TEST(Plan, ConvNetHalfColumnsMatchesMaskedModel) {
  auto net = Network<float>::build(convnet_architecture(), 8);
  std::vector<LayerGroups> groups{make_groups(net, 3, GroupKind::column),
                                  make_groups(net, 6, GroupKind::column)};
  prune(net, groups[0], random_subset(800, 400, 1));
  prune(net, groups[1], random_subset(800, 400, 2));
  Network<float> small;
  EXPECT_LT(compacted_vs_masked(net, groups, &small), 1e-5);
  const auto acc = count_gflops(net, small);
  const std::vector<std::size_t> pruned_convs{3, 6};
  EXPECT_EQ(acc.ratio_over(pruned_convs), 2.0);
  // Kept-set accounting and compacted-shape accounting agree.
  const auto from_plan = count_gflops(net, build_plan(net, std::span<const LayerGroups>(groups)));
  for (std::size_t i = 0; i < acc.layers.size(); ++i)
    EXPECT_EQ(acc.layers[i].pruned, from_plan.layers[i].pruned);
}

TEST(Flops, SingleConvFormula) {
  // N=2 filters, C=1, 3x3 kernel, 6x6 input without padding -> 4x4 output.
  const auto net = Network<float>::build(
      {{1, 6, 6}, {LayerSpec::conv(2, 3), LayerSpec::fully_connected(2), LayerSpec::softmax_xent()}}, 1);
  EXPECT_EQ(layer_flops(net.layer(0)), 576u);
  EXPECT_EQ(layer_flops(net.layer(1)), 2u * 32 * 2);
}

TEST(Flops, ColumnFractionGivesExactRatio) {
  for (std::size_t k = 0; k < 27; ++k) {
    auto net = Network<float>::build(toy_architecture(), 9);
    std::vector<LayerGroups> groups{make_groups(net, 3, GroupKind::column)};
    prune(net, groups[0], random_subset(27, k, k));
    const auto acc = count_gflops(net, build_plan(net, std::span<const LayerGroups>(groups)));
    const double p = static_cast<double>(k) / 27.0;
    // Exact as rationals: base / pruned == 27 / (27 - k).
    EXPECT_EQ(acc.layers[1].base * (27 - k), acc.layers[1].pruned * 27) << k;
    EXPECT_NEAR(acc.layers[1].ratio(), 1.0 / (1.0 - p), 1e-12 * acc.layers[1].ratio()) << k;
  }
}

TEST(Flops, ConvNetMatchesIndependentRecount) {
  const auto net = Network<float>::build(convnet_architecture(), 1);
  const auto acc = count_gflops(net);
  const std::uint64_t expect = oracle::conv_flops(32, 3, 5, 32, 32, 1, 2) +
                               oracle::conv_flops(32, 32, 5, 16, 16, 1, 2) +
                               oracle::conv_flops(64, 32, 5, 8, 8, 1, 2) + 2ull * 64 * 4 * 4 * 10;
  EXPECT_EQ(acc.total_base(), expect);
  EXPECT_EQ(acc.total_pruned(), expect);
  EXPECT_EQ(acc.ratio(), 1.0);
}
