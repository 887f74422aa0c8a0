#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace increg;

namespace {

Architecture gradcheck_arch() {
  return {{2, 7, 7},
          {LayerSpec::conv(3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv(4, 2, 2, 1), LayerSpec::relu(), LayerSpec::fully_connected(5),
           LayerSpec::relu(), LayerSpec::fully_connected(3), LayerSpec::softmax_xent()}};
}

double loss_of(const Network<double>& net, const Tensor4<double>& x, const std::vector<int>& y) {
  return softmax_xent<double>(infer(net, x), y, nullptr);
}

Tensor4<double> random_batch(Shape3 s, std::size_t n, std::mt19937_64& rng) {
  Tensor4<double> x({n, s.c, s.h, s.w});
  oracle::fill_normal(x.data(), rng);
  return x;
}

}  // namespace

TEST(Forward, ConvLayerMatchesDirectConvolution) {
  std::mt19937_64 rng(1);
  Architecture a{{3, 6, 5}, {LayerSpec::conv(4, 3, 2, 1), LayerSpec::relu(), LayerSpec::fully_connected(2),
                             LayerSpec::softmax_xent()}};
  auto net = Network<double>::build(a, 9);
  auto& conv = net.layer(0);
  oracle::fill_normal<double>(conv.bias, rng);
  const auto x = random_batch(a.input, 3, rng);
  Matrix<double> scratch;
  const auto y = detail::conv_forward(conv, x, scratch);
  Tensor4<double> k({4, 3, 3, 3}, conv.weight.storage());
  const auto ref = oracle::direct_conv(x, k, conv.bias, 2, 1);
  EXPECT_LT(oracle::rel_error(y.storage(), ref.storage()), 1e-12);
}

TEST(Backward, AnalyticGradientsMatchCentralDifferences) {
  std::mt19937_64 rng(2);
  auto net = Network<double>::build(gradcheck_arch(), 21);
  for (auto& l : net.layers()) oracle::fill_normal<double>(l.bias, rng, 0.1);
  const auto x = random_batch(net.input_shape(), 4, rng);
  const std::vector<int> y{0, 2, 1, 2};
  const auto fwd = forward(net, x);
  const auto g = backward(net, fwd.cache, y);
  const double h = 1e-4;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layer(i).has_params()) continue;
    auto& layer = net.layer(i);
    std::vector<double> numeric, analytic;
    for (std::size_t k = 0; k < layer.weight.size(); ++k) {
      const double w0 = layer.weight.storage()[k];
      layer.weight.storage()[k] = w0 + h;
      const double up = loss_of(net, x, y);
      layer.weight.storage()[k] = w0 - h;
      const double dn = loss_of(net, x, y);
      layer.weight.storage()[k] = w0;
      numeric.push_back((up - dn) / (2 * h));
      analytic.push_back(g.weight[i].storage()[k]);
    }
    for (std::size_t k = 0; k < layer.bias.size(); ++k) {
      const double b0 = layer.bias[k];
      layer.bias[k] = b0 + h;
      const double up = loss_of(net, x, y);
      layer.bias[k] = b0 - h;
      const double dn = loss_of(net, x, y);
      layer.bias[k] = b0;
      numeric.push_back((up - dn) / (2 * h));
      analytic.push_back(g.bias[i][k]);
    }
    EXPECT_LT(oracle::rel_error(analytic, numeric), 1e-5) << net.layer(i).name;
  }
}

TEST(Backward, LossIsMeanCrossEntropy) {
  Matrix<double> logits(2, 3, std::vector<double>{0, 0, 0, 1, 2, 3});
  const std::vector<int> y{1, 2};
  const double expect =
      0.5 * (std::log(3.0) + (std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0));
  EXPECT_NEAR(softmax_xent<double>(logits, y, nullptr), expect, 1e-14);
}

TEST(Backward, RejectsStaleCacheAndBadLabels) {
  std::mt19937_64 rng(3);
  auto net = Network<double>::build(gradcheck_arch(), 1);
  const auto x = random_batch(net.input_shape(), 2, rng);
  const auto fwd = forward(net, x);
  EXPECT_THROW(backward(net, fwd.cache, std::vector<int>{0}), InvalidArgument);
  net.bump_version();
  EXPECT_THROW(backward(net, fwd.cache, std::vector<int>{0, 1}), ContractViolation);
  EXPECT_THROW(forward(net, random_batch({1, 7, 7}, 1, rng)), InvalidArgument);
}

TEST(Sgd, RejectsNegativeGroupFactor) {
  std::mt19937_64 rng(4);
  auto net = Network<float>::build(toy_architecture(), 2);
  auto groups = std::vector<LayerGroups>{make_groups(net, 0, GroupKind::column)};
  groups[0].groups[3].lambda = -0.1;
  Tensor4<float> x({2, 2, 8, 8});
  oracle::fill_normal(x.data(), rng);
  const auto fwd = forward(net, x);
  const auto g = backward(net, fwd.cache, std::vector<int>{0, 1});
  EXPECT_THROW(sgd_step(net, g, TrainConfig{}, 0.01, groups), ContractViolation);
}

TEST(Sgd, UniformGroupFactorEqualsPlainDecayBitwise) {
  // λ_g ≡ c on every conv column must reproduce plain decay wd + c on the grouped
  // weights. The reference is a hand-written momentum step.
  const double wd = 0.004, c = 0.0375;
  TrainConfig cfg;
  cfg.weight_decay = wd;
  auto a = Network<float>::build(toy_architecture(), 5);
  auto b = a;
  std::vector<LayerGroups> groups;
  for (std::size_t id : {0u, 3u}) {
    groups.push_back(make_groups(a, id, GroupKind::column));
    for (auto& gs : groups.back().groups) gs.lambda = c;
  }
  const auto data = synthetic_blobs({});
  BatchSampler sampler(data.train.size(), cfg.batch_size, 7);
  for (std::size_t it = 0; it < 50; ++it) {
    const auto idx = sampler.next();
    const auto x = gather_images<float>(data.train, idx);
    const auto y = gather_labels(data.train, idx);
    const auto ga = backward(a, forward(a, x).cache, y);
    sgd_step(a, ga, cfg, cfg.base_lr, groups);

    const auto gb = backward(b, forward(b, x).cache, y);
    const float mu = 0.9f, lr = static_cast<float>(cfg.base_lr);
    for (std::size_t i = 0; i < b.layers().size(); ++i) {
      auto& l = b.layer(i);
      if (!l.has_params()) continue;
      const float coef = static_cast<float>(l.spec.kind == LayerKind::conv ? wd + c : wd);
      for (std::size_t k = 0; k < l.weight.size(); ++k) {
        auto& v = l.weight_momentum.storage()[k];
        auto& w = l.weight.storage()[k];
        v = mu * v + lr * (gb.weight[i].storage()[k] + coef * w);
        w -= v;
      }
      for (std::size_t k = 0; k < l.bias.size(); ++k) {
        auto& v = l.bias_momentum[k];
        v = mu * v + lr * (gb.bias[i][k] + static_cast<float>(wd) * l.bias[k]);
        l.bias[k] -= v;
      }
    }
    b.bump_version();
  }
  EXPECT_TRUE(a == b);
}

TEST(Sgd, PrunedGroupsStayZero) {
  auto net = Network<float>::build(toy_architecture(), 6);
  std::vector<LayerGroups> groups{make_groups(net, 3, GroupKind::row)};
  groups[0].groups[2].pruned = true;
  zero_group(net, groups[0].groups[2]);
  TrainConfig cfg;
  cfg.max_iters = 30;
  train(net, synthetic_blobs({}).train, cfg, groups);
  const auto& l = net.layer(3);
  for (std::size_t j = 0; j < l.weight.cols(); ++j) {
    EXPECT_EQ(l.weight(2, j), 0.0f);
    EXPECT_EQ(l.weight_momentum(2, j), 0.0f);
  }
  EXPECT_EQ(l.bias[2], 0.0f);
  EXPECT_NE(l.weight(1, 0), 0.0f);
}

TEST(Training, FixedSeedIsBitwiseReproducible) {
  const auto data = synthetic_blobs({});
  TrainConfig cfg;
  cfg.max_iters = 120;
  auto a = Network<float>::build(toy_architecture(), 11);
  auto b = Network<float>::build(toy_architecture(), 11);
  const auto la = train(a, data.train, cfg, {}, &data.val);
  const auto lb = train(b, data.train, cfg, {}, &data.val);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].train_loss, lb[i].train_loss);
}

TEST(Training, ToyNetLearnsSeparableBlobs) {
  BlobSpec spec;
  spec.noise = 1.0;
  const auto data = synthetic_blobs(spec);
  TrainConfig cfg;
  cfg.weight_decay = 0.01;
  cfg.max_iters = 2000;
  auto net = Network<float>::build(toy_architecture(), 1);
  train(net, data.train, cfg);
  EXPECT_GE(evaluate(net, data.train).accuracy, 0.95);
}

TEST(Training, StepPolicyAndValidation) {
  TrainConfig cfg;
  cfg.lr_policy = LrPolicy::step;
  cfg.lr_every = 100;
  cfg.lr_factor = 0.1;
  EXPECT_DOUBLE_EQ(cfg.lr_at(99), 0.01);
  EXPECT_DOUBLE_EQ(cfg.lr_at(100), 0.001);
  cfg.lr_every = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  TrainConfig bad;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Network, CastRoundTripAndParameterCount) {
  const auto net = Network<float>::build(toy_architecture(), 3);
  EXPECT_TRUE(net.cast<double>().cast<float>() == net);
  // conv1 3x18+3, conv2 6x27+6, fc 4x(6*2*2)+4
  EXPECT_EQ(net.parameter_count(), 3u * 18 + 3 + 6 * 27 + 6 + 4 * 24 + 4);
}
