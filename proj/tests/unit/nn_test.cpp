#include <cmath>
#include <numeric>
#include <sstream>

#include "gtest/gtest.h"
#include "splitmix/nn.hpp"
#include "test_util.hpp"

using namespace splitmix;
using namespace splitmix::nn;
using splitmix::testing::grad_check;
using splitmix::testing::random_labels;
using splitmix::testing::random_tensor;

namespace {

ForwardOptions train_opts(BnRoute route = BnRoute::clean, double lambda = 0.0) {
  ForwardOptions o;
  o.phase = Phase::train;
  o.route = route;
  o.lambda = lambda;
  o.update_stats = false;
  return o;
}

ForwardOptions eval_opts(BnRoute route = BnRoute::clean, double lambda = 0.0) {
  ForwardOptions o = train_opts(route, lambda);
  o.phase = Phase::eval;
  return o;
}

Model single_dense(std::size_t in, std::size_t out, bool bias = true) {
  ArchSpec a{"dense", {in}, out, {dense_spec(out, bias)}};
  BuildOptions o;
  return build_model(a, o);
}

// Runs forward + CE + backward so parameter grads hold the analytic gradient,
// then returns a closure evaluating the same loss without side effects.
std::function<double()> prepare_ce(Model& m, const Tensor& x, const std::vector<int>& y,
                                   const ForwardOptions& opt) {
  m.zero_grad();
  auto res = cross_entropy(m.forward(x, opt), y);
  m.backward(res.grad);
  return [&m, x, y, opt] { return cross_entropy(m.forward(x, opt), y).loss; };
}

void randomize_running_stats(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> mean(-0.5, 0.5), var(0.5, 2.0);
  m.for_each_bn([&](BatchNorm& bn) {
    for (auto& v : bn.running_mean().values()) v = mean(rng);
    for (auto& v : bn.running_var().values()) v = var(rng);
  });
}

void randomize_affine(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5), s(-0.3, 0.3);
  m.for_each_bn([&](BatchNorm& bn) {
    for (auto& v : bn.gamma().value.values()) v = u(rng);
    for (auto& v : bn.beta().value.values()) v = s(rng);
  });
}

ArchSpec tiny_cnn() {
  ArchSpec a{"tiny_cnn", {2, 6, 6}, 3, {}};
  a.layers = {conv_spec(4, 3, 1, 1), simple_spec("bn"), simple_spec("relu"), simple_spec("maxpool"),
              conv_spec(4, 3, 2, 1), simple_spec("relu"), simple_spec("flatten"),
              dense_spec(6), simple_spec("bn"), simple_spec("relu"), dense_spec(3)};
  return a;
}

}  // namespace

// ---- forward ----------------------------------------------------------------

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  Model m = build_model(mlp(4, {6}, 3), BuildOptions{});
  for (auto* p : m.parameters())
    if (!p->norm) p->value.fill(0.0);
  // BN beta is zero, so zeros propagate through every layer.
  Tensor out = m.forward(random_tensor({5, 4}, 1), eval_opts());
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityDense) {
  Model m = single_dense(2, 2, false);
  auto& w = m.parameters()[0]->value;
  w.fill(0.0);
  w[0] = w[3] = 1.0;
  Tensor out = m.forward(Tensor({1, 2}, {1.0, 2.0}), eval_opts());
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 2.0);
}

TEST(Forward, TwoLayerMlpMatchesHandMatmul) {
  ArchSpec a{"mlp2", {3}, 2, {dense_spec(4), simple_spec("relu"), dense_spec(2)}};
  Model m = build_model(a, BuildOptions{});
  const Tensor x = random_tensor({3, 3}, 7);
  const Tensor out = m.forward(x, eval_opts());

  auto ps = m.parameters();
  const auto& w1 = ps[0]->value;
  const auto& b1 = ps[1]->value;
  const auto& w2 = ps[2]->value;
  const auto& b2 = ps[3]->value;
  for (std::size_t n = 0; n < 3; ++n) {
    double h[4];
    for (std::size_t j = 0; j < 4; ++j) {
      double s = b1[j];
      for (std::size_t i = 0; i < 3; ++i) s += w1[j * 3 + i] * x[n * 3 + i];
      h[j] = s > 0 ? s : 0;
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double s = b2[k];
      for (std::size_t j = 0; j < 4; ++j) s += w2[k * 4 + j] * h[j];
      EXPECT_NEAR(out[n * 2 + k], s, 1e-10);
    }
  }
}

TEST(Forward, ConvMatchesDirectDefinition) {
  Conv2d conv(2, 3, 3, 2, 1, 2, 3);
  Rng rng(3);
  kaiming_init(conv, InitScheme::shard, rng);
  for (auto& v : conv.bias()->value.values()) v = 0.25;
  const Tensor x = random_tensor({2, 2, 5, 5}, 11);
  const Tensor y = conv.forward(x, eval_opts());
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  const auto& w = conv.weight().value;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t co = 0; co < 3; ++co)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          double s = 0.25;
          for (std::size_t ci = 0; ci < 2; ++ci)
            for (long kh = 0; kh < 3; ++kh)
              for (long kw = 0; kw < 3; ++kw) {
                const long ih = static_cast<long>(r) * 2 - 1 + kh, iw = static_cast<long>(c) * 2 - 1 + kw;
                if (ih < 0 || iw < 0 || ih >= 5 || iw >= 5) continue;
                s += w[((co * 2 + ci) * 3 + kh) * 3 + kw] * x[((n * 2 + ci) * 5 + ih) * 5 + iw];
              }
          EXPECT_NEAR(y[((n * 3 + co) * 3 + r) * 3 + c], s, 1e-12);
        }
}

TEST(Forward, ShapeMismatchIsDimensionError) {
  Model m = build_model(mlp(4, {6}, 3), BuildOptions{});
  EXPECT_THROW(m.forward(Tensor({2, 5}), eval_opts()), DimensionError);
}

// ---- backward ---------------------------------------------------------------

TEST(Backward, ZeroUpstreamGradientGivesZeroGradients) {
  Model m = build_model(tiny_cnn(), BuildOptions{});
  m.zero_grad();
  Tensor out = m.forward(random_tensor({3, 2, 6, 6}, 2), train_opts());
  m.backward(Tensor(out.shape()));
  for (auto* p : m.parameters())
    for (double g : p->grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, ScalarLinearSquaredLoss) {
  Model m = single_dense(1, 1, false);
  const double w = 0.7, x = 1.5, y = 0.2;
  m.parameters()[0]->value[0] = w;
  m.zero_grad();
  Tensor out = m.forward(Tensor({1, 1}, {x}), eval_opts());
  m.backward(Tensor({1, 1}, {2.0 * (out[0] - y)}));
  EXPECT_NEAR(m.parameters()[0]->grad[0], 2.0 * (w * x - y) * x, 1e-15);
}

TEST(GradCheck, SmallCnnEveryParameter) {
  Model m = build_model(tiny_cnn(), BuildOptions{});
  randomize_affine(m, 5);
  const Tensor x = random_tensor({4, 2, 6, 6}, 9);
  const auto y = random_labels(4, 3, 10);
  auto loss = prepare_ce(m, x, y, train_opts());
  auto rep = grad_check(m, loss);
  EXPECT_LT(rep.worst_rel, 1e-4) << rep.worst_where;
  EXPECT_GT(rep.checked, 100u);
}

class BnModeGradCheck : public ::testing::TestWithParam<std::tuple<BnMode, Phase>> {};

TEST_P(BnModeGradCheck, MlpWithBn) {
  const auto [mode, phase] = GetParam();
  BuildOptions o;
  o.bn_mode = mode;
  Model m = build_model(mlp(3, {5, 4}, 3), o);
  randomize_running_stats(m, 1);
  randomize_affine(m, 2);
  const Tensor x = random_tensor({6, 3}, 3);
  const auto y = random_labels(6, 3, 4);
  ForwardOptions opt = phase == Phase::train ? train_opts() : eval_opts();
  auto rep = grad_check(m, prepare_ce(m, x, y, opt));
  EXPECT_LT(rep.worst_rel, 1e-4) << to_string(mode) << ": " << rep.worst_where;
}

INSTANTIATE_TEST_SUITE_P(
    AllModes, BnModeGradCheck,
    ::testing::Combine(::testing::Values(BnMode::batch_average, BnMode::post_average, BnMode::tracked,
                                         BnMode::locally_tracked),
                       ::testing::Values(Phase::train, Phase::eval)));

class DualBnGradCheck : public ::testing::TestWithParam<BnRoute> {};

TEST_P(DualBnGradCheck, Branch) {
  BuildOptions o;
  o.dual_bn = true;
  Model m = build_model(mlp(3, {5}, 2), o);
  randomize_affine(m, 6);
  const Tensor x = random_tensor({5, 3}, 7);
  const auto y = random_labels(5, 2, 8);
  auto rep = grad_check(m, prepare_ce(m, x, y, train_opts(GetParam(), 0.3)));
  EXPECT_LT(rep.worst_rel, 1e-4) << rep.worst_where;
}

INSTANTIATE_TEST_SUITE_P(Routes, DualBnGradCheck,
                         ::testing::Values(BnRoute::clean, BnRoute::noised, BnRoute::mixed));

TEST(GradCheck, InputGradientOfCnn) {
  Model m = build_model(tiny_cnn(), BuildOptions{});
  Tensor x = random_tensor({2, 2, 6, 6}, 12);
  const auto y = random_labels(2, 3, 13);
  const auto opt = eval_opts();
  auto res = cross_entropy(m.forward(x, opt), y);
  const Tensor dx = m.backward(res.grad, false);
  for (std::size_t i = 0; i < x.size(); i += 7) {
    const double orig = x[i];
    x[i] = orig + 1e-5;
    const double lp = cross_entropy(m.forward(x, opt), y).loss;
    x[i] = orig - 1e-5;
    const double lm = cross_entropy(m.forward(x, opt), y).loss;
    x[i] = orig;
    const double num = (lp - lm) / 2e-5;
    EXPECT_NEAR(dx[i], num, 1e-4 * std::max(1e-3, std::abs(num)));
  }
}

TEST(Backward, BranchIsolation) {
  BuildOptions o;
  o.dual_bn = true;
  Model m = build_model(mlp(3, {4}, 2), o);
  const Tensor x = random_tensor({4, 3}, 1);
  const auto y = random_labels(4, 2, 2);
  prepare_ce(m, x, y, train_opts(BnRoute::clean));
  auto& dbn = dynamic_cast<DualBatchNorm&>(m.layer(1));
  for (double g : dbn.noised().gamma().grad.values()) EXPECT_EQ(g, 0.0);
  for (double g : dbn.noised().beta().grad.values()) EXPECT_EQ(g, 0.0);
  prepare_ce(m, x, y, train_opts(BnRoute::noised));
  for (double g : dbn.clean().gamma().grad.values()) EXPECT_EQ(g, 0.0);
  for (double g : dbn.clean().beta().grad.values()) EXPECT_EQ(g, 0.0);
}

// ---- SGD --------------------------------------------------------------------

TEST(Sgd, PlainStep) {
  Parameter p("p", Tensor({1}, {1.0}));
  p.grad[0] = 0.5;
  Sgd opt({0.0, 0.0});
  opt.step({&p}, 0.1);
  EXPECT_DOUBLE_EQ(p.value[0], 0.95);
}

TEST(Sgd, MomentumRecurrence) {
  Parameter p("p", Tensor({1}, {2.0}));
  Sgd opt({0.9, 0.0});
  const double g1 = 0.3, g2 = -0.7, lr = 0.05;
  p.grad[0] = g1;
  opt.step({&p}, lr);
  p.grad[0] = g2;
  opt.step({&p}, lr);
  const double v1 = g1, v2 = 0.9 * v1 + g2;
  EXPECT_DOUBLE_EQ(p.value[0], 2.0 - lr * v1 - lr * v2);
}

TEST(Sgd, WeightDecayAddsToGradient) {
  Parameter p("p", Tensor({1}, {3.0}));
  p.grad[0] = 0.1;
  Sgd opt({0.0, 5e-4});
  opt.step({&p}, 0.2);
  EXPECT_DOUBLE_EQ(p.value[0], 3.0 - 0.2 * (0.1 + 5e-4 * 3.0));
}

TEST(Sgd, NonFiniteGradientAborts) {
  Parameter p("w", Tensor({2}, {1.0, 1.0}));
  p.grad[1] = std::nan("");
  Sgd opt;
  EXPECT_THROW(opt.step({&p}, 0.1), NumericError);
  EXPECT_THROW(opt.step({&p}, 0.0), ConfigError);
}

// ---- initialization ---------------------------------------------------------

TEST(KaimingInit, RescaledUsesFullFanIn) {
  // conv 5x5, full_in = 64, shard in-channels 8 (r = 0.125).
  Conv2d conv(8, 8, 5, 1, 2, 64, 64);
  EXPECT_DOUBLE_EQ(kaiming_std(conv, InitScheme::rescaled), std::sqrt(2.0 / (64.0 * 25.0)));
  EXPECT_DOUBLE_EQ(kaiming_std(conv, InitScheme::shard), std::sqrt(2.0 / (8.0 * 25.0)));
}

TEST(KaimingInit, EmpiricalStdWithinTwoPercent) {
  for (const double r : {1.0, 0.5, 0.25, 0.125}) {
    const std::size_t in = static_cast<std::size_t>(64 * r);
    // 800 x in x 25 >= 1e5 draws for every r.
    Conv2d conv(in, 800, 5, 1, 2, 64, 6400);
    kaiming_init_rescaled(conv, 42);
    const auto& w = conv.weight().value;
    ASSERT_GE(w.size(), 100000u);
    const double mean = std::accumulate(w.values().begin(), w.values().end(), 0.0) / w.size();
    double ss = 0.0;
    for (double v : w.values()) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (w.size() - 1));
    const double expect = std::sqrt(2.0 / (64.0 * 25.0));
    EXPECT_NEAR(sd / expect, 1.0, 0.02) << "r=" << r;
    EXPECT_NEAR(mean, 0.0, 5.0 * expect / std::sqrt(static_cast<double>(w.size())));
    if (r < 1.0) EXPECT_LT(expect, kaiming_std(conv, InitScheme::shard));
    else EXPECT_DOUBLE_EQ(expect, kaiming_std(conv, InitScheme::shard));
  }
}

TEST(KaimingInit, SameSeedSameWeights) {
  BuildOptions o;
  o.width = WidthRatio(1, 4);
  o.seed = 77;
  Model a = build_model(digits_cnn(), o);
  Model b = build_model(digits_cnn(), o);
  EXPECT_EQ(flat_params(a), flat_params(b));
  o.seed = 78;
  Model c = build_model(digits_cnn(), o);
  EXPECT_NE(flat_params(a), flat_params(c));
}

// ---- batch norm -------------------------------------------------------------

TEST(BatchNorm, StandardizedInputPassesThrough) {
  BatchNorm bn(1, BnMode::batch_average);
  Tensor x({4, 1}, {-1.0, 1.0, -1.0, 1.0});  // mean 0, biased var 1
  Tensor y = bn.forward(x, train_opts());
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm, ConstantInputCollapsesToBeta) {
  BatchNorm bn(2, BnMode::batch_average);
  bn.beta().value[0] = 0.3;
  bn.beta().value[1] = -1.2;
  Tensor x({3, 2, 2, 2}, 4.0);
  Tensor y = bn.forward(x, train_opts());
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[(n * 2 + c) * 4 + i], c ? -1.2 : 0.3);
}

TEST(BatchNorm, TrackedEmaMatchesScalarRecurrence) {
  BatchNorm bn(1, BnMode::tracked);
  ForwardOptions o;
  o.phase = Phase::train;
  double rm = 0.0, rv = 1.0;
  for (int k = 0; k < 5; ++k) {
    Tensor x = random_tensor({7, 1}, 100 + k, -2.0, 3.0);
    bn.forward(x, o);
    double mean = 0.0;
    for (double v : x.values()) mean += v / 7.0;
    double ss = 0.0;
    for (double v : x.values()) ss += (v - mean) * (v - mean);
    rm = 0.9 * rm + 0.1 * mean;
    rv = 0.9 * rv + 0.1 * (ss / 6.0);
  }
  EXPECT_NEAR(bn.running_mean()[0], rm, 1e-14);
  EXPECT_NEAR(bn.running_var()[0], rv, 1e-14);
}

TEST(BatchNorm, BatchAverageIgnoresPhase) {
  BuildOptions o;
  Model m = build_model(tiny_cnn(), o);
  randomize_running_stats(m, 3);
  const Tensor x = random_tensor({5, 2, 6, 6}, 4);
  EXPECT_EQ(m.forward(x, train_opts()), m.forward(x, eval_opts()));
}

TEST(BatchNorm, TrackedUsesRunningStatsAtEval) {
  BatchNorm bn(1, BnMode::tracked);
  bn.running_mean()[0] = 1.0;
  bn.running_var()[0] = 4.0;
  Tensor y = bn.forward(Tensor({1, 1}, {3.0}), eval_opts());
  EXPECT_NEAR(y[0], 2.0 / std::sqrt(4.0 + BatchNorm::kEpsilon), 1e-12);
}

TEST(BatchNorm, SingleSampleBatchIsFlagged) {
  BatchNorm bn(1, BnMode::batch_average);
  bn.beta().value[0] = 0.5;
  Tensor y = bn.forward(Tensor({1, 1}, {9.0}), eval_opts());
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_EQ(bn.degenerate_batches(), 1u);
}

TEST(PostAverageBn, SingleBatchSinglePass) {
  BuildOptions o;
  o.bn_mode = BnMode::post_average;
  Model m = build_model(mlp(2, {3}, 2), o);
  const auto before = flat_params(m);
  const Tensor x = random_tensor({8, 2}, 21);
  post_average_bn(m, {&x}, 8, 1);
  EXPECT_EQ(flat_params(m), before);

  // First BN sees the dense layer output; recompute its batch statistics directly.
  ForwardOptions o2 = eval_opts();
  Tensor h = m.layer(0).forward(x, o2);
  auto& bn = dynamic_cast<BatchNorm&>(m.layer(1));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < 8; ++n) mean += h[n * 3 + c] / 8.0;
    double ss = 0.0;
    for (std::size_t n = 0; n < 8; ++n) ss += (h[n * 3 + c] - mean) * (h[n * 3 + c] - mean);
    EXPECT_NEAR(bn.running_mean()[c], mean, 1e-12);
    EXPECT_NEAR(bn.running_var()[c], ss / 7.0, 1e-12);
  }
}

TEST(PostAverageBn, MatchesFullDatasetStatistics) {
  BuildOptions o;
  o.bn_mode = BnMode::post_average;
  Model m = build_model(mlp(3, {4}, 2), o);
  const Tensor x = random_tensor({400, 3}, 31);
  post_average_bn(m, {&x}, 40, 20, 5);
  Tensor h = m.layer(0).forward(x, eval_opts());
  auto& bn = dynamic_cast<BatchNorm&>(m.layer(1));
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (std::size_t n = 0; n < 400; ++n) mean += h[n * 4 + c] / 400.0;
    double ss = 0.0;
    for (std::size_t n = 0; n < 400; ++n) ss += (h[n * 4 + c] - mean) * (h[n * 4 + c] - mean);
    const double var = ss / 399.0;
    EXPECT_NEAR(bn.running_mean()[c], mean, 1e-9);
    // Averaged per-batch variances are within a few percent of the pooled one.
    EXPECT_NEAR(bn.running_var()[c] / var, 1.0, 0.05);
  }
}

TEST(PostAverageBn, EmptyDatasetIsError) {
  BuildOptions o;
  o.bn_mode = BnMode::post_average;
  Model m = build_model(mlp(3, {4}, 2), o);
  const Tensor x({0, 3});
  EXPECT_THROW(post_average_bn(m, {&x}, 4), Error);
}

// ---- masked cross-entropy -------------------------------------------------

TEST(MaskedCrossEntropy, FullClassSetEqualsStandard) {
  const Tensor z = random_tensor({5, 4}, 8, -3.0, 3.0);
  const auto y = random_labels(5, 4, 9);
  const auto masked = masked_cross_entropy(z, y, {0, 1, 2, 3});
  double ref = 0.0;
  for (std::size_t n = 0; n < 5; ++n) {
    double d = 0.0;
    for (std::size_t k = 0; k < 4; ++k) d += std::exp(z[n * 4 + k]);
    ref += (std::log(d) - z[n * 4 + static_cast<std::size_t>(y[n])]) / 5.0;
  }
  EXPECT_NEAR(masked.loss, ref, 1e-12);
  EXPECT_NEAR(cross_entropy(z, y).loss, ref, 1e-12);
}

TEST(MaskedCrossEntropy, TwoTermSoftmax) {
  const Tensor z({1, 3}, {2.0, 0.0, 1.0});
  const std::vector<int> y{0};
  const auto r = masked_cross_entropy(z, y, {0, 2});
  EXPECT_NEAR(r.loss, -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(1.0))), 1e-15);
  EXPECT_EQ(r.grad[1], 0.0);
}

TEST(MaskedCrossEntropy, AbsentLabelIsError) {
  const Tensor z({1, 3}, {2.0, 0.0, 1.0});
  const std::vector<int> y{1};
  EXPECT_THROW(masked_cross_entropy(z, y, {0, 2}), Error);
}

// ---- accounting -------------------------------------------------------------

TEST(Accounting, DenseLayer) {
  Model m = single_dense(10, 10);
  EXPECT_EQ(m.count_params(), 110u);
  EXPECT_EQ(m.count_macs(), 100u);
}

TEST(Accounting, ConvDefinition) {
  Conv2d conv(3, 4, 3, 1, 1, 3, 4);
  EXPECT_EQ(conv.macs({3, 8, 8}), 8u * 8u * 4u * 9u * 3u);
  Conv2d strided(3, 4, 3, 2, 1, 3, 4);
  EXPECT_EQ(strided.macs({3, 8, 8}), 4u * 4u * 4u * 9u * 3u);
}

// Expected values come from an independent closed-form count of the Digits CNN
// (conv k=5 pad 2, pools 28 -> 14 -> 7, FC 6272 -> 2048 -> 512 -> 10, BN affine).
TEST(Accounting, DigitsCnnExactCounts) {
  BuildOptions o;
  Model full = build_model(digits_cnn(), o);
  EXPECT_EQ(full.count_params(), 14219210u);
  EXPECT_EQ(full.count_macs(), 47767552u);
  o.width = WidthRatio(1, 8);
  Model base = build_model(digits_cnn(), o);
  EXPECT_EQ(base.count_params(), 224194u);
  EXPECT_EQ(base.count_macs(), 1158528u);
  o.dual_bn = true;
  Model dbn = build_model(digits_cnn(), o);
  EXPECT_EQ(dbn.count_params() - base.count_params(), 2u * (8 + 8 + 16 + 256 + 64));
}

TEST(Accounting, FootprintMatchesBuiltModels) {
  const std::vector<ArchSpec> archs{tiny_cnn(), mlp(5, {8, 4}, 3), desk_cnn(1, 8, 10), desk_cnn(3, 12, 4, 8, 8, 16)};
  for (const auto& a : archs)
    for (auto w : {WidthRatio(1, 1), WidthRatio(1, 2), WidthRatio(1, 4)})
      for (bool dual : {false, true}) {
        BuildOptions o;
        o.width = w;
        o.dual_bn = dual;
        o.rescale_layer = dual;
        bool buildable = true;
        try {
          build_model(a, o);
        } catch (const ConfigError&) {
          buildable = false;
        }
        if (!buildable) {
          EXPECT_THROW(footprint(a, o), ConfigError);
          continue;
        }
        const auto m = build_model(a, o);
        const auto f = footprint(a, o);
        EXPECT_EQ(f.params, m.count_params()) << a.id << " " << w.str();
        EXPECT_EQ(f.macs, m.count_macs()) << a.id << " " << w.str();
      }
  const auto f = footprint(digits_cnn(), BuildOptions{});
  EXPECT_EQ(f.params, 14219210u);
  EXPECT_EQ(f.macs, 47767552u);
}

TEST(Accounting, NonDivisibleWidthNamesLayer) {
  BuildOptions o;
  o.width = WidthRatio(1, 3);
  try {
    build_model(digits_cnn(), o);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "architecture.layers[0]");
  }
}

// ---- checkpoints and config -----------------------------------------------

TEST(Checkpoint, RoundTrip) {
  BuildOptions o;
  o.width = WidthRatio(1, 2);
  o.bn_mode = BnMode::tracked;
  o.seed = 5;
  Model a = build_model(tiny_cnn(), o);
  randomize_running_stats(a, 9);
  std::stringstream ss;
  write_checkpoint(ss, a);
  o.seed = 6;
  Model b = build_model(tiny_cnn(), o);
  auto h = read_checkpoint(ss, b);
  EXPECT_EQ(h.seed, 5u);
  EXPECT_TRUE(splitmix::testing::same_params(a, b));
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  Model a = build_model(mlp(2, {3}, 2), BuildOptions{});
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_checkpoint(bad, a), DataError);
  std::stringstream ss;
  write_checkpoint(ss, a);
  std::string blob = ss.str();
  std::stringstream cut(blob.substr(0, blob.size() - 3));
  EXPECT_THROW(read_checkpoint(cut, a), DataError);
  BuildOptions o;
  o.width = WidthRatio(1, 2);
  Model half = build_model(mlp(2, {4}, 2), o);
  std::stringstream again(blob);
  EXPECT_THROW(read_checkpoint(again, half), DataError);
}

TEST(ArchConfig, DeclarativeLayersAndPresets) {
  const auto j = nlohmann::json::parse(R"({
    "id": "small", "input": [1, 8, 8], "classes": 4,
    "layers": [
      {"kind": "conv", "channels": 8, "kernel": 3, "padding": 1, "bn": true, "activation": "relu"},
      {"kind": "maxpool"},
      {"kind": "flatten"},
      {"kind": "dense", "units": 16, "bn": true, "mode": "tracked", "activation": "relu"},
      {"kind": "dense", "units": 4}
    ]})");
  const ArchSpec a = arch_from_json(j);
  EXPECT_EQ(a.layers.size(), 9u);
  Model m = build_model(a, BuildOptions{});
  EXPECT_EQ(m.forward(random_tensor({2, 1, 8, 8}, 1), eval_opts()).shape(), (Shape{2, 4}));
  EXPECT_EQ(arch_from_json(nlohmann::json::parse(R"({"preset":"digits_cnn"})")).id, "digits_cnn");
}

TEST(ArchConfig, UnknownKeyReportsPath) {
  const auto j = nlohmann::json::parse(R"({"id":"x","input":[2],"classes":2,
      "layers":[{"kind":"dense","units":2,"colour":"red"}]})");
  try {
    arch_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "architecture.layers[0].colour");
  }
}

TEST(Scaler, RescaleLayerOnlyActiveInTraining) {
  BuildOptions o;
  o.width = WidthRatio(1, 4);
  o.rescale_layer = true;
  Model m = build_model(mlp(2, {8}, 2), o);
  ASSERT_EQ(m.layer(1).kind(), "scaler");
  auto& s = dynamic_cast<Scaler&>(m.layer(1));
  EXPECT_DOUBLE_EQ(s.factor(), 4.0);
  const Tensor x({1, 2}, {1.0, 2.0});
  EXPECT_EQ(s.forward(x, eval_opts()), x);
  EXPECT_DOUBLE_EQ(s.forward(x, train_opts())[1], 8.0);
}
