#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <map>

#include "gtest/gtest.h"
#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/ensemble/manifest.hpp"
#include "splitmix/ensemble/sampler.hpp"
#include "test_util.hpp"

using namespace splitmix;
using namespace splitmix::ensemble;
using splitmix::testing::random_tensor;

namespace {

nn::ForwardOptions eval_opts() {
  nn::ForwardOptions o;
  o.phase = nn::Phase::eval;
  return o;
}

std::size_t channels_of(const nn::Model& m, std::size_t layer) {
  return const_cast<nn::Model&>(m).layer(layer).parameters().at(0)->value.dim(0);
}

}  // namespace

// ---- base set ---------------------------------------------------------------

TEST(BaseModels, FullWidthIsSingleNet) {
  auto set = build_base_models(nn::digits_cnn(), 1, 3);
  ASSERT_EQ(set.size(), 1u);
  EXPECT_TRUE(set.atom().is_full());
  EXPECT_EQ(set.base_params(), 14219210u);
}

TEST(BaseModels, QuarterWidthChannelsSumToFull) {
  const auto arch = nn::desk_cnn(1, 8, 10, 16, 32, 64);
  auto set = build_base_models(arch, 4, 3);
  ASSERT_EQ(set.size(), 4u);
  // conv1, conv2, dense hidden.
  for (auto [layer, full] : std::vector<std::pair<std::size_t, std::size_t>>{{0, 16}, {4, 32}, {9, 64}}) {
    std::size_t total = 0;
    for (const auto& b : set.bases) total += channels_of(b, layer);
    EXPECT_EQ(total, full) << "layer " << layer;
  }
}

TEST(BaseModels, DigitsEighthWidthBases) {
  auto set = build_base_models(nn::digits_cnn(), 8, 3);
  ASSERT_EQ(set.size(), 8u);
  for (const auto& b : set.bases) EXPECT_EQ(b.count_params(), 224194u);
  EXPECT_EQ(mixture_params(set, nn::WidthRatio(1, 1)), 8u * 224194u);
  EXPECT_EQ(mixture_macs(set, nn::WidthRatio(1, 1)), 8u * set.base_macs());
  EXPECT_EQ(set.members(nn::WidthRatio(1, 1)).size(), 8u);
}

TEST(BaseModels, NonDivisibleWidthIsConfigError) {
  EXPECT_THROW(build_base_models(nn::desk_cnn(1, 8, 10, 16, 32, 64), 3, 0), ConfigError);
}

TEST(BaseModels, IndependentInitAndReproducible) {
  const auto arch = nn::mlp(4, {8}, 3);
  auto a = build_base_models(arch, 4, 9);
  auto b = build_base_models(arch, 4, 9);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(nn::flat_params(a.bases[i]), nn::flat_params(b.bases[i]));
    for (std::size_t j = i + 1; j < 4; ++j) EXPECT_NE(nn::flat_params(a.bases[i]), nn::flat_params(a.bases[j]));
  }
}

TEST(BaseModels, UpdatingOneBaseLeavesOthersAlone) {
  auto set = build_base_models(nn::mlp(4, {8}, 3), 4, 1);
  const auto x = random_tensor({5, 4}, 2);
  std::vector<nn::Tensor> before;
  for (auto& b : set.bases) before.push_back(b.forward(x, eval_opts()));
  for (auto* p : set.bases[2].parameters())
    for (auto& v : p->value.values()) v += 0.5;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto after = set.bases[j].forward(x, eval_opts());
    if (j == 2) EXPECT_NE(after, before[j]);
    else EXPECT_EQ(after, before[j]);
  }
}

// ---- mixing -----------------------------------------------------------------

TEST(Mix, SingleMemberEqualsBase) {
  auto set = build_base_models(nn::mlp(3, {4}, 2), 4, 5);
  const auto x = random_tensor({6, 3}, 1);
  EXPECT_EQ(mix_predict(set, {1}, x, eval_opts()), set.bases[1].forward(x, eval_opts()));
}

TEST(Mix, HandAverage) {
  auto set = build_base_models(nn::mlp(1, {}, 2), 2, 0);
  const double biases[2][2] = {{1, 3}, {3, 1}};
  for (std::size_t i = 0; i < 2; ++i) {
    auto ps = set.bases[i].parameters();
    ps[0]->value.fill(0.0);
    ps[1]->value[0] = biases[i][0];
    ps[1]->value[1] = biases[i][1];
  }
  const auto z = mix_predict(set, {0, 1}, nn::Tensor({1, 1}, {0.7}), eval_opts());
  EXPECT_EQ(z[0], 2.0);
  EXPECT_EQ(z[1], 2.0);
}

TEST(Mix, IdenticalMembersEqualOneMember) {
  auto set = build_base_models(nn::mlp(3, {4}, 2), 4, 5);
  for (std::size_t i = 1; i < 4; ++i) set.bases[i] = set.bases[0];
  const auto x = random_tensor({6, 3}, 1);
  EXPECT_EQ(mix_predict(set, {0, 1, 2, 3}, x, eval_opts()), set.bases[0].forward(x, eval_opts()));
  EXPECT_THROW(mix_predict(set, {}, x, eval_opts()), ConfigError);
}

TEST(Mix, PrefixMembersFollowOrder) {
  auto set = build_base_models(nn::mlp(3, {8}, 2), 8, 5);
  EXPECT_EQ(set.atoms_for(nn::WidthRatio(1, 1)), 8u);
  EXPECT_EQ(set.atoms_for(nn::WidthRatio(3, 8)), 3u);
  EXPECT_EQ(set.atoms_for(nn::WidthRatio(1, 3)), 2u);  // floor
  EXPECT_THROW(set.atoms_for(nn::WidthRatio(1, 16)), ConfigError);
  set.order = {7, 6, 5, 4, 3, 2, 1, 0};
  EXPECT_EQ(set.members(nn::WidthRatio(1, 4)), (std::vector<std::size_t>{7, 6}));
}

// ---- sorting ----------------------------------------------------------------

TEST(Sort, DescendingValidationAccuracy) {
  auto set = build_base_models(nn::mlp(1, {}, 2), 3, 0);
  // Base i predicts class 1 iff x > t_i; all labels are 1.
  const double thresholds[3] = {0.7, 0.1, 0.4};
  for (std::size_t i = 0; i < 3; ++i) {
    auto ps = set.bases[i].parameters();
    ps[0]->value[0] = 0.0;
    ps[0]->value[1] = 1.0;
    ps[1]->value[0] = thresholds[i];
    ps[1]->value[1] = 0.0;
  }
  data::LabeledDataset val;
  val.num_classes = 2;
  val.x = nn::Tensor({10, 1});
  for (std::size_t j = 0; j < 10; ++j) val.x[j] = j / 10.0 + 0.05;
  val.y.assign(10, 1);
  sort_bases_by_val_acc(set, {&val}, eval_opts());
  EXPECT_NEAR(set.val_acc[0], 0.3, 1e-12);
  EXPECT_NEAR(set.val_acc[1], 0.9, 1e-12);
  EXPECT_NEAR(set.val_acc[2], 0.6, 1e-12);
  EXPECT_EQ(set.order, (std::vector<std::size_t>{1, 2, 0}));
  sort_bases_by_val_acc(set, {&val}, eval_opts());
  EXPECT_EQ(set.order, (std::vector<std::size_t>{1, 2, 0}));
  data::LabeledDataset empty;
  EXPECT_THROW(sort_bases_by_val_acc(set, {&empty}, eval_opts()), Error);
}

// ---- sampler ----------------------------------------------------------------

TEST(Sampler, SingleAndFullRequests) {
  BaseSampler s(5, 1);
  const auto head = s.permutation()[0];
  EXPECT_EQ(s.sample(1), (std::vector<std::size_t>{head}));
  auto all = s.sample(5);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_THROW(s.sample(6), ProtocolError);
  EXPECT_THROW(s.sample(0), ProtocolError);
}

TEST(Sampler, CursorSweepCoversEveryBase) {
  BaseSampler s(4, 3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 4; ++i) seen.insert(s.sample(1)[0]);
  EXPECT_EQ(seen.size(), 4u);
  EXPECT_EQ(s.cursor(), 4u);
  s.sample(1);
  EXPECT_EQ(s.cursor(), 1u);  // reshuffled before selecting
}

TEST(Sampler, CoverageFuzz) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t M = 1 + rng() % 12;
    BaseSampler s(M, rng());
    // Calls already made before the window don't matter: the walk restarts each M calls.
    for (int window = 0; window < 3; ++window) {
      std::vector<int> head_count(M, 0);
      for (std::size_t c = 0; c < M; ++c) {
        const std::size_t n = 1 + rng() % M;
        const auto ids = s.sample(n);
        ASSERT_EQ(ids.size(), n);
        ASSERT_EQ(std::set<std::size_t>(ids.begin(), ids.end()).size(), n);
        ++head_count[ids[0]];
        ASSERT_LE(s.cursor(), M);
        ASSERT_GE(s.cursor(), 1u);
      }
      for (auto h : head_count) ASSERT_EQ(h, 1);
    }
  }
}

TEST(Sampler, RemainderUniformGivenCursor) {
  const std::size_t M = 6, n = 3, calls = 10000;
  BaseSampler s(M, 2024);
  std::vector<std::vector<double>> counts(M, std::vector<double>(M, 0.0));
  std::vector<double> heads(M, 0.0);
  for (std::size_t c = 0; c < calls; ++c) {
    const auto ids = s.sample(n);
    heads[ids[0]] += 1;
    for (std::size_t j = 1; j < n; ++j) counts[ids[0]][ids[j]] += 1;
  }
  double chi2 = 0.0;
  std::size_t dof = 0;
  for (std::size_t h = 0; h < M; ++h) {
    const double expect = heads[h] * (n - 1) / static_cast<double>(M - 1);
    for (std::size_t o = 0; o < M; ++o) {
      if (o == h) continue;
      chi2 += (counts[h][o] - expect) * (counts[h][o] - expect) / expect;
    }
    dof += M - 2;  // counts per head sum to heads[h] * (n - 1)
  }
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), chi2));
  EXPECT_GT(p, 0.01) << "chi2=" << chi2 << " dof=" << dof;
}

TEST(Sampler, DeterministicForSeed) {
  BaseSampler a(8, 5), b(8, 5);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.sample(1 + i % 8), b.sample(1 + i % 8));
}

// ---- manifest -----------------------------------------------------------------

TEST(Manifest, RoundTrip) {
  nn::BuildOptions opt;
  opt.bn_mode = nn::BnMode::tracked;
  opt.dual_bn = true;
  auto set = build_base_models(nn::desk_cnn(1, 8, 4, 8, 8, 16), 4, 12, opt);
  set.order = {3, 1, 0, 2};
  set.val_acc = {0.5, 0.6, 0.4, 0.7};
  for (auto* p : set.bases[1].parameters()) p->value.fill(0.125);
  const auto dir = std::filesystem::temp_directory_path() / "splitmix_manifest_test";
  std::filesystem::remove_all(dir);
  save_base_set(set, dir);
  auto back = load_base_set(dir);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.order, set.order);
  EXPECT_EQ(back.val_acc, set.val_acc);
  EXPECT_TRUE(back.build.dual_bn);
  EXPECT_EQ(back.build.bn_mode, nn::BnMode::tracked);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(splitmix::testing::same_params(back.bases[i], set.bases[i]));
  std::filesystem::remove(dir / "base_2.bin");
  EXPECT_THROW(load_base_set(dir), DataError);
}
