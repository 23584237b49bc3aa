#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <span>
#include <vector>

#include "splitmix/data/dataset.hpp"
#include "splitmix/data/partition.hpp"
#include "splitmix/error.hpp"
#include "splitmix/nn.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::fed {

struct ClientData {
  std::size_t id = 0;
  data::LabeledDataset train, val, test;
  std::set<int> present_classes;
  int domain = -1;
  nn::WidthRatio budget;
};

inline std::vector<ClientData> make_clients(const std::vector<data::Shard>& shards,
                                            const std::vector<nn::WidthRatio>& budgets, double val_frac,
                                            double test_frac, std::uint64_t seed) {
  if (budgets.size() != shards.size()) throw ConfigError("budgets", "one budget per client required");
  std::vector<ClientData> out;
  for (std::size_t k = 0; k < shards.size(); ++k) {
    auto split = data::split_shard(shards[k].data, val_frac, test_frac, derive_seed(seed, {0xc11e, k}));
    ClientData c;
    c.id = k;
    c.train = std::move(split.train);
    c.val = std::move(split.val);
    c.test = std::move(split.test);
    c.present_classes = shards[k].present_classes;
    c.domain = shards[k].data.domain;
    c.budget = budgets[k];
    out.push_back(std::move(c));
  }
  return out;
}

struct LocalTrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  nn::SgdConfig sgd;
  bool masked_loss = true;  // softmax over the client's present classes
};

struct Batch {
  nn::Tensor x;
  std::vector<int> y;
};

// Computes the batch loss and leaves its gradient in the model's parameters
// (grads are zeroed by the caller).
using BatchObjective =
    std::function<double(nn::Model&, const Batch&, const std::set<int>& present, Rng& rng)>;

inline double ce_objective(nn::Model& model, const Batch& b, const std::set<int>& present, Rng&) {
  nn::ForwardOptions opt;
  opt.phase = nn::Phase::train;
  auto res = nn::masked_cross_entropy(model.forward(b.x, opt), b.y, present);
  model.backward(res.grad);
  return res.loss;
}

struct LocalStats {
  double loss_sum = 0.0;
  std::size_t steps = 0;
  double mean_loss() const { return steps ? loss_sum / static_cast<double>(steps) : 0.0; }
};

// E epochs of minibatch SGD over `train`; a fresh optimizer per call. A
// trailing single-sample batch is dropped when the epoch has other batches.
inline LocalStats local_train(nn::Model& model, const data::LabeledDataset& train,
                              const std::set<int>& present, const LocalTrainConfig& cfg, double lr,
                              std::uint64_t seed, const BatchObjective& objective = ce_objective) {
  if (cfg.batch_size == 0) throw ConfigError("schedule.batch_size", "must be positive");
  LocalStats stats;
  if (cfg.epochs == 0 || train.empty()) return stats;
  nn::Sgd opt(cfg.sgd);
  Rng rng(seed);
  const std::set<int> none;
  const auto& mask = cfg.masked_loss ? present : none;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = data::shuffled_indices(train.size(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      if (end - b == 1 && order.size() > 1) continue;
      const std::span<const std::size_t> idx(order.data() + b, end - b);
      Batch batch{nn::gather_rows(train.x, idx), {}};
      for (auto i : idx) batch.y.push_back(train.y[i]);
      model.zero_grad();
      const double loss = objective(model, batch, mask, rng);
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss " + std::to_string(loss) + " during local training");
      opt.step(model, lr);
      stats.loss_sum += loss;
      ++stats.steps;
    }
  }
  return stats;
}

// ⌊R_k / r⌋.
inline std::size_t budget_cap(const nn::WidthRatio& budget, const nn::WidthRatio& atom) {
  return static_cast<std::size_t>((budget.num() * atom.den()) / (budget.den() * atom.num()));
}

// Guards the per-client budget before any of `assigned` is trained.
inline void check_budget(std::size_t assigned, const ClientData& client, const nn::WidthRatio& atom) {
  const auto cap = budget_cap(client.budget, atom);
  if (assigned > cap)
    throw ProtocolError("client " + std::to_string(client.id) + " with budget " + client.budget.str() +
                        " was assigned " + std::to_string(assigned) + " bases of width " + atom.str() +
                        " (cap " + std::to_string(cap) + ")");
}

// Trains each assigned base independently on the client's data.
inline std::vector<LocalStats> local_train_client(const std::vector<nn::Model*>& assigned, const ClientData& client,
                                                  const nn::WidthRatio& atom, const LocalTrainConfig& cfg,
                                                  double lr, const std::vector<std::uint64_t>& seeds,
                                                  const BatchObjective& objective = ce_objective) {
  check_budget(assigned.size(), client, atom);
  std::vector<LocalStats> out;
  for (std::size_t i = 0; i < assigned.size(); ++i)
    out.push_back(local_train(*assigned[i], client.train, client.present_classes, cfg, lr, seeds.at(i), objective));
  return out;
}

}  // namespace splitmix::fed
