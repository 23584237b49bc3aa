#pragma once

#include <numeric>
#include <random>
#include <vector>

#include "splitmix/baselines/slimmable.hpp"
#include "splitmix/error.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/fed/evaluate.hpp"
#include "splitmix/fed/records.hpp"
#include "splitmix/fed/splitmix.hpp"
#include "splitmix/fed/tasks.hpp"
#include "splitmix/nn.hpp"

namespace splitmix::baselines {

// Bounded-slimmable local training: on every batch, each affordable
// prototype runs one forward/backward and its own SGD step, widest first,
// with the shared tensors updated between passes. Momentum of the shared
// tensors is kept at ×1 and sliced per pass; BN momentum is per width.
// Returns the number of prototypes trained (widths[0..n)).
inline std::size_t sheterofl_local_train(SlimmableModel& model, const data::LabeledDataset& train,
                                         const std::set<int>& present, const WidthRatio& budget,
                                         const fed::LocalTrainConfig& cfg, double lr, std::uint64_t seed,
                                         fed::LocalStats* stats = nullptr) {
  if (cfg.batch_size == 0) throw ConfigError("schedule.batch_size", "must be positive");
  const std::size_t n = model.affordable(budget);
  if (n == 0 || cfg.epochs == 0 || train.empty()) return n;
  if (model.widths[n - 1] > budget) throw ProtocolError("prototype wider than the client budget");

  std::vector<nn::Tensor> shared_velocity;
  for (auto* p : detail::shared_params(model.full())) shared_velocity.emplace_back(p->value.shape());

  // Per width: optimizer (with pre-sized momentum) and, for every parameter,
  // its index among the shared tensors or -1 for BN parameters.
  std::vector<nn::Sgd> opts;
  std::vector<std::vector<long>> shared_slot(n);
  for (std::size_t j = 0; j < n; ++j) {
    opts.emplace_back(cfg.sgd);
    auto params = model.nets[j].parameters();
    auto shared = detail::shared_params(model.nets[j]);
    for (auto* p : params) {
      opts[j].buffers().emplace_back(p->value.shape());
      const auto it = std::find(shared.begin(), shared.end(), p);
      shared_slot[j].push_back(it == shared.end() ? -1 : static_cast<long>(it - shared.begin()));
    }
  }

  Rng rng(seed);
  const std::set<int> none;
  const auto& mask = cfg.masked_loss ? present : none;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = data::shuffled_indices(train.size(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      if (end - b == 1 && order.size() > 1) continue;
      const std::span<const std::size_t> idx(order.data() + b, end - b);
      fed::Batch batch{nn::gather_rows(train.x, idx), {}};
      for (auto i : idx) batch.y.push_back(train.y[i]);
      for (std::size_t j = n; j-- > 0;) {
        nn::Model& net = model.load(j);
        auto& vel = opts[j].buffers();
        for (std::size_t p = 0; p < vel.size(); ++p)
          if (shared_slot[j][p] >= 0) detail::read_leading(shared_velocity[shared_slot[j][p]], vel[p]);
        net.zero_grad();
        const double loss = fed::ce_objective(net, batch, mask, rng);
        if (!std::isfinite(loss))
          throw NumericError("non-finite loss " + std::to_string(loss) + " during slimmable training");
        opts[j].step(net, lr);
        model.store(j);
        for (std::size_t p = 0; p < vel.size(); ++p)
          if (shared_slot[j][p] >= 0) detail::write_leading(vel[p], shared_velocity[shared_slot[j][p]]);
        if (stats && j + 1 == n) {
          stats->loss_sum += loss;
          ++stats->steps;
        }
      }
    }
  }
  return n;
}

struct SlimmableUpdate {
  SlimmableModel* model = nullptr;
  std::size_t trained = 0;  // prototypes widths[0..trained) were trained
  double weight = 0.0;      // |D_k|
};

// Region-wise aggregation: every coordinate of a shared tensor is the
// |D_k|-weighted mean over the clients whose widest prototype covers it;
// width j's BN parameters (and buffers, when `with_buffers`) average over
// the clients that trained width j. Uncovered coordinates are retained.
// Returns the per-width coverage (sum of weights).
inline std::vector<double> sheterofl_aggregate(SlimmableModel& global, const std::vector<SlimmableUpdate>& updates,
                                               bool with_buffers = true) {
  auto gshared = detail::shared_params(global.full());
  for (std::size_t s = 0; s < gshared.size(); ++s) {
    auto& target = gshared[s]->value;
    std::vector<double> sum(target.size(), 0.0), wsum(target.size(), 0.0), sole(target.size(), 0.0);
    std::vector<std::size_t> count(target.size(), 0);
    for (const auto& u : updates) {
      if (u.trained == 0) continue;
      if (!(u.weight > 0.0)) throw ProtocolError("aggregation weight must be positive");
      auto& local = *u.model;
      const auto& value = detail::shared_params(local.full())[s]->value;
      const auto& region = detail::shared_params(local.nets[u.trained - 1])[s]->value.shape();
      detail::for_each_leading(target.shape(), region, [&](std::size_t f, std::size_t) {
        sum[f] += u.weight * value[f];
        wsum[f] += u.weight;
        sole[f] = value[f];
        ++count[f];
      });
    }
    for (std::size_t f = 0; f < target.size(); ++f) {
      if (count[f] == 1) target[f] = sole[f];
      else if (count[f] > 1) target[f] = sum[f] / wsum[f];
    }
  }

  std::vector<double> coverage(global.size(), 0.0);
  for (std::size_t j = 0; j < global.size(); ++j) {
    auto gnorm = detail::norm_params(global.nets[j]);
    auto gbuf = global.nets[j].buffers();
    std::vector<std::vector<double>> psum(gnorm.size()), bsum(gbuf.size());
    for (std::size_t i = 0; i < gnorm.size(); ++i) psum[i].assign(gnorm[i]->value.size(), 0.0);
    for (std::size_t i = 0; i < gbuf.size(); ++i) bsum[i].assign(gbuf[i]->size(), 0.0);
    const SlimmableUpdate* only = nullptr;
    std::size_t contributors = 0;
    for (const auto& u : updates) {
      if (u.trained <= j) continue;
      auto& local = *u.model;
      auto lnorm = detail::norm_params(local.nets[j]);
      auto lbuf = local.nets[j].buffers();
      for (std::size_t i = 0; i < gnorm.size(); ++i)
        for (std::size_t c = 0; c < psum[i].size(); ++c) psum[i][c] += u.weight * lnorm[i]->value[c];
      for (std::size_t i = 0; i < gbuf.size(); ++i)
        for (std::size_t c = 0; c < bsum[i].size(); ++c) bsum[i][c] += u.weight * (*lbuf[i])[c];
      coverage[j] += u.weight;
      only = &u;
      ++contributors;
    }
    if (contributors == 0) continue;
    if (contributors == 1) {
      auto& local = *only->model;
      auto lnorm = detail::norm_params(local.nets[j]);
      for (std::size_t i = 0; i < gnorm.size(); ++i) gnorm[i]->value = lnorm[i]->value;
      if (with_buffers) {
        auto lbuf = local.nets[j].buffers();
        for (std::size_t i = 0; i < gbuf.size(); ++i) *gbuf[i] = *lbuf[i];
      }
      continue;
    }
    for (std::size_t i = 0; i < gnorm.size(); ++i)
      for (std::size_t c = 0; c < psum[i].size(); ++c) gnorm[i]->value[c] = psum[i][c] / coverage[j];
    if (with_buffers)
      for (std::size_t i = 0; i < gbuf.size(); ++i)
        for (std::size_t c = 0; c < bsum[i].size(); ++c) (*gbuf[i])[c] = bsum[i][c] / coverage[j];
  }
  for (std::size_t j = 0; j + 1 < global.size(); ++j) global.load(j);
  return coverage;
}

// Parameters a client holding widths[0..n) exchanges with the server.
inline std::size_t slimmable_exchange_params(SlimmableModel& m, std::size_t n) {
  if (n == 0) return 0;
  std::size_t total = 0;
  for (auto* p : detail::shared_params(m.nets[n - 1])) total += p->value.size();
  for (std::size_t j = 0; j < n; ++j)
    for (auto* p : detail::norm_params(m.nets[j])) total += p->value.size();
  return total;
}

inline std::vector<fed::WidthEval> evaluate_slimmable(SlimmableModel& m, const std::vector<fed::ClientData>& clients,
                                                      fed::Split split, const nn::ForwardOptions& opt,
                                                      std::size_t batch) {
  std::vector<fed::WidthEval> out;
  for (std::size_t j = 0; j < m.size(); ++j) {
    nn::Model& net = m.load(j);
    out.push_back({m.widths[j], fed::client_mean_accuracy(net, clients, split, opt, batch), net.count_macs(),
                   net.count_params()});
  }
  return out;
}

// Federated training of a slimmable model (SHeteroFL). `initial` fixes the
// prototype widths; every client trains all prototypes within its budget.
inline fed::RunResult run_sheterofl(SlimmableModel initial, const std::vector<fed::ClientData>& clients,
                                    const fed::FedConfig& cfg, const fed::RunHooks& hooks = {},
                                    SlimmableModel* trained = nullptr) {
  if (clients.empty()) throw ConfigError("partitioner.clients", "no clients");
  for (const auto& c : clients)
    if (c.train.empty()) throw DataError("client " + std::to_string(c.id) + " has no training data");
  const nn::BnMode mode = initial.build.bn_mode;
  if (mode == nn::BnMode::locally_tracked)
    throw ConfigError("bn.mode", "locally_tracked statistics are not supported by the sheterofl baseline");
  cfg.lr.validate();
  SlimmableModel global = std::move(initial);
  const std::size_t K = clients.size(), W = global.size();
  const std::size_t total_params = global.count_params();
  Rng participation_rng(derive_seed(cfg.seed, {0x9a271c}));
  fed::DomainShareTally tally;
  fed::RunResult result;
  result.method = "sheterofl";

  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    fed::RoundRecord rec;
    rec.round = t + 1;
    rec.lr = cfg.lr.at(t);
    if (cfg.participants == 0 || cfg.participants >= K) {
      rec.participants.resize(K);
      std::iota(rec.participants.begin(), rec.participants.end(), std::size_t{0});
    } else {
      rec.participants = fed::select_participants(K, cfg.participants, participation_rng);
    }
    std::bernoulli_distribution drop(cfg.dropout);
    std::vector<std::size_t> task_clients;
    std::vector<std::size_t> affordable;
    for (auto k : rec.participants) {
      const std::size_t n = global.affordable(clients[k].budget);
      const bool dropped = cfg.dropout > 0.0 && drop(participation_rng);
      std::vector<std::size_t> ids(n);
      std::iota(ids.begin(), ids.end(), std::size_t{0});
      rec.assignments.push_back(ids);
      rec.dropped.push_back(dropped);
      const std::size_t exchanged = slimmable_exchange_params(global, n);
      rec.downloaded_params += exchanged;
      if (!dropped && n > 0) {
        rec.uploaded_params += exchanged;
        task_clients.push_back(k);
        affordable.push_back(n);
        tally.add(clients[k].domain, static_cast<double>(exchanged) / static_cast<double>(total_params));
      }
    }

    std::vector<SlimmableModel> locals(task_clients.size());
    std::vector<fed::LocalStats> stats(task_clients.size());
    fed::run_tasks(
        task_clients.size(), cfg.threads,
        [&](std::size_t i) {
          const auto k = task_clients[i];
          SlimmableModel local = global;
          sheterofl_local_train(local, clients[k].train, clients[k].present_classes, clients[k].budget, cfg.local,
                                rec.lr, derive_seed(cfg.seed, {0x7a5c, t, k, 0}), &stats[i]);
          locals[i] = std::move(local);
        },
        hooks.task_order);

    std::vector<SlimmableUpdate> updates;
    double loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < locals.size(); ++i) {
      updates.push_back({&locals[i], affordable[i], static_cast<double>(clients[task_clients[i]].train.size())});
      loss += stats[i].loss_sum;
      steps += stats[i].steps;
    }
    rec.coverage = sheterofl_aggregate(global, updates, true);
    rec.coverage.resize(W, 0.0);
    rec.train_loss = steps ? loss / static_cast<double>(steps) : 0.0;
    if (cfg.eval_every && ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds))
      rec.val = evaluate_slimmable(global, clients, fed::Split::val, fed::eval_options(mode, false), cfg.eval_batch);
    if (hooks.on_round) hooks.on_round(rec);
    result.rounds.push_back(std::move(rec));
  }

  const bool post = mode == nn::BnMode::post_average;
  if (post) {
    std::vector<const nn::Tensor*> xs;
    for (const auto& c : clients) xs.push_back(&c.train.x);
    for (std::size_t j = 0; j < W; ++j)
      nn::post_average_bn(global.load(j), xs, cfg.local.batch_size, cfg.post_average_passes,
                          derive_seed(cfg.seed, {0x9057, j}));
  }
  result.final_table =
      evaluate_slimmable(global, clients, fed::Split::test, fed::eval_options(mode, post), cfg.eval_batch);
  result.domain_params = tally.result();
  if (trained) *trained = std::move(global);
  return result;
}

}  // namespace splitmix::baselines
