#pragma once

#include <map>
#include <random>
#include <vector>

#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/ensemble/sampler.hpp"
#include "splitmix/error.hpp"
#include "splitmix/fed/aggregate.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/fed/evaluate.hpp"
#include "splitmix/fed/records.hpp"
#include "splitmix/fed/schedule.hpp"
#include "splitmix/fed/tasks.hpp"
#include "splitmix/nn.hpp"
#include "splitmix/robust/sweep.hpp"
#include "splitmix/robust/training.hpp"

namespace splitmix::fed {

struct RobustConfig {
  bool enabled = false;
  robust::AttackConfig attack;
  std::vector<double> lambda_grid{0.0, 0.2, 0.5, 0.8, 1.0};
  double lambda_n = 0.5;  // FedAvg+AT baseline only; dual-BN training fixes 1/2
};

struct FedConfig {
  std::size_t rounds = 50;
  LocalTrainConfig local;
  LrSchedule lr;
  std::size_t participants = 0;  // per round; 0 means every client
  double dropout = 0.0;          // probability a contacted client fails to report
  std::size_t eval_every = 1;    // 0 disables per-round validation
  std::size_t eval_batch = 128;
  std::size_t threads = 1;
  std::size_t post_average_passes = 20;
  std::uint64_t seed = 0;
};

struct RunHooks {
  TaskOrderHook task_order;
  // Called after every round with the record just produced.
  std::function<void(const RoundRecord&)> on_round;
};

// Forward options for validation/test: running statistics where the BN mode
// keeps them, minibatch statistics otherwise.
inline nn::ForwardOptions eval_options(nn::BnMode mode, bool post_averaged = false) {
  nn::ForwardOptions opt;
  opt.phase = nn::Phase::eval;
  opt.update_stats = false;
  if (mode == nn::BnMode::post_average && !post_averaged) opt.phase = nn::Phase::train;
  return opt;
}

// Split-Mix server: base set, sampler and client-held BN statistics.
class SplitMixServer {
 public:
  SplitMixServer(ensemble::BaseModelSet set, const FedConfig& cfg, const RobustConfig& robust = {})
      : set_(std::move(set)),
        cfg_(cfg),
        robust_(robust),
        sampler_(set_.size(), derive_seed(cfg.seed, {0x5a3b1e})),
        participation_rng_(derive_seed(cfg.seed, {0x9a271c})) {
    if (robust_.enabled && !set_.build.dual_bn)
      throw ConfigError("robustness.enabled", "robust Split-Mix needs dual-BN base models");
    if (robust_.enabled) robust_.attack.validate();
  }

  ensemble::BaseModelSet& bases() { return set_; }
  const ensemble::BaseModelSet& bases() const { return set_; }
  const ensemble::BaseSampler& sampler() const { return sampler_; }
  bool locally_tracked() const { return set_.build.bn_mode == nn::BnMode::locally_tracked; }

  // Loads client k's own statistics for base `id`, if it has trained it.
  void apply_client_stats(std::size_t id, std::size_t k, nn::Model& m) const {
    const auto it = client_stats_.find({k, id});
    if (it == client_stats_.end()) return;
    auto bufs = m.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i] = it->second[i];
  }

  ensemble::EvalHook eval_hook() const {
    if (!locally_tracked()) return {};
    return [this](std::size_t id, std::size_t k, nn::Model& m) { apply_client_stats(id, k, m); };
  }

  // One communication round (0-based `t`).
  RoundRecord run_round(std::size_t t, const std::vector<ClientData>& clients, const TaskOrderHook& order = {}) {
    const std::size_t K = clients.size();
    const std::size_t M = set_.size();
    RoundRecord rec;
    rec.round = t + 1;
    rec.lr = cfg_.lr.at(t);
    if (cfg_.participants == 0 || cfg_.participants >= K) {
      rec.participants.resize(K);
      std::iota(rec.participants.begin(), rec.participants.end(), std::size_t{0});
    } else {
      rec.participants = select_participants(K, cfg_.participants, participation_rng_);
    }
    std::bernoulli_distribution drop(cfg_.dropout);

    struct Task {
      std::size_t client, base;
    };
    std::vector<Task> tasks;
    const std::size_t per_base = set_.base_params();
    for (auto k : rec.participants) {
      const auto& c = clients[k];
      const std::size_t n = std::min(budget_cap(c.budget, set_.atom()), M);
      auto ids = sampler_.sample(n);
      check_budget(ids.size(), c, set_.atom());
      const bool dropped = cfg_.dropout > 0.0 && drop(participation_rng_);
      rec.dropped.push_back(dropped);
      rec.downloaded_params += ids.size() * per_base;
      if (!dropped) {
        rec.uploaded_params += ids.size() * per_base;
        for (auto id : ids) tasks.push_back({k, id});
        tally_.add(c.domain, static_cast<double>(ids.size()) / static_cast<double>(M));
      }
      std::sort(ids.begin(), ids.end());
      rec.assignments.push_back(std::move(ids));
    }

    const auto objective = robust_.enabled ? robust::dbn_objective(robust_.attack) : BatchObjective(ce_objective);
    std::vector<nn::Model> results(tasks.size());
    std::vector<LocalStats> stats(tasks.size());
    run_tasks(
        tasks.size(), cfg_.threads,
        [&](std::size_t i) {
          const auto [k, id] = tasks[i];
          nn::Model local = set_.bases[id];
          if (locally_tracked()) apply_client_stats(id, k, local);
          stats[i] = local_train(local, clients[k].train, clients[k].present_classes, cfg_.local, rec.lr,
                                 derive_seed(cfg_.seed, {0x7a5c, t, k, id}), objective);
          results[i] = std::move(local);
        },
        order);

    AggregationAccumulator acc(M);
    double loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const auto [k, id] = tasks[i];
      acc.add(id, results[i], static_cast<double>(clients[k].train.size()));
      if (locally_tracked()) {
        std::vector<nn::Tensor> bufs;
        for (const auto* b : std::as_const(results[i]).buffers()) bufs.push_back(*b);
        client_stats_[{k, id}] = std::move(bufs);
      }
      loss += stats[i].loss_sum;
      steps += stats[i].steps;
    }
    for (std::size_t id = 0; id < M; ++id) acc.finalize(id, set_.bases[id], !locally_tracked());
    rec.coverage = acc.weights();
    rec.train_loss = steps ? loss / static_cast<double>(steps) : 0.0;
    return rec;
  }

  std::vector<WidthEval> evaluate(const std::vector<ClientData>& clients, Split split, bool post_averaged) {
    const auto opt = eval_options(set_.build.bn_mode, post_averaged);
    const auto acc = prefix_accuracies(set_, clients, split, opt, cfg_.eval_batch, eval_hook());
    std::vector<WidthEval> out;
    const auto widths = set_.widths();
    for (std::size_t j = 0; j < widths.size(); ++j)
      out.push_back({widths[j], acc[j], ensemble::mixture_macs(set_, widths[j]),
                     ensemble::mixture_params(set_, widths[j])});
    return out;
  }

  std::vector<DomainShare> domain_shares() const { return tally_.result(); }

 private:
  ensemble::BaseModelSet set_;
  FedConfig cfg_;
  RobustConfig robust_;
  ensemble::BaseSampler sampler_;
  Rng participation_rng_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<nn::Tensor>> client_stats_;
  DomainShareTally tally_;
};

struct SplitMixOptions {
  bool sort_bases = false;
};

// Re-estimates BN statistics of every base over all clients' training data.
inline void post_average_all(ensemble::BaseModelSet& set, const std::vector<ClientData>& clients,
                             const FedConfig& cfg) {
  std::vector<const nn::Tensor*> xs;
  for (const auto& c : clients) xs.push_back(&c.train.x);
  for (std::size_t i = 0; i < set.size(); ++i)
    nn::post_average_bn(set.bases[i], xs, cfg.local.batch_size, cfg.post_average_passes,
                        derive_seed(cfg.seed, {0x9057, i}));
}

inline RunResult run_splitmix(ensemble::BaseModelSet initial, const std::vector<ClientData>& clients,
                              const FedConfig& cfg, const SplitMixOptions& opt = {}, const RobustConfig& robust = {},
                              const RunHooks& hooks = {}, ensemble::BaseModelSet* trained = nullptr) {
  if (clients.empty()) throw ConfigError("partitioner.clients", "no clients");
  for (const auto& c : clients)
    if (c.train.empty()) throw DataError("client " + std::to_string(c.id) + " has no training data");
  if (robust.enabled && initial.build.bn_mode == nn::BnMode::post_average)
    throw ConfigError("bn.mode", "post_average statistics are not supported with dual-BN robustness training");
  cfg.lr.validate();
  SplitMixServer server(std::move(initial), cfg, robust);
  RunResult result;
  result.method = "splitmix";
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    auto rec = server.run_round(t, clients, hooks.task_order);
    if (cfg.eval_every && ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds))
      rec.val = server.evaluate(clients, Split::val, false);
    if (hooks.on_round) hooks.on_round(rec);
    result.rounds.push_back(std::move(rec));
  }
  auto& set = server.bases();
  const bool post = set.build.bn_mode == nn::BnMode::post_average;
  if (post) post_average_all(set, clients, cfg);
  if (opt.sort_bases) {
    std::vector<const data::LabeledDataset*> val;
    for (const auto& c : clients) val.push_back(&c.val);
    ensemble::sort_bases_by_val_acc(set, val, eval_options(set.build.bn_mode, post), cfg.eval_batch,
                                    server.eval_hook());
  }
  result.final_table = server.evaluate(clients, Split::test, post);
  if (robust.enabled)
    result.tradeoff = robust::tradeoff_sweep(set, set.widths(), robust.lambda_grid, clients, Split::test,
                                             robust.attack, derive_seed(cfg.seed, {0xe7a1}), nn::Phase::eval,
                                             cfg.eval_batch, server.eval_hook());
  result.domain_params = server.domain_shares();
  if (trained) *trained = server.bases();
  return result;
}

}  // namespace splitmix::fed
