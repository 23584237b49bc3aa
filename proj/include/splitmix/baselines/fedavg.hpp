#pragma once

#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/fed/aggregate.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/fed/evaluate.hpp"
#include "splitmix/fed/records.hpp"
#include "splitmix/fed/splitmix.hpp"
#include "splitmix/fed/tasks.hpp"
#include "splitmix/nn.hpp"
#include "splitmix/robust/sweep.hpp"
#include "splitmix/robust/training.hpp"

namespace splitmix::baselines {

struct FedAvgOptions {
  // Skip clients whose budget is below the model width. When false they
  // train anyway and every such participation counts as a violation.
  bool enforce_budget = true;
};

// Plain FedAvg of one ×width model. With robustness enabled, clients train
// with the adversarially augmented loss at lambda_n (FedAvg+AT).
inline fed::RunResult fedavg_individual(const nn::ArchSpec& arch, nn::BuildOptions build,
                                        const std::vector<fed::ClientData>& clients, const fed::FedConfig& cfg,
                                        const FedAvgOptions& opt = {}, const fed::RobustConfig& robust = {},
                                        const fed::RunHooks& hooks = {}, nn::Model* trained = nullptr) {
  if (clients.empty()) throw ConfigError("partitioner.clients", "no clients");
  for (const auto& c : clients)
    if (c.train.empty()) throw DataError("client " + std::to_string(c.id) + " has no training data");
  if (robust.enabled) {
    robust.attack.validate();
    if (build.bn_mode == nn::BnMode::post_average)
      throw ConfigError("bn.mode", "post_average statistics are not supported with adversarial training");
  }
  cfg.lr.validate();
  build.dual_bn = false;
  nn::Model global = nn::build_model(arch, build);
  const nn::WidthRatio width = build.width;
  const bool local_stats = build.bn_mode == nn::BnMode::locally_tracked;
  const std::size_t K = clients.size();
  const std::size_t params = global.count_params();
  std::map<std::size_t, std::vector<nn::Tensor>> client_stats;
  const auto with_client_stats = [&](std::size_t k, nn::Model& m) {
    const auto it = client_stats.find(k);
    if (it == client_stats.end()) return;
    auto bufs = m.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i] = it->second[i];
  };
  const auto evaluate = [&](fed::Split split, const nn::ForwardOptions& fo) {
    if (!local_stats) return fed::client_mean_accuracy(global, clients, split, fo, cfg.eval_batch);
    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& ds = fed::split_of(clients[k], split);
      if (ds.empty()) continue;
      nn::Model m = global;
      with_client_stats(k, m);
      acc += static_cast<double>(nn::count_correct(nn::predict(m, ds.x, fo, cfg.eval_batch), ds.y)) /
             static_cast<double>(ds.size());
      ++counted;
    }
    return counted ? acc / static_cast<double>(counted) : 0.0;
  };
  const auto objective = robust.enabled ? robust::at_objective(robust.lambda_n, robust.attack)
                                        : fed::BatchObjective(fed::ce_objective);

  Rng participation_rng(derive_seed(cfg.seed, {0x9a271c}));
  fed::DomainShareTally tally;
  fed::RunResult result;
  result.method = "fedavg_individual";
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
    for (auto k : rec.participants) {
      const bool affordable = width <= clients[k].budget;
      const bool dropped = cfg.dropout > 0.0 && drop(participation_rng);
      const bool trains = affordable || !opt.enforce_budget;
      rec.dropped.push_back(dropped);
      rec.assignments.push_back(trains ? std::vector<std::size_t>{0} : std::vector<std::size_t>{});
      if (!trains) continue;
      if (!affordable) ++rec.budget_violations;
      rec.downloaded_params += params;
      if (dropped) continue;
      rec.uploaded_params += params;
      task_clients.push_back(k);
      tally.add(clients[k].domain, 1.0);
    }

    std::vector<nn::Model> locals(task_clients.size());
    std::vector<fed::LocalStats> stats(task_clients.size());
    fed::run_tasks(
        task_clients.size(), cfg.threads,
        [&](std::size_t i) {
          const auto k = task_clients[i];
          nn::Model local = global;
          if (local_stats) with_client_stats(k, local);
          stats[i] = fed::local_train(local, clients[k].train, clients[k].present_classes, cfg.local, rec.lr,
                                      derive_seed(cfg.seed, {0x7a5c, t, k, 0}), objective);
          locals[i] = std::move(local);
        },
        hooks.task_order);

    fed::AggregationAccumulator acc(1);
    double loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < locals.size(); ++i) {
      const auto k = task_clients[i];
      acc.add(0, locals[i], static_cast<double>(clients[k].train.size()));
      if (local_stats) {
        std::vector<nn::Tensor> bufs;
        for (const auto* b : std::as_const(locals[i]).buffers()) bufs.push_back(*b);
        client_stats[k] = std::move(bufs);
      }
      loss += stats[i].loss_sum;
      steps += stats[i].steps;
    }
    acc.finalize(0, global, !local_stats);
    rec.coverage = acc.weights();
    rec.train_loss = steps ? loss / static_cast<double>(steps) : 0.0;
    if (cfg.eval_every && ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds))
      rec.val = {{width, evaluate(fed::Split::val, fed::eval_options(build.bn_mode, false)), global.count_macs(),
                  params}};
    if (hooks.on_round) hooks.on_round(rec);
    result.rounds.push_back(std::move(rec));
  }

  const bool post = build.bn_mode == nn::BnMode::post_average;
  if (post) {
    std::vector<const nn::Tensor*> xs;
    for (const auto& c : clients) xs.push_back(&c.train.x);
    nn::post_average_bn(global, xs, cfg.local.batch_size, cfg.post_average_passes, derive_seed(cfg.seed, {0x9057, 0}));
  }
  result.final_table = {{width, evaluate(fed::Split::test, fed::eval_options(build.bn_mode, post)),
                         global.count_macs(), params}};
  if (robust.enabled) {
    // Clean-BN model: the mixing weight has no effect, so one point per width.
    ensemble::BaseModelSet single;
    single.arch = arch;
    single.build = build;
    single.bases.push_back(global);
    single.order = {0};
    ensemble::EvalHook hook;
    if (local_stats) hook = [&](std::size_t, std::size_t k, nn::Model& m) { with_client_stats(k, m); };
    const auto r = robust::client_mean_ra_sa(single, nn::WidthRatio(1, 1), clients, fed::Split::test, robust.attack,
                                             0.0, derive_seed(cfg.seed, {0xe7a1}), nn::Phase::eval, cfg.eval_batch,
                                             hook);
    result.tradeoff.push_back({width, 0.0, r.sa, r.ra});
  }
  result.domain_params = tally.result();
  if (trained) *trained = std::move(global);
  return result;
}

// One independently trained FedAvg model per width; rows in width order.
// Participation is identical across widths; initializations differ.
inline fed::RunResult fedavg_individual_widths(const nn::ArchSpec& arch, const nn::BuildOptions& build,
                                               const std::vector<nn::WidthRatio>& widths,
                                               const std::vector<fed::ClientData>& clients, const fed::FedConfig& cfg,
                                               const FedAvgOptions& opt = {}, const fed::RobustConfig& robust = {},
                                               const fed::RunHooks& hooks = {}) {
  fed::RunResult out;
  out.method = "fedavg_individual";
  for (std::size_t j = 0; j < widths.size(); ++j) {
    nn::BuildOptions b = build;
    b.width = widths[j];
    b.seed = derive_seed(build.seed, {0xfeda, j});
    auto r = fedavg_individual(arch, b, clients, cfg, opt, robust, hooks);
    if (out.rounds.empty()) {
      out.rounds = std::move(r.rounds);
    } else {
      for (std::size_t t = 0; t < out.rounds.size(); ++t) {
        auto& a = out.rounds[t];
        const auto& x = r.rounds[t];
        for (std::size_t i = 0; i < x.assignments.size(); ++i)
          if (!x.assignments[i].empty()) a.assignments[i].push_back(j);
        a.coverage.insert(a.coverage.end(), x.coverage.begin(), x.coverage.end());
        a.uploaded_params += x.uploaded_params;
        a.downloaded_params += x.downloaded_params;
        a.budget_violations += x.budget_violations;
        a.train_loss += x.train_loss;
        a.val.insert(a.val.end(), x.val.begin(), x.val.end());
      }
    }
    out.final_table.push_back(r.final_table.at(0));
    out.tradeoff.insert(out.tradeoff.end(), r.tradeoff.begin(), r.tradeoff.end());
  }
  double total = 0.0;
  for (const auto& row : out.final_table) total += static_cast<double>(row.params);
  fed::DomainShareTally tally;
  for (auto& a : out.rounds) {
    a.train_loss /= static_cast<double>(widths.size());
    for (std::size_t i = 0; i < a.participants.size(); ++i) {
      if (a.dropped[i] || a.assignments[i].empty()) continue;
      double trained = 0.0;
      for (auto j : a.assignments[i]) trained += static_cast<double>(out.final_table[j].params);
      tally.add(clients[a.participants[i]].domain, trained / total);
    }
  }
  out.domain_params = tally.result();
  return out;
}

}  // namespace splitmix::baselines
