#pragma once

#include <string>
#include <vector>

#include "splitmix/baselines/fedavg.hpp"
#include "splitmix/baselines/sheterofl.hpp"
#include "splitmix/bench/config.hpp"
#include "splitmix/data.hpp"
#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/fed/budget.hpp"
#include "splitmix/fed/splitmix.hpp"

namespace splitmix::bench {

// Seed streams derived from the experiment seed.
inline std::uint64_t data_seed(const ExperimentConfig& c) { return derive_seed(c.seed, {0xda7a}); }
inline std::uint64_t partition_seed(const ExperimentConfig& c) { return derive_seed(c.seed, {0x9a97}); }
inline std::uint64_t budget_seed(const ExperimentConfig& c) { return derive_seed(c.seed, {0xb0d9}); }
inline std::uint64_t split_seed(const ExperimentConfig& c) { return derive_seed(c.seed, {0x5b11}); }
inline std::uint64_t init_seed(const ExperimentConfig& c) { return derive_seed(c.seed, {0x1417}); }

inline std::vector<data::LabeledDataset> load_domains(const ExperimentConfig& c) {
  if (c.dataset.source == "synthetic") {
    auto s = c.dataset.synth;
    s.seed = data_seed(c);
    return data::synth_multidomain(s).domains;
  }
  auto ds = data::load_dataset(c.dataset.file);
  if (ds.sample_shape() != c.architecture.input_shape)
    throw ConfigError("architecture.input", "architecture expects " + nn::shape_str(c.architecture.input_shape) +
                                                " but " + c.dataset.file.path + " holds " +
                                                nn::shape_str(ds.sample_shape()));
  if (ds.num_classes > c.architecture.num_classes)
    throw ConfigError("architecture.classes", "dataset has " + std::to_string(ds.num_classes) + " classes");
  ds.domain = 0;
  return {std::move(ds)};
}

// Clients in id order with their splits and budgets.
inline std::vector<fed::ClientData> build_clients(const ExperimentConfig& c) {
  const auto domains = load_domains(c);
  const auto& p = c.partitioner;
  std::vector<data::Shard> shards;
  if (p.kind == data::PartitionKind::feature_noniid) {
    auto per = p.clients_per_domain.empty() ? data::clients_per_domain(p.clients, domains.size()) : p.clients_per_domain;
    shards = data::feature_noniid_partition(domains, per, partition_seed(c));
  } else {
    std::vector<const data::LabeledDataset*> parts;
    for (const auto& d : domains) parts.push_back(&d);
    const auto all = data::concat(parts);
    shards = p.kind == data::PartitionKind::iid
                 ? data::iid_partition(all, p.clients, partition_seed(c))
                 : data::class_noniid_partition(all, p.clients, p.classes_per_client, partition_seed(c));
  }
  const auto budgets = fed::assign_budgets(shards.size(), c.budgets, c.atom(), budget_seed(c));
  return fed::make_clients(shards, budgets, p.val_fraction, p.test_fraction, split_seed(c));
}

inline fed::FedConfig fed_config(const ExperimentConfig& c) {
  const auto& s = c.schedule;
  fed::FedConfig f;
  f.rounds = s.rounds;
  f.local.epochs = s.epochs;
  f.local.batch_size = s.batch_size;
  f.local.sgd.momentum = s.momentum;
  f.local.sgd.weight_decay = s.weight_decay;
  f.local.masked_loss = s.masked_loss;
  f.lr = s.lr;
  f.participants = s.participants;
  f.dropout = s.dropout;
  f.eval_every = s.eval_every;
  f.eval_batch = s.eval_batch;
  f.threads = c.threads;
  f.post_average_passes = s.post_average_passes;
  f.seed = c.seed;
  return f;
}

inline fed::RobustConfig robust_config(const ExperimentConfig& c) {
  const auto& r = c.robustness;
  fed::RobustConfig out;
  out.enabled = r.enabled;
  out.attack.epsilon = r.epsilon;
  out.attack.steps = r.steps;
  out.attack.step_size = r.step_size;
  out.attack.random_start = r.random_start;
  out.lambda_grid = r.lambda_grid;
  out.lambda_n = r.lambda_n;
  return out;
}

inline nn::BuildOptions build_options(const ExperimentConfig& c) {
  nn::BuildOptions b;
  b.bn_mode = c.bn.mode;
  b.rescale_layer = c.bn.rescale_layer;
  b.init = c.bn.init;
  b.dual_bn = c.robustness.enabled;
  b.seed = init_seed(c);
  return b;
}

inline ensemble::BaseModelSet initial_bases(const ExperimentConfig& c) {
  return ensemble::build_base_models(c.architecture, c.num_bases(), init_seed(c), build_options(c));
}

struct ExperimentResult {
  std::vector<fed::RunResult> runs;  // Split-Mix first, then the baseline if any
  ensemble::BaseModelSet bases;      // trained Split-Mix bases
  std::vector<fed::ClientData> clients;
};

inline ExperimentResult run_experiment(const ExperimentConfig& c, const fed::RunHooks& hooks = {}) {
  ExperimentResult out;
  out.clients = build_clients(c);
  const auto cfg = fed_config(c);
  const auto robust = robust_config(c);
  fed::SplitMixOptions opt;
  opt.sort_bases = c.sort;
  out.runs.push_back(fed::run_splitmix(initial_bases(c), out.clients, cfg, opt, robust, hooks, &out.bases));

  const auto widths = out.bases.widths();
  auto build = build_options(c);
  build.dual_bn = false;
  if (c.baseline.method == "sheterofl") {
    out.runs.push_back(
        baselines::run_sheterofl(baselines::build_slimmable(c.architecture, widths, build), out.clients, cfg, hooks));
  } else if (c.baseline.method == "fedavg_individual") {
    baselines::FedAvgOptions fo;
    fo.enforce_budget = c.baseline.enforce_budget;
    out.runs.push_back(
        baselines::fedavg_individual_widths(c.architecture, build, widths, out.clients, cfg, fo, robust, hooks));
  }
  return out;
}

}  // namespace splitmix::bench
