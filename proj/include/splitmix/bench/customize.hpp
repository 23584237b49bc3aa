#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "splitmix/bench/experiment.hpp"
#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/fed/evaluate.hpp"
#include "splitmix/fed/splitmix.hpp"
#include "splitmix/robust/sweep.hpp"

namespace splitmix::bench {

inline std::string valid_widths_str(const ensemble::BaseModelSet& set) {
  std::string s;
  for (const auto& w : set.widths()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", w.value());
    s += (s.empty() ? "" : ", ") + std::string(buf);
  }
  return s;
}

// Maps a requested width onto the set's grid; anything off the grid is rejected.
inline nn::WidthRatio resolve_width(const ensemble::BaseModelSet& set, double width) {
  const double M = static_cast<double>(set.size());
  const double j = width * M;
  const long k = std::lround(j);
  if (!std::isfinite(width) || std::abs(j - static_cast<double>(k)) > 1e-6 || k < 1 || k > static_cast<long>(set.size()))
    throw ConfigError("width", "width " + std::to_string(width) + " is not available; valid widths: " +
                                   valid_widths_str(set));
  return nn::WidthRatio::of_atoms(k, static_cast<long>(set.size()));
}

// Forward options matching how the checkpoint's statistics were produced.
// Client-held statistics are not part of a checkpoint, so those sets fall back
// to minibatch statistics.
inline nn::ForwardOptions checkpoint_eval_options(const ensemble::BaseModelSet& set) {
  auto opt = fed::eval_options(set.build.bn_mode, true);
  if (set.build.bn_mode == nn::BnMode::locally_tracked) opt.phase = nn::Phase::train;
  return opt;
}

struct CustomizeResult {
  nn::WidthRatio width;
  std::optional<double> lambda;
  double acc = 0.0;  // SA when lambda is set
  std::optional<double> ra;
  std::size_t macs = 0, params = 0;
};

// Evaluates the width-R mixture on `clients`' test split (client mean). The
// set itself is not modified.
inline CustomizeResult customize(const ensemble::BaseModelSet& set, double width, std::optional<double> lambda,
                                 const std::vector<fed::ClientData>& clients, const robust::AttackConfig& attack,
                                 std::uint64_t seed, std::size_t batch = 128) {
  CustomizeResult out;
  out.width = resolve_width(set, width);
  out.macs = ensemble::mixture_macs(set, out.width);
  out.params = ensemble::mixture_params(set, out.width);
  ensemble::BaseModelSet scratch = set;
  if (lambda) {
    if (!(*lambda >= 0.0 && *lambda <= 1.0)) throw ConfigError("lambda", "lambda must be in [0, 1]");
    if (!set.build.dual_bn) throw ConfigError("lambda", "checkpoint was trained without dual BN; drop --lambda");
    const auto r = robust::client_mean_ra_sa(scratch, out.width, clients, fed::Split::test, attack, *lambda, seed,
                                             checkpoint_eval_options(set).phase, batch);
    out.lambda = lambda;
    out.acc = r.sa;
    out.ra = r.ra;
    return out;
  }
  const auto acc = fed::prefix_accuracies(scratch, clients, fed::Split::test, checkpoint_eval_options(set), batch);
  out.acc = acc.at(set.atoms_for(out.width) - 1);
  return out;
}

// Wraps a standalone dataset as a single client's test split.
inline std::vector<fed::ClientData> as_test_clients(data::LabeledDataset ds) {
  fed::ClientData c;
  c.domain = ds.domain;
  c.test = std::move(ds);
  std::vector<fed::ClientData> out;
  out.push_back(std::move(c));
  return out;
}

// Trade-off grid over the set's widths for the given lambdas.
inline std::vector<fed::TradeoffPoint> sweep_checkpoint(const ensemble::BaseModelSet& set,
                                                        const std::vector<double>& lambdas,
                                                        const std::vector<fed::ClientData>& clients,
                                                        const robust::AttackConfig& attack, std::uint64_t seed,
                                                        std::size_t batch = 128) {
  if (!set.build.dual_bn) throw ConfigError("robustness.enabled", "checkpoint was trained without dual BN");
  ensemble::BaseModelSet scratch = set;
  return robust::tradeoff_sweep(scratch, set.widths(), lambdas, clients, fed::Split::test, attack, seed,
                                checkpoint_eval_options(set).phase, batch);
}

}  // namespace splitmix::bench
