#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/width.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::fed {

using nn::WidthRatio;

enum class BudgetKind { exponential_groups, more_sufficient, step_increase, log_normal, explicit_list };

inline BudgetKind parse_budget_kind(const std::string& s) {
  if (s == "exponential_groups") return BudgetKind::exponential_groups;
  if (s == "more_sufficient") return BudgetKind::more_sufficient;
  if (s == "step_increase") return BudgetKind::step_increase;
  if (s == "log_normal") return BudgetKind::log_normal;
  if (s == "explicit") return BudgetKind::explicit_list;
  throw ConfigError("budgets.kind", "unknown budget distribution '" + s + "'");
}

inline std::string to_string(BudgetKind k) {
  switch (k) {
    case BudgetKind::exponential_groups: return "exponential_groups";
    case BudgetKind::more_sufficient: return "more_sufficient";
    case BudgetKind::step_increase: return "step_increase";
    case BudgetKind::log_normal: return "log_normal";
    case BudgetKind::explicit_list: return "explicit";
  }
  return "?";
}

struct BudgetConfig {
  BudgetKind kind = BudgetKind::exponential_groups;
  std::size_t groups = 4;
  // exponential_groups: group g (1-based) gets (1/2)^(g-1); with
  // `formula_reading` it gets (1/2)^g instead.
  bool formula_reading = false;
  std::vector<double> group_widths{1.0, 1.0, 0.5, 0.25};  // more_sufficient
  double step = 0.25;                                      // step_increase
  double median = 0.45;                                    // log_normal
  double sigma = 0.5;
  double bin = 0.125;
  std::vector<double> widths;  // explicit: cycled over clients
};

// Largest multiple of `atom` not above `v`, clamped to [atom, 1].
inline WidthRatio quantize_budget(double v, const WidthRatio& atom) {
  const long M = atom.den() / atom.num();
  long j = static_cast<long>(std::floor(v * static_cast<double>(M) + 1e-9));
  j = std::clamp(j, 1L, M);
  return WidthRatio::of_atoms(j, M);
}

// Raw (unquantized) budget of each client, clients in id order.
inline std::vector<double> raw_budgets(std::size_t K, const BudgetConfig& cfg, std::uint64_t seed) {
  if (K == 0) throw ConfigError("partitioner.clients", "need at least one client");
  std::vector<double> out(K);
  const auto group_of = [&](std::size_t k) {  // ceil(G * k / K) for 1-based k
    return (cfg.groups * (k + 1) + K - 1) / K;
  };
  switch (cfg.kind) {
    case BudgetKind::exponential_groups:
      for (std::size_t k = 0; k < K; ++k) {
        const auto g = static_cast<double>(group_of(k));
        out[k] = std::pow(0.5, cfg.formula_reading ? g : g - 1.0);
      }
      break;
    case BudgetKind::more_sufficient:
      if (cfg.group_widths.empty()) throw ConfigError("budgets.group_widths", "need at least one group");
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t G = cfg.group_widths.size();
        out[k] = cfg.group_widths[(G * (k + 1) + K - 1) / K - 1];
      }
      break;
    case BudgetKind::step_increase: {
      if (!(cfg.step > 0.0 && cfg.step <= 1.0)) throw ConfigError("budgets.step", "must be in (0, 1]");
      const auto G = static_cast<std::size_t>(std::llround(1.0 / cfg.step));
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t g = (G * (k + 1) + K - 1) / K;
        out[k] = 1.0 - static_cast<double>(g - 1) * cfg.step;
      }
      break;
    }
    case BudgetKind::log_normal: {
      if (!(cfg.median > 0.0) || !(cfg.sigma >= 0.0) || !(cfg.bin > 0.0))
        throw ConfigError("budgets", "log_normal needs median > 0, sigma >= 0, bin > 0");
      Rng rng(derive_seed(seed, {0xb0d6e7}));
      std::lognormal_distribution<double> dist(std::log(cfg.median), cfg.sigma);
      for (auto& v : out) v = std::floor(dist(rng) / cfg.bin) * cfg.bin;
      break;
    }
    case BudgetKind::explicit_list:
      if (cfg.widths.empty()) throw ConfigError("budgets.widths", "explicit budgets need a width list");
      for (std::size_t k = 0; k < K; ++k) out[k] = cfg.widths[k % cfg.widths.size()];
      break;
  }
  return out;
}

inline std::vector<WidthRatio> assign_budgets(std::size_t K, const BudgetConfig& cfg, const WidthRatio& atom,
                                              std::uint64_t seed) {
  std::vector<WidthRatio> out;
  for (double v : raw_budgets(K, cfg, seed)) out.push_back(quantize_budget(v, atom));
  return out;
}

}  // namespace splitmix::fed
