#pragma once

#include <vector>

#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/fed/evaluate.hpp"
#include "splitmix/fed/records.hpp"
#include "splitmix/robust/training.hpp"

namespace splitmix::robust {

// (SA, RA) of the prefix mixture for width R at mixing weight lambda,
// averaged per client and then across clients.
inline SaRa client_mean_ra_sa(ensemble::BaseModelSet& set, const nn::WidthRatio& R,
                              const std::vector<fed::ClientData>& clients, fed::Split split,
                              const AttackConfig& attack, double lambda, std::uint64_t seed,
                              nn::Phase phase = nn::Phase::eval, std::size_t batch = 256,
                              const ensemble::EvalHook& hook = {}) {
  const auto ids = set.members(R);
  SaRa mean;
  std::size_t counted = 0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& ds = fed::split_of(clients[k], split);
    if (ds.empty()) continue;
    std::vector<nn::Model> scratch;
    scratch.reserve(ids.size());
    for (auto id : ids) {
      scratch.push_back(set.bases[id]);
      if (hook) hook(id, k, scratch.back());
    }
    std::vector<nn::Model*> members;
    for (auto& m : scratch) members.push_back(&m);
    Rng rng(derive_seed(seed, {0xa77ac, k}));
    const auto r = evaluate_ra_sa(members, ds, attack, lambda, rng, batch, phase);
    mean.sa += r.sa;
    mean.ra += r.ra;
    ++counted;
  }
  if (counted) {
    mean.sa /= static_cast<double>(counted);
    mean.ra /= static_cast<double>(counted);
  }
  return mean;
}

// One (SA, RA) point per (width, lambda), widths outermost.
inline std::vector<fed::TradeoffPoint> tradeoff_sweep(ensemble::BaseModelSet& set,
                                                      const std::vector<nn::WidthRatio>& widths,
                                                      const std::vector<double>& lambdas,
                                                      const std::vector<fed::ClientData>& clients, fed::Split split,
                                                      const AttackConfig& attack, std::uint64_t seed,
                                                      nn::Phase phase = nn::Phase::eval, std::size_t batch = 256,
                                                      const ensemble::EvalHook& hook = {}) {
  std::vector<fed::TradeoffPoint> out;
  for (const auto& R : widths)
    for (double lambda : lambdas) {
      // Same attack randomness at every grid point.
      const auto r = client_mean_ra_sa(set, R, clients, split, attack, lambda, seed, phase, batch, hook);
      out.push_back({R, lambda, r.sa, r.ra});
    }
  return out;
}

}  // namespace splitmix::robust
