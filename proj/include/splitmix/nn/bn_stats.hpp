#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/layers.hpp"
#include "splitmix/nn/model.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::nn {

// Re-estimates BN running statistics of a model trained with minibatch
// statistics: runs `passes` shuffled passes over `inputs` in training phase
// and sets every running mean/var to the average of the per-batch
// statistics. Weights are untouched.
inline void post_average_bn(Model& model, const std::vector<const Tensor*>& datasets,
                            std::size_t batch_size, std::size_t passes = 20,
                            std::uint64_t seed = 0, BnRoute route = BnRoute::clean) {
  std::size_t total = 0;
  for (const auto* d : datasets) total += d->empty() ? 0 : d->dim(0);
  if (total == 0) throw Error("post_average_bn: empty dataset");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  model.for_each_bn([](BatchNorm& bn) { bn.begin_stat_estimation(); });
  ForwardOptions opt;
  opt.phase = Phase::train;
  opt.route = route;
  opt.update_stats = false;
  opt.accumulate_stats = true;
  Rng rng(seed);
  for (std::size_t pass = 0; pass < passes; ++pass) {
    for (const auto* d : datasets) {
      if (d->empty() || d->dim(0) == 0) continue;
      std::vector<std::size_t> order(d->dim(0));
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (passes > 1) std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < order.size(); b += batch_size) {
        const std::size_t e = std::min(order.size(), b + batch_size);
        const std::span<const std::size_t> idx(order.data() + b, e - b);
        model.forward(gather_rows(*d, idx), opt);
      }
    }
  }
  // Only the routed branch saw data; leave the other branch as it was.
  model.for_each_bn([](BatchNorm& bn) {
    if (bn.collected_batches() > 0) bn.finish_stat_estimation();
  });
}

}  // namespace splitmix::nn
