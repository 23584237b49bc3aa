#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "splitmix/data/dataset.hpp"
#include "splitmix/error.hpp"
#include "splitmix/nn.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::ensemble {

using nn::WidthRatio;

// M independently initialized ×(1/M) networks. Base ids are stable for the
// life of the set; `order` is the prefix order used when mixing (identity
// until sorted).
struct BaseModelSet {
  nn::ArchSpec arch;
  nn::BuildOptions build;  // build.width is the atom width 1/M
  std::vector<nn::Model> bases;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> order;
  std::vector<double> val_acc;  // per base id, filled by sorting

  std::size_t size() const { return bases.size(); }
  WidthRatio atom() const { return build.width; }

  // K_R = floor(R / r).
  std::size_t atoms_for(const WidthRatio& R) const {
    const long k = (R.num() * static_cast<long>(size())) / R.den();
    if (k < 1)
      throw ConfigError("width", "width " + R.str() + " is narrower than one base (" + atom().str() + ")");
    return static_cast<std::size_t>(std::min<long>(k, static_cast<long>(size())));
  }

  std::vector<std::size_t> members(const WidthRatio& R) const {
    const auto k = atoms_for(R);
    return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)};
  }

  // Widths r, 2r, ..., 1.
  std::vector<WidthRatio> widths() const {
    std::vector<WidthRatio> out;
    for (std::size_t j = 1; j <= size(); ++j) out.push_back(WidthRatio::of_atoms(static_cast<long>(j), static_cast<long>(size())));
    return out;
  }

  std::size_t base_params() const { return bases.at(0).count_params(); }
  std::size_t base_macs() const { return bases.at(0).count_macs(); }
};

inline std::uint64_t base_seed(std::uint64_t master_seed, std::size_t i) {
  return derive_seed(master_seed, {0xba5e, i});
}

// `num_bases` = 1/r. Other fields of `build` (BN mode, DBN, init) apply to
// every base; its width is overwritten.
inline BaseModelSet build_base_models(const nn::ArchSpec& arch, std::size_t num_bases,
                                      std::uint64_t master_seed, nn::BuildOptions build = {}) {
  if (num_bases == 0) throw ConfigError("splitmix.r", "1/r must be a positive integer");
  BaseModelSet set;
  set.arch = arch;
  build.width = WidthRatio(1, static_cast<long>(num_bases));
  set.build = build;
  for (std::size_t i = 0; i < num_bases; ++i) {
    nn::BuildOptions b = build;
    b.seed = base_seed(master_seed, i);
    set.seeds.push_back(b.seed);
    set.bases.push_back(nn::build_model(arch, b));
  }
  set.order.resize(num_bases);
  std::iota(set.order.begin(), set.order.end(), std::size_t{0});
  return set;
}

// Mean of the members' logits.
inline nn::Tensor mix_logits(const std::vector<nn::Model*>& members, const nn::Tensor& x,
                             const nn::ForwardOptions& opt, std::size_t batch = 256) {
  if (members.empty()) throw ConfigError("width", "mixture has no members");
  nn::Tensor out = nn::predict(*members[0], x, opt, batch);
  for (std::size_t m = 1; m < members.size(); ++m) {
    const nn::Tensor z = nn::predict(*members[m], x, opt, batch);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += z[i];
  }
  if (members.size() > 1) {
    const double inv = 1.0 / static_cast<double>(members.size());
    for (auto& v : out.values()) v *= inv;
  }
  return out;
}

inline nn::Tensor mix_predict(BaseModelSet& set, const std::vector<std::size_t>& member_ids,
                              const nn::Tensor& x, const nn::ForwardOptions& opt, std::size_t batch = 256) {
  std::vector<nn::Model*> members;
  for (auto id : member_ids) members.push_back(&set.bases.at(id));
  return mix_logits(members, x, opt, batch);
}

inline std::size_t mixture_macs(const BaseModelSet& set, const WidthRatio& R) {
  return set.atoms_for(R) * set.base_macs();
}
inline std::size_t mixture_params(const BaseModelSet& set, const WidthRatio& R) {
  return set.atoms_for(R) * set.base_params();
}

// Adjusts a scratch copy of base `base` before it is evaluated on shard
// `shard` (e.g. to load client-held BN statistics).
using EvalHook = std::function<void(std::size_t base, std::size_t shard, nn::Model&)>;

// Per-base validation accuracy (sample-weighted over all shards); the mixing
// order becomes descending accuracy, ties kept in id order.
inline void sort_bases_by_val_acc(BaseModelSet& set, const std::vector<const data::LabeledDataset*>& val,
                                  const nn::ForwardOptions& opt, std::size_t batch = 256,
                                  const EvalHook& hook = {}) {
  std::size_t total = 0;
  for (const auto* v : val) total += v->size();
  if (total == 0) throw Error("sort_bases_by_val_acc: validation data is empty");
  set.val_acc.assign(set.size(), 0.0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::size_t correct = 0;
    for (std::size_t k = 0; k < val.size(); ++k) {
      if (val[k]->empty()) continue;
      nn::Model scratch = set.bases[i];
      if (hook) hook(i, k, scratch);
      correct += nn::count_correct(nn::predict(scratch, val[k]->x, opt, batch), val[k]->y);
    }
    set.val_acc[i] = static_cast<double>(correct) / static_cast<double>(total);
  }
  std::vector<std::size_t> ids(set.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::stable_sort(ids.begin(), ids.end(), [&](auto a, auto b) { return set.val_acc[a] > set.val_acc[b]; });
  set.order = ids;
}

}  // namespace splitmix::ensemble
