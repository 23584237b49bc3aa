#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "splitmix/data/dataset.hpp"
#include "splitmix/error.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::data {

enum class PartitionKind { iid, class_noniid, feature_noniid };

inline PartitionKind parse_partition_kind(const std::string& s) {
  if (s == "iid") return PartitionKind::iid;
  if (s == "class_noniid") return PartitionKind::class_noniid;
  if (s == "feature_noniid") return PartitionKind::feature_noniid;
  throw ConfigError("partitioner.kind", "unknown partition kind '" + s + "'");
}

inline std::string to_string(PartitionKind k) {
  switch (k) {
    case PartitionKind::iid: return "iid";
    case PartitionKind::class_noniid: return "class_noniid";
    case PartitionKind::feature_noniid: return "feature_noniid";
  }
  return "?";
}

// One client's slice of a source dataset.
struct Shard {
  LabeledDataset data;
  std::vector<std::size_t> source_indices;  // rows of the source it was cut from
  std::set<int> present_classes;
};

namespace detail {

inline Shard make_shard(const LabeledDataset& src, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  Shard s;
  s.data = src.subset(idx);
  s.present_classes = s.data.classes();
  s.source_indices = std::move(idx);
  return s;
}

// Sizes of `parts` near-equal chunks of n, larger chunks first.
inline std::vector<std::size_t> even_split(std::size_t n, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, n / parts);
  for (std::size_t i = 0; i < n % parts; ++i) ++sizes[i];
  return sizes;
}

}  // namespace detail

inline std::vector<Shard> iid_partition(const LabeledDataset& ds, std::size_t K, std::uint64_t seed) {
  if (K == 0) throw ConfigError("partitioner.clients", "need at least one client");
  if (ds.size() < K) throw DataError("iid partition: fewer samples than clients");
  Rng rng(derive_seed(seed, {0x11d}));
  const auto order = shuffled_indices(ds.size(), rng);
  std::vector<Shard> out;
  std::size_t off = 0;
  for (auto sz : detail::even_split(ds.size(), K)) {
    out.push_back(detail::make_shard(ds, {order.begin() + off, order.begin() + off + sz}));
    off += sz;
  }
  return out;
}

// Client k holds classes perm[(k * cpc + j) mod C] for j < cpc, where perm is a
// seeded class shuffle. Each class's samples are dealt evenly among its holders.
inline std::vector<Shard> class_noniid_partition(const LabeledDataset& ds, std::size_t K,
                                                 std::size_t classes_per_client, std::uint64_t seed) {
  const std::size_t C = ds.num_classes;
  if (K == 0) throw ConfigError("partitioner.clients", "need at least one client");
  if (classes_per_client == 0 || classes_per_client > C)
    throw ConfigError("partitioner.classes_per_client",
                      "must be in [1, " + std::to_string(C) + "], got " + std::to_string(classes_per_client));
  if (K * classes_per_client < C)
    throw ConfigError("partitioner.classes_per_client",
                      std::to_string(K) + " clients x " + std::to_string(classes_per_client) +
                          " classes cannot cover " + std::to_string(C) + " classes");

  Rng rng(derive_seed(seed, {0xc1a55}));
  std::vector<std::size_t> perm(C);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::vector<std::size_t>> holders(C);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < classes_per_client; ++j) holders[perm[(k * classes_per_client + j) % C]].push_back(k);

  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.y[i])].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(K);
  for (std::size_t c = 0; c < C; ++c) {
    auto& pool = by_class[c];
    const auto& h = holders[c];
    if (pool.size() < h.size())
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                      " samples for " + std::to_string(h.size()) + " holding clients");
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t off = 0;
    const auto sizes = detail::even_split(pool.size(), h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      assigned[h[i]].insert(assigned[h[i]].end(), pool.begin() + off, pool.begin() + off + sizes[i]);
      off += sizes[i];
    }
  }
  std::vector<Shard> out;
  for (auto& a : assigned) out.push_back(detail::make_shard(ds, std::move(a)));
  return out;
}

// Splits K clients over D domains as evenly as possible (earlier domains get
// the remainder).
inline std::vector<std::size_t> clients_per_domain(std::size_t K, std::size_t D) {
  if (D == 0 || K < D) throw ConfigError("partitioner.clients", "need at least one client per domain");
  return detail::even_split(K, D);
}

// Each domain is split iid among its clients; shards keep the domain id and
// are ordered domain by domain.
inline std::vector<Shard> feature_noniid_partition(const std::vector<LabeledDataset>& domains,
                                                   const std::vector<std::size_t>& per_domain,
                                                   std::uint64_t seed) {
  if (domains.empty()) throw ConfigError("dataset.domains", "need at least one domain");
  if (per_domain.size() != domains.size())
    throw ConfigError("partitioner.clients_per_domain", "one count per domain required");
  std::vector<Shard> out;
  for (std::size_t j = 0; j < domains.size(); ++j) {
    auto shards = iid_partition(domains[j], per_domain[j], derive_seed(seed, {0xfea7, j}));
    for (auto& s : shards) {
      s.data.domain = static_cast<int>(j);
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Per-client split into train / validation / test. Validation takes the last
// `val_frac` of a seeded shuffle, test the `test_frac` before it.
struct ClientSplit {
  LabeledDataset train, val, test;
};

inline ClientSplit split_shard(const LabeledDataset& ds, double val_frac, double test_frac,
                               std::uint64_t seed) {
  if (val_frac < 0 || test_frac < 0 || val_frac + test_frac >= 1.0)
    throw ConfigError("partitioner", "validation and test fractions must leave training data");
  Rng rng(derive_seed(seed, {0x5b117}));
  const auto order = shuffled_indices(ds.size(), rng);
  const std::size_t n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::floor(test_frac * static_cast<double>(n)));
  const std::size_t n_train = n - n_val - n_test;
  if (n_train == 0) throw DataError("client shard too small to split");
  const std::span<const std::size_t> all(order);
  ClientSplit s;
  s.train = ds.subset(all.subspan(0, n_train));
  s.test = ds.subset(all.subspan(n_train, n_test));
  s.val = ds.subset(all.subspan(n_train + n_test, n_val));
  return s;
}

}  // namespace splitmix::data
