#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::ensemble {

// Budget-constrained base sampler. A shuffled permutation P of the base ids
// is walked by a cursor; every request takes the cursor element plus n-1
// others drawn uniformly without replacement from the rest of P. The
// permutation is reshuffled once the cursor runs off its end.
class BaseSampler {
 public:
  BaseSampler() = default;
  BaseSampler(std::size_t num_bases, std::uint64_t seed) : rng_(seed), perm_(num_bases) {
    if (num_bases == 0) throw ConfigError("splitmix.r", "need at least one base model");
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    std::shuffle(perm_.begin(), perm_.end(), rng_);
  }

  std::size_t num_bases() const { return perm_.size(); }
  const std::vector<std::size_t>& permutation() const { return perm_; }
  // 0-based; equals num_bases() when the walk is exhausted.
  std::size_t cursor() const { return cursor_; }

  // Returns the cursor-selected id first, then the uniform picks.
  std::vector<std::size_t> sample(std::size_t n) {
    const std::size_t M = perm_.size();
    if (n == 0 || n > M)
      throw ProtocolError("sampler: requested " + std::to_string(n) + " of " + std::to_string(M) + " bases");
    if (cursor_ >= M) {
      std::shuffle(perm_.begin(), perm_.end(), rng_);
      cursor_ = 0;
    }
    std::vector<std::size_t> rest;
    rest.reserve(M - 1);
    for (std::size_t i = 0; i < M; ++i)
      if (i != cursor_) rest.push_back(perm_[i]);
    std::vector<std::size_t> out{perm_[cursor_]};
    for (std::size_t j = 0; j + 1 < n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, rest.size() - 1);
      std::swap(rest[j], rest[pick(rng_)]);
      out.push_back(rest[j]);
    }
    ++cursor_;
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

}  // namespace splitmix::ensemble
