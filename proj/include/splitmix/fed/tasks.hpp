#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <numeric>
#include <thread>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::fed {

// Uniform m-of-K subset without replacement, returned in ascending id order.
inline std::vector<std::size_t> select_participants(std::size_t K, std::size_t m, Rng& rng) {
  if (m == 0 || m > K)
    throw ConfigError("schedule.participants", "must be in [1, " + std::to_string(K) + "], got " + std::to_string(m));
  std::vector<std::size_t> ids(K);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t j = 0; j < m; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, K - 1);
    std::swap(ids[j], ids[pick(rng)]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Test hook: reorders task execution (e.g. a permutation) without changing
// which slot each result lands in.
using TaskOrderHook = std::function<void(std::vector<std::size_t>& order)>;

// Runs fn(i) for i in [0, n) on up to `threads` workers. Tasks must write only
// to their own slot. The first failure (lowest task index) is rethrown after
// all workers stop.
inline void run_tasks(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn,
                      const TaskOrderHook& reorder = {}) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (reorder) reorder(order);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t j = next++; j < n; j = next++) {
      try {
        fn(order[j]);
      } catch (...) {
        errors[order[j]] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace splitmix::fed
