#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "splitmix/nn/width.hpp"

namespace splitmix::fed {

struct WidthEval {
  nn::WidthRatio width;
  double acc = 0.0;
  std::size_t macs = 0;
  std::size_t params = 0;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  double lr = 0.0;
  std::vector<std::size_t> participants;
  std::vector<std::vector<std::size_t>> assignments;  // per participant: trained base ids or widths
  std::vector<bool> dropped;                          // per participant
  std::vector<double> coverage;                       // per base: sum of |D_k| aggregated this round
  std::size_t uploaded_params = 0;
  std::size_t downloaded_params = 0;
  std::size_t budget_violations = 0;  // only non-enforcing baselines record any
  double train_loss = 0.0;
  std::vector<WidthEval> val;  // empty on rounds without evaluation
};

struct TradeoffPoint {
  nn::WidthRatio width;
  double lambda = 0.0;
  double sa = 0.0;
  double ra = 0.0;
};

// Share of the method's trainable parameters that clients of a domain train
// locally, averaged over their participations.
struct DomainShare {
  int domain = -1;
  double trained_fraction = 0.0;
  std::size_t participations = 0;
};

struct RunResult {
  std::string method;
  std::vector<RoundRecord> rounds;
  std::vector<WidthEval> final_table;
  std::vector<TradeoffPoint> tradeoff;
  std::vector<DomainShare> domain_params;
};

// Accumulates (domain, fraction) observations into per-domain means.
class DomainShareTally {
 public:
  void add(int domain, double fraction) {
    for (auto& d : shares_)
      if (d.domain == domain) {
        d.trained_fraction += fraction;
        ++d.participations;
        return;
      }
    shares_.push_back({domain, fraction, 1});
  }
  std::vector<DomainShare> result() const {
    auto out = shares_;
    for (auto& d : out) d.trained_fraction /= static_cast<double>(d.participations);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.domain < b.domain; });
    return out;
  }

 private:
  std::vector<DomainShare> shares_;
};

}  // namespace splitmix::fed
