#pragma once

#include <vector>

#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/nn.hpp"

namespace splitmix::fed {

enum class Split { val, test };

inline const data::LabeledDataset& split_of(const ClientData& c, Split s) { return s == Split::val ? c.val : c.test; }

// Accuracy of every prefix mixture of the set's order (sizes 1..M), each
// averaged over clients with a non-empty split.
inline std::vector<double> prefix_accuracies(ensemble::BaseModelSet& set, const std::vector<ClientData>& clients,
                                             Split split, const nn::ForwardOptions& opt, std::size_t batch,
                                             const ensemble::EvalHook& hook = {}) {
  const std::size_t M = set.size();
  std::vector<double> acc(M, 0.0);
  std::size_t counted = 0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    const auto& ds = split_of(clients[k], split);
    if (ds.empty()) continue;
    ++counted;
    nn::Tensor sum;
    for (std::size_t j = 0; j < M; ++j) {
      const std::size_t id = set.order[j];
      nn::Tensor z;
      if (hook) {
        nn::Model scratch = set.bases[id];
        hook(id, k, scratch);
        z = nn::predict(scratch, ds.x, opt, batch);
      } else {
        z = nn::predict(set.bases[id], ds.x, opt, batch);
      }
      if (j == 0) sum = z;
      else
        for (std::size_t i = 0; i < z.size(); ++i) sum[i] += z[i];
      acc[j] += static_cast<double>(nn::count_correct(sum, ds.y)) / static_cast<double>(ds.size());
    }
  }
  if (counted)
    for (auto& a : acc) a /= static_cast<double>(counted);
  return acc;
}

inline double client_mean_accuracy(nn::Model& model, const std::vector<ClientData>& clients, Split split,
                                   const nn::ForwardOptions& opt, std::size_t batch) {
  double acc = 0.0;
  std::size_t counted = 0;
  for (const auto& c : clients) {
    const auto& ds = split_of(c, split);
    if (ds.empty()) continue;
    ++counted;
    acc += static_cast<double>(nn::count_correct(nn::predict(model, ds.x, opt, batch), ds.y)) /
           static_cast<double>(ds.size());
  }
  return counted ? acc / static_cast<double>(counted) : 0.0;
}

}  // namespace splitmix::fed
