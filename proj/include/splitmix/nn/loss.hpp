#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <span>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/tensor.hpp"

namespace splitmix::nn {

struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor grad;        // dL/dlogits
};

// Cross-entropy whose softmax runs over `present` classes only. Absent-class
// logits take no part in the normalizer and receive zero gradient. An empty
// `present` set means every class is present.
inline LossResult masked_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                       const std::set<int>& present = {}) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross-entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<unsigned char> mask(c, present.empty() ? 1 : 0);
  for (int k : present) {
    if (k < 0 || static_cast<std::size_t>(k) >= c) throw DimensionError("present class out of range");
    mask[static_cast<std::size_t>(k)] = 1;
  }
  LossResult out{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
  for (std::size_t b = 0; b < n; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= c || !mask[static_cast<std::size_t>(y)])
      throw Error("cross-entropy: label " + std::to_string(y) + " not among present classes");
    const double* z = logits.data() + b * c;
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k)
      if (mask[k]) zmax = std::max(zmax, z[k]);
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k)
      if (mask[k]) denom += std::exp(z[k] - zmax);
    const double log_denom = std::log(denom) + zmax;
    out.loss += (log_denom - z[y]) * inv_n;
    double* g = out.grad.data() + b * c;
    for (std::size_t k = 0; k < c; ++k) {
      if (!mask[k]) continue;
      g[k] = std::exp(z[k] - log_denom) * inv_n;
    }
    g[y] -= inv_n;
  }
  return out;
}

inline LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return masked_cross_entropy(logits, labels, {});
}

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  const double* z = logits.data() + row * c;
  return static_cast<std::size_t>(std::max_element(z, z + c) - z);
}

inline std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  std::size_t ok = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (argmax_row(logits, b) == static_cast<std::size_t>(labels[b])) ++ok;
  return ok;
}

}  // namespace splitmix::nn
