#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "splitmix/nn/model.hpp"

namespace splitmix::nn {

// Forward pass in chunks of `batch` rows; logits are concatenated in order.
inline Tensor predict(Model& model, const Tensor& x, const ForwardOptions& opt, std::size_t batch = 256) {
  const std::size_t n = x.rank() ? x.dim(0) : 0;
  Tensor out({n, model.num_classes()});
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    idx.resize(e - b);
    std::iota(idx.begin(), idx.end(), b);
    const Tensor z = model.forward(gather_rows(x, idx), opt);
    std::copy(z.values().begin(), z.values().end(), out.data() + b * model.num_classes());
  }
  return out;
}

}  // namespace splitmix::nn
