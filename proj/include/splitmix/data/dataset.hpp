#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/tensor.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::data {

using nn::Shape;
using nn::Tensor;

struct LabeledDataset {
  Tensor x;  // (N, sample shape...)
  std::vector<int> y;
  std::size_t num_classes = 0;
  int domain = -1;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }

  Shape sample_shape() const {
    if (x.rank() == 0) return {};
    return Shape(x.shape().begin() + 1, x.shape().end());
  }

  std::set<int> classes() const { return {y.begin(), y.end()}; }

  LabeledDataset subset(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.x = nn::gather_rows(x, idx);
    out.y.reserve(idx.size());
    for (auto i : idx) out.y.push_back(y.at(i));
    out.num_classes = num_classes;
    out.domain = domain;
    return out;
  }

  // Checks count agreement, label range and the [0,1] value range.
  void validate(const std::string& what = "dataset") const {
    if (x.rank() == 0 || x.dim(0) != y.size())
      throw DataError(what + ": " + std::to_string(y.size()) + " labels for samples of shape " +
                      nn::shape_str(x.shape()));
    for (int label : y)
      if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
        throw DataError(what + ": label " + std::to_string(label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    for (double v : x.values())
      if (!(v >= 0.0 && v <= 1.0)) throw DataError(what + ": value " + std::to_string(v) + " outside [0,1]");
  }
};

// Stacks datasets with identical sample shapes; domain is kept only if shared.
inline LabeledDataset concat(const std::vector<const LabeledDataset*>& parts) {
  LabeledDataset out;
  std::size_t n = 0;
  Shape sample;
  bool first = true;
  for (const auto* p : parts) {
    if (p->empty()) continue;
    if (first) {
      sample = p->sample_shape();
      out.domain = p->domain;
      first = false;
    } else {
      if (p->sample_shape() != sample) throw DimensionError("concat: sample shapes differ");
      if (p->domain != out.domain) out.domain = -1;
    }
    out.num_classes = std::max(out.num_classes, p->num_classes);
    n += p->size();
  }
  Shape shape{n};
  shape.insert(shape.end(), sample.begin(), sample.end());
  out.x = Tensor(shape);
  std::size_t off = 0;
  for (const auto* p : parts) {
    if (p->empty()) continue;
    std::copy(p->x.values().begin(), p->x.values().end(), out.x.data() + off);
    off += p->x.size();
    out.y.insert(out.y.end(), p->y.begin(), p->y.end());
  }
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace splitmix::data
