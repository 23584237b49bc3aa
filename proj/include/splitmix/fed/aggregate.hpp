#pragma once

#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn.hpp"

namespace splitmix::fed {

// Sample-count-weighted sums of client copies, one slot per base:
//   w_i = sum_k |D_k| w_i^k / c_i,  c_i = sum_k |D_k|.
// Slots with c_i = 0 leave the base untouched when finalized.
class AggregationAccumulator {
 public:
  explicit AggregationAccumulator(std::size_t slots)
      : params_(slots), buffers_(slots), weight_(slots, 0.0), count_(slots, 0) {}

  std::size_t slots() const { return weight_.size(); }
  double weight(std::size_t i) const { return weight_.at(i); }
  const std::vector<double>& weights() const { return weight_; }

  void add(std::size_t i, const nn::Model& model, double w) {
    if (!(w > 0.0)) throw ProtocolError("aggregation weight must be positive");
    // A lone contribution is kept unscaled so that it is copied back exactly.
    if (count_.at(i) == 1) {
      scale(params_[i], weight_[i]);
      scale(buffers_[i], weight_[i]);
    }
    const double f = count_[i] == 0 ? 1.0 : w;
    accumulate(params_[i], nn::flat_params(model), f);
    accumulate(buffers_[i], nn::flat_buffers(model), f);
    weight_[i] += w;
    ++count_[i];
  }

  // Writes averaged parameters into `target` if slot i received updates;
  // buffers are averaged only with `with_buffers`. Returns whether it wrote.
  bool finalize(std::size_t i, nn::Model& target, bool with_buffers = true) const {
    if (weight_.at(i) <= 0.0) return false;
    const double w = count_[i] == 1 ? 1.0 : weight_[i];
    write(params_[i], w, target.parameters());
    if (with_buffers) {
      std::size_t off = 0;
      for (auto* b : target.buffers()) {
        if (off + b->size() > buffers_[i].size()) throw DimensionError("aggregation: buffer layout mismatch");
        for (std::size_t k = 0; k < b->size(); ++k) (*b)[k] = buffers_[i][off + k] / w;
        off += b->size();
      }
    }
    return true;
  }

 private:
  static void accumulate(std::vector<double>& acc, const std::vector<double>& v, double w) {
    if (acc.empty()) acc.assign(v.size(), 0.0);
    if (acc.size() != v.size()) throw DimensionError("aggregation: parameter layout mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) acc[k] += w * v[k];
  }

  static void scale(std::vector<double>& v, double w) {
    for (auto& x : v) x *= w;
  }

  static void write(const std::vector<double>& acc, double w, const std::vector<nn::Parameter*>& params) {
    std::size_t off = 0;
    for (auto* p : params) {
      if (off + p->value.size() > acc.size()) throw DimensionError("aggregation: parameter layout mismatch");
      for (std::size_t k = 0; k < p->value.size(); ++k) p->value[k] = acc[off + k] / w;
      off += p->value.size();
    }
  }

  std::vector<std::vector<double>> params_, buffers_;
  std::vector<double> weight_;
  std::vector<std::size_t> count_;
};

}  // namespace splitmix::fed
