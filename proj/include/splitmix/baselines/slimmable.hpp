#pragma once

#include <algorithm>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn.hpp"

namespace splitmix::baselines {

using nn::WidthRatio;

namespace detail {

// Calls fn(full_offset, sub_offset) for every coordinate of the leading
// sub-block of a row-major tensor.
template <typename Fn>
void for_each_leading(const nn::Shape& full, const nn::Shape& sub, Fn&& fn) {
  if (full.size() != sub.size()) throw DimensionError("slice: rank mismatch");
  for (std::size_t d = 0; d < full.size(); ++d)
    if (sub[d] > full[d]) throw DimensionError("slice: " + nn::shape_str(sub) + " exceeds " + nn::shape_str(full));
  std::size_t total = 1;
  for (auto s : sub) total *= s;
  if (total == 0) return;
  std::vector<std::size_t> idx(sub.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    std::size_t f = 0;
    for (std::size_t d = 0; d < full.size(); ++d) f = f * full[d] + idx[d];
    fn(f, n);
    for (std::size_t d = sub.size(); d-- > 0;) {
      if (++idx[d] < sub[d]) break;
      idx[d] = 0;
    }
  }
}

inline void read_leading(const nn::Tensor& full, nn::Tensor& sub) {
  for_each_leading(full.shape(), sub.shape(), [&](std::size_t f, std::size_t s) { sub[s] = full[f]; });
}

inline void write_leading(const nn::Tensor& sub, nn::Tensor& full) {
  for_each_leading(full.shape(), sub.shape(), [&](std::size_t f, std::size_t s) { full[f] = sub[s]; });
}

inline std::vector<nn::WidthfulLayer*> widthful(nn::Model& m) {
  std::vector<nn::WidthfulLayer*> out;
  for (std::size_t i = 0; i < m.num_layers(); ++i)
    if (auto* w = dynamic_cast<nn::WidthfulLayer*>(&m.layer(i))) out.push_back(w);
  return out;
}

// Weight and bias tensors of the conv/dense layers, in layer order.
inline std::vector<nn::Parameter*> shared_params(nn::Model& m) {
  std::vector<nn::Parameter*> out;
  for (auto* l : widthful(m)) {
    out.push_back(&l->weight());
    if (auto* b = l->bias()) out.push_back(b);
  }
  return out;
}

inline std::vector<nn::Parameter*> norm_params(nn::Model& m) {
  std::vector<nn::Parameter*> out;
  for (auto* p : m.parameters())
    if (p->norm) out.push_back(p);
  return out;
}

}  // namespace detail

// Slimmable network: conv/dense tensors are stored once at ×1 and every
// prototype width uses their leading channels; each width keeps its own BN.
// nets[j] is the ×widths[j] network, widths ascending, the last one ×1. The
// conv/dense tensors of nets.back() are the shared storage; those of narrower
// nets are scratch copies refreshed by load().
struct SlimmableModel {
  nn::ArchSpec arch;
  nn::BuildOptions build;
  std::vector<WidthRatio> widths;
  std::vector<nn::Model> nets;

  std::size_t size() const { return widths.size(); }
  nn::Model& full() { return nets.back(); }
  const nn::Model& full() const { return nets.back(); }

  std::size_t index_of(const WidthRatio& w) const {
    for (std::size_t j = 0; j < widths.size(); ++j)
      if (widths[j] == w) return j;
    throw ConfigError("baseline.widths", "width " + w.str() + " is not a prototype of this slimmable model");
  }

  // Number of prototypes a client with budget R can train: widths[0..n).
  std::size_t affordable(const WidthRatio& R) const {
    std::size_t n = 0;
    while (n < widths.size() && widths[n] <= R) ++n;
    return n;
  }

  // Copies the leading slices of the shared tensors into nets[j].
  nn::Model& load(std::size_t j) {
    if (j + 1 == nets.size()) return nets[j];
    auto src = detail::shared_params(full());
    auto dst = detail::shared_params(nets.at(j));
    for (std::size_t i = 0; i < src.size(); ++i) detail::read_leading(src[i]->value, dst[i]->value);
    return nets[j];
  }

  // Writes nets[j]'s conv/dense tensors back into the shared storage.
  void store(std::size_t j) {
    if (j + 1 == nets.size()) return;
    auto src = detail::shared_params(nets.at(j));
    auto dst = detail::shared_params(full());
    for (std::size_t i = 0; i < src.size(); ++i) detail::write_leading(src[i]->value, dst[i]->value);
  }

  // Unique trainable coordinates: shared tensors plus every width's BN.
  std::size_t count_params() {
    std::size_t n = 0;
    for (auto* p : detail::shared_params(full())) n += p->value.size();
    for (auto& net : nets)
      for (auto* p : detail::norm_params(net)) n += p->value.size();
    return n;
  }
};

// `widths` need not be sorted; ×1 is appended when missing.
inline SlimmableModel build_slimmable(const nn::ArchSpec& arch, std::vector<WidthRatio> widths,
                                      const nn::BuildOptions& build = {}) {
  if (build.dual_bn) throw ConfigError("baseline", "slimmable baselines do not support dual BN");
  std::sort(widths.begin(), widths.end());
  widths.erase(std::unique(widths.begin(), widths.end()), widths.end());
  if (widths.empty() || !widths.back().is_full()) widths.push_back(WidthRatio(1, 1));
  SlimmableModel m;
  m.arch = arch;
  m.build = build;
  m.widths = widths;
  for (const auto& w : widths) {
    nn::BuildOptions b = build;
    b.width = w;
    m.nets.push_back(nn::build_model(arch, b));
  }
  for (std::size_t j = 0; j + 1 < m.size(); ++j) m.load(j);
  return m;
}

// The ×w prototype with its slice of the shared tensors loaded; writes go
// through to the shared tensors via SlimmableModel::store.
inline nn::Model& slice_subnet(SlimmableModel& model, const WidthRatio& w) { return model.load(model.index_of(w)); }

}  // namespace splitmix::baselines
