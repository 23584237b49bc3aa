#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/layers.hpp"
#include "splitmix/nn/tensor.hpp"
#include "splitmix/nn/width.hpp"

namespace splitmix::nn {

struct ModelInfo {
  std::string arch_id;
  WidthRatio width;
  std::uint64_t seed = 0;
};

// Ordered stack of layers; f(x; w) with logits of shape (batch, classes).
class Model {
 public:
  Model() = default;
  Model(ModelInfo info, Shape input_shape, std::size_t num_classes,
        std::vector<std::unique_ptr<Layer>> layers)
      : info_(std::move(info)), input_shape_(std::move(input_shape)),
        num_classes_(num_classes), layers_(std::move(layers)) {
    Shape s = input_shape_;
    for (const auto& l : layers_) s = l->output_shape(s);
    if (s.size() != 1 || s[0] != num_classes_)
      throw DimensionError("model output " + shape_str(s) + " does not match " +
                           std::to_string(num_classes_) + " classes");
  }

  Model(const Model& o) : info_(o.info_), input_shape_(o.input_shape_), num_classes_(o.num_classes_) {
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Model& operator=(const Model& o) {
    if (this != &o) {
      Model tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelInfo& info() const { return info_; }
  ModelInfo& info() { return info_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  Tensor forward(const Tensor& x, const ForwardOptions& opt) {
    if (x.rank() != input_shape_.size() + 1 ||
        !std::equal(input_shape_.begin(), input_shape_.end(), x.shape().begin() + 1))
      throw DimensionError("model " + info_.arch_id + " expects samples of shape " +
                           shape_str(input_shape_) + ", got batch " + shape_str(x.shape()));
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, opt);
    return h;
  }

  // Back-propagates dL/dlogits from the most recent forward pass.
  Tensor backward(const Tensor& grad_logits, bool param_grads = true) {
    Tensor g = grad_logits;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, param_grads);
    return g;
  }

  // Parameters in declaration order.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
    return out;
  }
  // Running statistics in declaration order.
  std::vector<Tensor*> buffers() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }
  std::vector<const Tensor*> buffers() const {
    std::vector<const Tensor*> out;
    for (auto* b : const_cast<Model*>(this)->buffers()) out.push_back(b);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.fill(0.0);
  }

  template <typename Fn>
  void for_each_bn(Fn&& fn) {
    for (auto& l : layers_) {
      if (auto* bn = dynamic_cast<BatchNorm*>(l.get())) fn(*bn);
      else if (auto* dbn = dynamic_cast<DualBatchNorm*>(l.get())) {
        fn(dbn->clean());
        fn(dbn->noised());
      }
    }
  }

  bool has_dual_bn() const {
    for (const auto& l : layers_)
      if (dynamic_cast<const DualBatchNorm*>(l.get())) return true;
    return false;
  }

  // Inference-time parameter count (weights, biases, every BN scale/shift).
  std::size_t count_params() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
  }

  // Multiply-accumulates of one inference pass on a single sample.
  std::size_t count_macs() const { return count_macs(input_shape_); }
  std::size_t count_macs(const Shape& sample_shape) const {
    std::size_t n = 0;
    Shape s = sample_shape;
    for (const auto& l : layers_) {
      n += l->macs(s);
      s = l->output_shape(s);
    }
    return n;
  }

 private:
  ModelInfo info_;
  Shape input_shape_;
  std::size_t num_classes_ = 0;
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Flattened copy of all parameter values, declaration order.
inline std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const auto* p : m.parameters()) out.insert(out.end(), p->value.vec().begin(), p->value.vec().end());
  return out;
}

inline std::vector<double> flat_buffers(const Model& m) {
  std::vector<double> out;
  for (const auto* b : m.buffers()) out.insert(out.end(), b->vec().begin(), b->vec().end());
  return out;
}

// Copies parameter values (and optionally buffers) between identically shaped models.
inline void copy_state(const Model& from, Model& to, bool with_buffers = true) {
  auto src = from.parameters();
  auto dst = to.parameters();
  if (src.size() != dst.size()) throw DimensionError("copy_state: parameter lists differ");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->value.shape() != dst[i]->value.shape())
      throw DimensionError("copy_state: shape mismatch at " + src[i]->name);
    dst[i]->value = src[i]->value;
  }
  if (!with_buffers) return;
  auto sb = from.buffers();
  auto db = to.buffers();
  if (sb.size() != db.size()) throw DimensionError("copy_state: buffer lists differ");
  for (std::size_t i = 0; i < sb.size(); ++i) *db[i] = *sb[i];
}

}  // namespace splitmix::nn
