#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/layers.hpp"
#include "splitmix/nn/model.hpp"

namespace splitmix::nn {

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// SGD with heavy-ball momentum and L2 weight decay:
//   d = g + wd * p;  v = mu * v + d;  p = p - lr * v
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

  const SgdConfig& config() const { return cfg_; }
  std::vector<Tensor>& buffers() { return velocity_; }

  void step(const std::vector<Parameter*>& params, double lr) {
    if (!(lr > 0.0)) throw ConfigError("lr", "learning rate must be positive");
    if (velocity_.empty()) {
      for (auto* p : params) velocity_.emplace_back(p->value.shape());
    }
    if (velocity_.size() != params.size()) throw DimensionError("sgd: parameter list changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (!p.grad.all_finite())
        throw NumericError("sgd: non-finite gradient in parameter '" + p.name + "' (#" +
                           std::to_string(i) + ")");
      Tensor& v = velocity_[i];
      if (v.shape() != p.value.shape()) throw DimensionError("sgd: momentum buffer shape mismatch");
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double d = p.grad[k] + cfg_.weight_decay * p.value[k];
        v[k] = cfg_.momentum * v[k] + d;
        p.value[k] -= lr * v[k];
      }
    }
  }

  void step(Model& model, double lr) { step(model.parameters(), lr); }

 private:
  SgdConfig cfg_;
  std::vector<Tensor> velocity_;
};

}  // namespace splitmix::nn
