#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::robust {

struct AttackConfig {
  double epsilon = 8.0 / 255.0;  // l-inf radius
  std::size_t steps = 7;
  double step_size = 2.0 / 255.0;
  bool random_start = true;
  // Sees every (clean, adversarial) pair the attack emits.
  std::function<void(const nn::Tensor& x, const nn::Tensor& adv)> observer;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("robustness.epsilon", "must be non-negative");
    if (!(step_size > 0.0)) throw ConfigError("robustness.step_size", "must be positive");
    if (steps == 0) throw ConfigError("robustness.steps", "need at least one step");
  }
};

// Whether adv lies within eps of x in the l-inf norm and inside [0,1].
inline bool feasible(const nn::Tensor& x, const nn::Tensor& adv, double eps) {
  if (x.shape() != adv.shape()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(adv[i] >= 0.0 && adv[i] <= 1.0)) return false;
    if (!(std::abs(adv[i] - x[i]) <= eps)) return false;
  }
  return true;
}

namespace detail {

// Projects v onto [x - eps, x + eps] ∩ [0, 1] so that |v - x| <= eps holds
// exactly in floating point.
inline double project(double v, double x, double eps) {
  v = std::clamp(v, x - eps, x + eps);
  v = std::clamp(v, 0.0, 1.0);
  while (v - x > eps) v = std::nextafter(v, x);
  while (x - v > eps) v = std::nextafter(v, x);
  return v;
}

}  // namespace detail

// Cross-entropy of the members' mean logits and its gradient w.r.t. the input.
// Parameter gradients are left untouched.
inline double mixture_input_grad(const std::vector<nn::Model*>& members, const nn::Tensor& x,
                                 std::span<const int> y, const nn::ForwardOptions& opt, const std::set<int>& present,
                                 nn::Tensor& grad_x) {
  if (members.empty()) throw ConfigError("width", "mixture has no members");
  nn::Tensor mean;
  for (auto* m : members) {
    const nn::Tensor z = m->forward(x, opt);
    if (mean.empty()) mean = z;
    else
      for (std::size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (auto& v : mean.values()) v *= inv;
  auto res = nn::masked_cross_entropy(mean, y, present);
  for (auto& g : res.grad.values()) g *= inv;
  grad_x = nn::Tensor(x.shape());
  // Re-run each member's forward so its caches match the backward pass.
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (members.size() > 1) members[m]->forward(x, opt);
    const nn::Tensor gx = members[m]->backward(res.grad, false);
    for (std::size_t i = 0; i < gx.size(); ++i) grad_x[i] += gx[i];
  }
  return res.loss;
}

// l-inf PGD with sign steps against the mixture of `members` evaluated under
// `opt` (BN statistics are never updated by the attack).
inline nn::Tensor pgd_attack(const std::vector<nn::Model*>& members, const nn::Tensor& x, std::span<const int> y,
                             const AttackConfig& cfg, nn::ForwardOptions opt, Rng& rng,
                             const std::set<int>& present = {}) {
  cfg.validate();
  opt.update_stats = false;
  opt.accumulate_stats = false;
  nn::Tensor adv = x;
  if (cfg.epsilon == 0.0) {
    if (cfg.observer) cfg.observer(x, adv);
    return adv;
  }
  if (cfg.random_start) {
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = detail::project(x[i] + u(rng), x[i], cfg.epsilon);
  }
  nn::Tensor g;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    mixture_input_grad(members, adv, y, opt, present, g);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double step = g[i] > 0 ? cfg.step_size : (g[i] < 0 ? -cfg.step_size : 0.0);
      adv[i] = detail::project(adv[i] + step, x[i], cfg.epsilon);
    }
  }
  if (!feasible(x, adv, cfg.epsilon)) throw Error("pgd_attack: emitted an infeasible adversarial example");
  if (cfg.observer) cfg.observer(x, adv);
  return adv;
}

inline nn::Tensor pgd_attack(nn::Model& model, const nn::Tensor& x, std::span<const int> y, const AttackConfig& cfg,
                             const nn::ForwardOptions& opt, Rng& rng, const std::set<int>& present = {}) {
  return pgd_attack(std::vector<nn::Model*>{&model}, x, y, cfg, opt, rng, present);
}

}  // namespace splitmix::robust
