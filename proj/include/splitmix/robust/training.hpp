#pragma once

#include <set>
#include <vector>

#include "splitmix/data/dataset.hpp"
#include "splitmix/error.hpp"
#include "splitmix/fed/client.hpp"
#include "splitmix/nn.hpp"
#include "splitmix/robust/attack.hpp"

namespace splitmix::robust {

// Adversarially augmented loss on one batch:
//   (1 - lambda_n) CE(f(x), y) + lambda_n CE(f(x + delta), y)
// Gradients accumulate into the model's parameters. Terms with zero weight
// are skipped entirely.
inline double at_loss(nn::Model& model, const fed::Batch& b, double lambda_n, const AttackConfig& attack, Rng& rng,
                      const std::set<int>& present = {}) {
  if (!(lambda_n >= 0.0 && lambda_n <= 1.0)) throw ConfigError("robustness.lambda_n", "must be in [0,1]");
  nn::ForwardOptions opt;
  opt.phase = nn::Phase::train;
  double loss = 0.0;
  if (lambda_n < 1.0) {
    auto clean = nn::masked_cross_entropy(model.forward(b.x, opt), b.y, present);
    for (auto& g : clean.grad.values()) g *= 1.0 - lambda_n;
    model.backward(clean.grad);
    loss += (1.0 - lambda_n) * clean.loss;
  }
  if (lambda_n > 0.0) {
    const nn::Tensor adv = pgd_attack(model, b.x, b.y, attack, opt, rng, present);
    auto noisy = nn::masked_cross_entropy(model.forward(adv, opt), b.y, present);
    for (auto& g : noisy.grad.values()) g *= lambda_n;
    model.backward(noisy.grad);
    loss += lambda_n * noisy.loss;
  }
  return loss;
}

inline fed::BatchObjective at_objective(double lambda_n, AttackConfig attack) {
  return [lambda_n, attack](nn::Model& m, const fed::Batch& b, const std::set<int>& present, Rng& rng) {
    return at_loss(m, b, lambda_n, attack, rng, present);
  };
}

// Dual-BN step: the clean batch runs through the clean branch, adversarial
// examples are crafted and evaluated through the noised branch, and the loss
// is the mean of the two.
inline double dbn_loss(nn::Model& model, const fed::Batch& b, const AttackConfig& attack, Rng& rng,
                       const std::set<int>& present = {}) {
  if (!model.has_dual_bn()) throw ConfigError("robustness", "dual-BN training needs a model with DualBN layers");
  nn::ForwardOptions clean_opt;
  clean_opt.phase = nn::Phase::train;
  clean_opt.route = nn::BnRoute::clean;
  auto clean = nn::masked_cross_entropy(model.forward(b.x, clean_opt), b.y, present);
  for (auto& g : clean.grad.values()) g *= 0.5;
  model.backward(clean.grad);

  nn::ForwardOptions noised_opt = clean_opt;
  noised_opt.route = nn::BnRoute::noised;
  const nn::Tensor adv = pgd_attack(model, b.x, b.y, attack, noised_opt, rng, present);
  auto noisy = nn::masked_cross_entropy(model.forward(adv, noised_opt), b.y, present);
  for (auto& g : noisy.grad.values()) g *= 0.5;
  model.backward(noisy.grad);
  return 0.5 * (clean.loss + noisy.loss);
}

inline fed::BatchObjective dbn_objective(AttackConfig attack) {
  return [attack](nn::Model& m, const fed::Batch& b, const std::set<int>& present, Rng& rng) {
    return dbn_loss(m, b, attack, rng, present);
  };
}

inline fed::LocalStats local_train_dbn(nn::Model& model, const data::LabeledDataset& train,
                                       const std::set<int>& present, const fed::LocalTrainConfig& cfg, double lr,
                                       std::uint64_t seed, const AttackConfig& attack) {
  if (!model.has_dual_bn()) throw ConfigError("robustness", "dual-BN training needs a model with DualBN layers");
  return fed::local_train(model, train, present, cfg, lr, seed, dbn_objective(attack));
}

struct SaRa {
  double sa = 0.0;
  double ra = 0.0;
};

// Clean and robust accuracy of the lambda-mixed mixture on one dataset. The
// attack targets the same lambda-mixed mixture. `phase` selects the BN
// statistics used at test time.
inline SaRa evaluate_ra_sa(const std::vector<nn::Model*>& members, const data::LabeledDataset& test,
                           const AttackConfig& attack, double lambda, Rng& rng, std::size_t batch = 256,
                           nn::Phase phase = nn::Phase::eval) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("robustness.lambda_grid", "lambda must be in [0,1]");
  SaRa out;
  if (test.empty()) return out;
  nn::ForwardOptions opt;
  opt.phase = phase;
  opt.update_stats = false;
  const bool dual = members.at(0)->has_dual_bn();
  opt.route = dual ? nn::BnRoute::mixed : nn::BnRoute::clean;
  opt.lambda = lambda;
  std::size_t clean_ok = 0, robust_ok = 0;
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < test.size(); s += batch) {
    const std::size_t e = std::min(test.size(), s + batch);
    idx.resize(e - s);
    std::iota(idx.begin(), idx.end(), s);
    const nn::Tensor x = nn::gather_rows(test.x, idx);
    const std::span<const int> y(test.y.data() + s, e - s);
    nn::Tensor mean;
    for (auto* m : members) {
      const nn::Tensor z = m->forward(x, opt);
      if (mean.empty()) mean = z;
      else
        for (std::size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
    }
    clean_ok += nn::count_correct(mean, y);
    const nn::Tensor adv = pgd_attack(members, x, y, attack, opt, rng);
    mean = nn::Tensor();
    for (auto* m : members) {
      const nn::Tensor z = m->forward(adv, opt);
      if (mean.empty()) mean = z;
      else
        for (std::size_t i = 0; i < z.size(); ++i) mean[i] += z[i];
    }
    robust_ok += nn::count_correct(mean, y);
  }
  out.sa = static_cast<double>(clean_ok) / static_cast<double>(test.size());
  out.ra = static_cast<double>(robust_ok) / static_cast<double>(test.size());
  return out;
}

}  // namespace splitmix::robust
