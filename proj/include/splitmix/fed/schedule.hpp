#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "splitmix/error.hpp"

namespace splitmix::fed {

enum class LrKind { constant, step_decay, cosine };

inline LrKind parse_lr_kind(const std::string& s) {
  if (s == "constant") return LrKind::constant;
  if (s == "step" || s == "step_decay") return LrKind::step_decay;
  if (s == "cosine") return LrKind::cosine;
  throw ConfigError("schedule.lr_schedule", "unknown schedule '" + s + "'");
}

inline std::string to_string(LrKind k) {
  switch (k) {
    case LrKind::constant: return "constant";
    case LrKind::step_decay: return "step_decay";
    case LrKind::cosine: return "cosine";
  }
  return "?";
}

struct LrSchedule {
  LrKind kind = LrKind::constant;
  double lr = 0.01;
  // step_decay: multiply by `gamma` once the round reaches each milestone.
  std::vector<std::size_t> milestones;
  double gamma = 0.1;
  std::size_t total_rounds = 1;  // cosine horizon

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("schedule.lr", "learning rate must be positive");
    if (!(gamma > 0.0)) throw ConfigError("schedule.gamma", "must be positive");
  }

  // `round` is 0-based. Cosine decays towards zero but stays positive:
  // the last round uses lr * (1 + cos(pi * (T-1)/T)) / 2.
  double at(std::size_t round) const {
    switch (kind) {
      case LrKind::constant: return lr;
      case LrKind::step_decay: {
        double v = lr;
        for (auto m : milestones)
          if (round >= m) v *= gamma;
        return v;
      }
      case LrKind::cosine: {
        const double T = static_cast<double>(std::max<std::size_t>(total_rounds, 1));
        return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(round) / T));
      }
    }
    return lr;
  }
};

}  // namespace splitmix::fed
