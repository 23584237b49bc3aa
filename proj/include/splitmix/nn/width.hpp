#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <numeric>
#include <string>

#include "splitmix/error.hpp"

namespace splitmix::nn {

// Width ratio relative to the ×1 architecture, kept as an exact fraction so
// channel arithmetic never goes through floating point.
class WidthRatio {
 public:
  constexpr WidthRatio() = default;
  WidthRatio(long num, long den) : num_(num), den_(den) {
    if (den_ <= 0 || num_ <= 0 || num_ > den_)
      throw ConfigError("width", "width ratio must lie in (0, 1], got " + std::to_string(num) +
                                     "/" + std::to_string(den));
    const long g = std::gcd(num_, den_);
    num_ /= g;
    den_ /= g;
  }

  // Width j·(1/atoms) for an atom count (number of base models).
  static WidthRatio of_atoms(long j, long atoms) { return WidthRatio(j, atoms); }

  // Converts a real ratio that must be a multiple of 1/max_den.
  static WidthRatio from_double(double r, long max_den = 1024) {
    for (long den = 1; den <= max_den; ++den) {
      const double num = r * static_cast<double>(den);
      const long rounded = std::lround(num);
      if (std::abs(num - static_cast<double>(rounded)) < 1e-9 && rounded > 0)
        return WidthRatio(rounded, den);
    }
    throw ConfigError("width", "width " + std::to_string(r) + " is not a simple fraction");
  }

  long num() const noexcept { return num_; }
  long den() const noexcept { return den_; }
  double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
  bool is_full() const noexcept { return num_ == den_; }

  // Channels of a hidden layer with `full` channels at ×1. Throws when not integral.
  std::size_t scale(std::size_t full, const std::string& where = {}) const {
    const auto prod = static_cast<long long>(full) * num_;
    if (prod % den_ != 0 || prod / den_ < 1)
      throw ConfigError(where, std::to_string(full) + " channels are not divisible at width " +
                                   str());
    return static_cast<std::size_t>(prod / den_);
  }

  // Number of whole atoms of width `atom` that fit in this width (floor).
  long atoms_of(const WidthRatio& atom) const {
    return (num_ * atom.den_) / (den_ * atom.num_);
  }

  std::string str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
  }

  friend bool operator==(const WidthRatio& a, const WidthRatio& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend std::strong_ordering operator<=>(const WidthRatio& a, const WidthRatio& b) {
    return static_cast<long long>(a.num_) * b.den_ <=> static_cast<long long>(b.num_) * a.den_;
  }

 private:
  long num_ = 1;
  long den_ = 1;
};

}  // namespace splitmix::nn
