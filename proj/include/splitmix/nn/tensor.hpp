#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splitmix/error.hpp"

namespace splitmix::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& vec() noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape s) {
    if (shape_size(s) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    shape_ = std::move(s);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Copies rows [begin, end) of the leading (batch) dimension.
inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || end > t.dim(0) || begin > end)
    throw DimensionError("row slice out of range for " + shape_str(t.shape()));
  const std::size_t row = t.size() / std::max<std::size_t>(t.dim(0), 1);
  Shape s = t.shape();
  s[0] = end - begin;
  std::vector<double> d(t.data() + begin * row, t.data() + end * row);
  return Tensor(std::move(s), std::move(d));
}

// Gathers rows by index along the leading dimension.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
  const std::size_t row = t.dim(0) ? t.size() / t.dim(0) : 0;
  Shape s = t.shape();
  s[0] = idx.size();
  std::vector<double> d(idx.size() * row);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= t.dim(0)) throw DimensionError("row index out of range");
    std::copy_n(t.data() + idx[i] * row, row, d.data() + i * row);
  }
  return Tensor(std::move(s), std::move(d));
}

}  // namespace splitmix::nn
