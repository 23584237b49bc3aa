#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/tensor.hpp"

namespace splitmix::nn {

enum class Phase { train, eval };

// Where batch-normalization statistics come from.
//   batch_average:   current minibatch in both phases
//   post_average:    minibatch while training, re-estimated statistics at eval
//   tracked:         EMA during training, running statistics at eval; shared with the server
//   locally_tracked: as tracked, but running statistics never leave the client
enum class BnMode { batch_average, post_average, tracked, locally_tracked };

// Which branch of a dual BN layer a forward pass uses.
enum class BnRoute { clean, noised, mixed };

inline const char* to_string(BnMode m) {
  switch (m) {
    case BnMode::batch_average: return "batch_average";
    case BnMode::post_average: return "post_average";
    case BnMode::tracked: return "tracked";
    case BnMode::locally_tracked: return "locally_tracked";
  }
  return "?";
}

inline BnMode parse_bn_mode(const std::string& s) {
  if (s == "batch_average") return BnMode::batch_average;
  if (s == "post_average") return BnMode::post_average;
  if (s == "tracked") return BnMode::tracked;
  if (s == "locally_tracked") return BnMode::locally_tracked;
  throw ConfigError("bn.mode", "unknown BN mode '" + s + "'");
}

struct ForwardOptions {
  Phase phase = Phase::train;
  BnRoute route = BnRoute::clean;
  double lambda = 0.0;       // DBN mixing weight, used when route == mixed
  bool update_stats = true;  // EMA updates of tracked running statistics
  bool accumulate_stats = false;  // collect batch statistics for post-averaging
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool norm = false;  // BN scale/shift

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_norm = false)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), norm(is_norm) {}
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  // `x` carries the batch as its leading dimension.
  virtual Tensor forward(const Tensor& x, const ForwardOptions& opt) = 0;
  // Accumulates parameter gradients (when `param_grads`) and returns dL/dx.
  virtual Tensor backward(const Tensor& grad_out, bool param_grads) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::vector<Tensor*> buffers() { return {}; }
  // Per-sample shapes, batch dimension excluded.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::size_t macs(const Shape& /*in*/) const { return 0; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

namespace detail {

inline void check_features(const Tensor& x, std::size_t rank, std::size_t channels,
                           const char* who) {
  if (x.rank() != rank || x.dim(1) != channels)
    throw DimensionError(std::string(who) + " expects " + std::to_string(channels) +
                         " features (rank " + std::to_string(rank) + "), got " +
                         shape_str(x.shape()));
}

// Output positions o in [lo, hi) for which o*stride - pad + k lands inside [0, n_in).
inline void valid_range(std::size_t n_in, std::size_t n_out, std::size_t stride, std::size_t pad,
                        std::size_t k, std::size_t& lo, std::size_t& hi) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(k) - static_cast<long>(pad);
  long l = off >= 0 ? 0 : (-off + s - 1) / s;
  long h = (static_cast<long>(n_in) - 1 - off);
  h = h < 0 ? 0 : h / s + 1;
  if (h > static_cast<long>(n_out)) h = static_cast<long>(n_out);
  if (l > h) l = h;
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

}  // namespace detail

// Layers whose weights scale with model width.
class WidthfulLayer : public Layer {
 public:
  // Fan-in of this shard and of the same layer in the ×1 network.
  virtual std::size_t fan_in() const = 0;
  virtual std::size_t fan_in_full() const = 0;
  virtual Parameter& weight() = 0;
  virtual Parameter* bias() = 0;
};

class Dense final : public WidthfulLayer {
 public:
  Dense(std::size_t in, std::size_t out, std::size_t full_in, std::size_t full_out,
        bool with_bias = true)
      : in_(in), out_(out), full_in_(full_in), full_out_(full_out),
        weight_("weight", Tensor({out, in})),
        bias_(with_bias ? Parameter("bias", Tensor({out})) : Parameter()),
        has_bias_(with_bias) {}

  std::string kind() const override { return "dense"; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  std::size_t full_out() const { return full_out_; }
  std::size_t fan_in() const override { return in_; }
  std::size_t fan_in_full() const override { return full_in_; }
  Parameter& weight() override { return weight_; }
  Parameter* bias() override { return has_bias_ ? &bias_ : nullptr; }

  Tensor forward(const Tensor& x, const ForwardOptions&) override {
    detail::check_features(x, 2, in_, "dense");
    input_ = x;
    const std::size_t n = x.dim(0);
    Tensor y({n, out_});
    const double* w = weight_.value.data();
    for (std::size_t b = 0; b < n; ++b) {
      const double* xr = x.data() + b * in_;
      double* yr = y.data() + b * out_;
      for (std::size_t o = 0; o < out_; ++o) {
        const double* wr = w + o * in_;
        double acc = has_bias_ ? bias_.value[o] : 0.0;
        for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * xr[i];
        yr[o] = acc;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g, bool param_grads) override {
    const std::size_t n = input_.dim(0);
    Tensor dx({n, in_});
    const double* w = weight_.value.data();
    for (std::size_t b = 0; b < n; ++b) {
      const double* gr = g.data() + b * out_;
      const double* xr = input_.data() + b * in_;
      double* dxr = dx.data() + b * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        const double* wr = w + o * in_;
        for (std::size_t i = 0; i < in_; ++i) dxr[i] += go * wr[i];
        if (param_grads) {
          double* gw = weight_.grad.data() + o * in_;
          for (std::size_t i = 0; i < in_; ++i) gw[i] += go * xr[i];
          if (has_bias_) bias_.grad[o] += go;
        }
      }
    }
    return dx;
  }

  std::vector<Parameter*> parameters() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 1 || in[0] != in_)
      throw DimensionError("dense expects [" + std::to_string(in_) + "], got " + shape_str(in));
    return {out_};
  }
  std::size_t macs(const Shape&) const override { return in_ * out_; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  std::size_t in_, out_, full_in_, full_out_;
  Parameter weight_, bias_;
  bool has_bias_;
  Tensor input_;
};

// Direct 2-D convolution over (N, C, H, W).
class Conv2d final : public WidthfulLayer {
 public:
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
         std::size_t pad, std::size_t full_in, std::size_t full_out, bool with_bias = true)
      : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad),
        full_in_(full_in), full_out_(full_out),
        weight_("weight", Tensor({out_c, in_c, kernel, kernel})),
        bias_(with_bias ? Parameter("bias", Tensor({out_c})) : Parameter()),
        has_bias_(with_bias) {
    if (stride_ == 0 || k_ == 0) throw ConfigError("conv", "kernel and stride must be positive");
  }

  std::string kind() const override { return "conv"; }
  std::size_t in_channels() const { return in_c_; }
  std::size_t out_channels() const { return out_c_; }
  std::size_t kernel() const { return k_; }
  std::size_t fan_in() const override { return in_c_ * k_ * k_; }
  std::size_t fan_in_full() const override { return full_in_ * k_ * k_; }
  Parameter& weight() override { return weight_; }
  Parameter* bias() override { return has_bias_ ? &bias_ : nullptr; }

  std::size_t out_dim(std::size_t n) const {
    if (n + 2 * pad_ < k_) throw DimensionError("conv input smaller than kernel");
    return (n + 2 * pad_ - k_) / stride_ + 1;
  }

  Tensor forward(const Tensor& x, const ForwardOptions&) override {
    detail::check_features(x, 4, in_c_, "conv");
    input_ = x;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = out_dim(h), ow = out_dim(w);
    Tensor y({n, out_c_, oh, ow});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t co = 0; co < out_c_; ++co) {
        double* yp = y.data() + ((b * out_c_ + co) * oh) * ow;
        if (has_bias_) std::fill_n(yp, oh * ow, bias_.value[co]);
        for (std::size_t ci = 0; ci < in_c_; ++ci) {
          const double* xp = x.data() + ((b * in_c_ + ci) * h) * w;
          const double* wk = weight_.value.data() + ((co * in_c_ + ci) * k_) * k_;
          for (std::size_t kh = 0; kh < k_; ++kh) {
            std::size_t oh_lo, oh_hi;
            detail::valid_range(h, oh, stride_, pad_, kh, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < k_; ++kw) {
              std::size_t ow_lo, ow_hi;
              detail::valid_range(w, ow, stride_, pad_, kw, ow_lo, ow_hi);
              const double wv = wk[kh * k_ + kw];
              for (std::size_t r = oh_lo; r < oh_hi; ++r) {
                const double* xr = xp + (r * stride_ + kh - pad_) * w;
                double* yr = yp + r * ow;
                for (std::size_t c = ow_lo; c < ow_hi; ++c) yr[c] += wv * xr[c * stride_ + kw - pad_];
              }
            }
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& g, bool param_grads) override {
    const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const std::size_t oh = g.dim(2), ow = g.dim(3);
    Tensor dx(input_.shape());
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t co = 0; co < out_c_; ++co) {
        const double* gp = g.data() + ((b * out_c_ + co) * oh) * ow;
        if (param_grads && has_bias_) {
          double s = 0.0;
          for (std::size_t i = 0; i < oh * ow; ++i) s += gp[i];
          bias_.grad[co] += s;
        }
        for (std::size_t ci = 0; ci < in_c_; ++ci) {
          const double* xp = input_.data() + ((b * in_c_ + ci) * h) * w;
          double* dxp = dx.data() + ((b * in_c_ + ci) * h) * w;
          const std::size_t woff = ((co * in_c_ + ci) * k_) * k_;
          for (std::size_t kh = 0; kh < k_; ++kh) {
            std::size_t oh_lo, oh_hi;
            detail::valid_range(h, oh, stride_, pad_, kh, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < k_; ++kw) {
              std::size_t ow_lo, ow_hi;
              detail::valid_range(w, ow, stride_, pad_, kw, ow_lo, ow_hi);
              const double wv = weight_.value[woff + kh * k_ + kw];
              double gw = 0.0;
              for (std::size_t r = oh_lo; r < oh_hi; ++r) {
                const std::size_t ir = (r * stride_ + kh - pad_) * w;
                const double* gr = gp + r * ow;
                for (std::size_t c = ow_lo; c < ow_hi; ++c) {
                  const std::size_t ic = c * stride_ + kw - pad_;
                  dxp[ir + ic] += wv * gr[c];
                  gw += gr[c] * xp[ir + ic];
                }
              }
              if (param_grads) weight_.grad[woff + kh * k_ + kw] += gw;
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<Parameter*> parameters() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3 || in[0] != in_c_)
      throw DimensionError("conv expects [" + std::to_string(in_c_) + ",H,W], got " +
                           shape_str(in));
    return {out_c_, out_dim(in[1]), out_dim(in[2])};
  }
  std::size_t macs(const Shape& in) const override {
    const Shape out = output_shape(in);
    return out[0] * out[1] * out[2] * k_ * k_ * in_c_;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  std::size_t in_c_, out_c_, k_, stride_, pad_, full_in_, full_out_;
  Parameter weight_, bias_;
  bool has_bias_;
  Tensor input_;
};

class ReLU final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, const ForwardOptions&) override {
    Tensor y = x;
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > 0.0) mask_[i] = 1;
      else y[i] = 0.0;
    }
    return y;
  }
  Tensor backward(const Tensor& g, bool) override {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx[i] = 0.0;
    return dx;
  }
  Shape output_shape(const Shape& in) const override { return in; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  std::vector<unsigned char> mask_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride) : k_(kernel), stride_(stride) {
    if (k_ == 0 || stride_ == 0) throw ConfigError("maxpool", "kernel and stride must be positive");
  }
  std::string kind() const override { return "maxpool"; }

  Tensor forward(const Tensor& x, const ForwardOptions&) override {
    if (x.rank() != 4) throw DimensionError("maxpool expects (N,C,H,W), got " + shape_str(x.shape()));
    in_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = (h - k_) / stride_ + 1, ow = (w - k_) / stride_ + 1;
    Tensor y({n, c, oh, ow});
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
      const double* xp = x.data() + p * h * w;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t q = 0; q < ow; ++q, ++o) {
          std::size_t best = (r * stride_) * w + q * stride_;
          for (std::size_t i = 0; i < k_; ++i)
            for (std::size_t j = 0; j < k_; ++j) {
              const std::size_t idx = (r * stride_ + i) * w + q * stride_ + j;
              if (xp[idx] > xp[best]) best = idx;
            }
          y[o] = xp[best];
          argmax_[o] = p * h * w + best;
        }
      }
    }
    return y;
  }
  Tensor backward(const Tensor& g, bool) override {
    Tensor dx(in_shape_);
    for (std::size_t o = 0; o < g.size(); ++o) dx[argmax_[o]] += g[o];
    return dx;
  }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3 || in[1] < k_ || in[2] < k_)
      throw DimensionError("maxpool expects [C,H,W] with H,W >= kernel, got " + shape_str(in));
    return {in[0], (in[1] - k_) / stride_ + 1, (in[2] - k_) / stride_ + 1};
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  std::size_t k_, stride_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x, const ForwardOptions&) override {
    in_shape_ = x.shape();
    Tensor y = x;
    y.reshape({x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
    return y;
  }
  Tensor backward(const Tensor& g, bool) override {
    Tensor dx = g;
    dx.reshape(in_shape_);
    return dx;
  }
  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  Shape in_shape_;
};

// Output rescaling for width-sliced layers: multiplies by `factor` while
// training and is the identity at evaluation.
class Scaler final : public Layer {
 public:
  explicit Scaler(double factor) : factor_(factor) {}
  std::string kind() const override { return "scaler"; }
  double factor() const { return factor_; }
  Tensor forward(const Tensor& x, const ForwardOptions& opt) override {
    active_ = opt.phase == Phase::train;
    Tensor y = x;
    if (active_)
      for (auto& v : y.values()) v *= factor_;
    return y;
  }
  Tensor backward(const Tensor& g, bool) override {
    Tensor dx = g;
    if (active_)
      for (auto& v : dx.values()) v *= factor_;
    return dx;
  }
  Shape output_shape(const Shape& in) const override { return in; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Scaler>(*this); }

 private:
  double factor_;
  bool active_ = false;
};

// Per-channel batch normalization over (N, C) or (N, C, H, W).
class BatchNorm final : public Layer {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm(std::size_t features, BnMode mode)
      : c_(features), mode_(mode),
        gamma_("gamma", Tensor({features}, 1.0), true),
        beta_("beta", Tensor({features}, 0.0), true),
        running_mean_({features}, 0.0), running_var_({features}, 1.0) {}

  std::string kind() const override { return "bn"; }
  std::size_t features() const { return c_; }
  BnMode mode() const { return mode_; }
  void set_mode(BnMode m) { mode_ = m; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }
  std::size_t degenerate_batches() const { return degenerate_batches_; }
  std::size_t collected_batches() const { return acc_count_; }

  bool uses_batch_stats(Phase phase) const {
    return phase == Phase::train || mode_ == BnMode::batch_average;
  }

  Tensor forward(const Tensor& x, const ForwardOptions& opt) override {
    if (x.rank() != 2 && x.rank() != 4)
      throw DimensionError("bn expects (N,C) or (N,C,H,W), got " + shape_str(x.shape()));
    detail::check_features(x, x.rank(), c_, "bn");
    const std::size_t n = x.dim(0);
    const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const std::size_t m = n * spatial;
    batch_stats_ = uses_batch_stats(opt.phase);
    if (batch_stats_ && m == 1) ++degenerate_batches_;

    xhat_ = Tensor(x.shape());
    inv_std_.assign(c_, 0.0);
    Tensor y(x.shape());
    for (std::size_t ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (batch_stats_) {
        double s = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const double* p = x.data() + (b * c_ + ch) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) s += p[i];
        }
        mean = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
          const double* p = x.data() + (b * c_ + ch) * spatial;
          for (std::size_t i = 0; i < spatial; ++i) ss += (p[i] - mean) * (p[i] - mean);
        }
        var = ss / static_cast<double>(m);
        const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
        if (opt.phase == Phase::train && opt.accumulate_stats) {
          acc_mean_[ch] += mean;
          acc_var_[ch] += unbiased;
        } else if (opt.phase == Phase::train && opt.update_stats &&
                   (mode_ == BnMode::tracked || mode_ == BnMode::locally_tracked)) {
          running_mean_[ch] = (1.0 - kMomentum) * running_mean_[ch] + kMomentum * mean;
          running_var_[ch] = (1.0 - kMomentum) * running_var_[ch] + kMomentum * unbiased;
        }
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const double inv = 1.0 / std::sqrt(var + kEpsilon);
      inv_std_[ch] = inv;
      const double g = gamma_.value[ch], be = beta_.value[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c_ + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double xh = (x[off + i] - mean) * inv;
          xhat_[off + i] = xh;
          y[off + i] = g * xh + be;
        }
      }
    }
    if (opt.phase == Phase::train && opt.accumulate_stats && batch_stats_) ++acc_count_;
    return y;
  }

  Tensor backward(const Tensor& g, bool param_grads) override {
    const std::size_t n = xhat_.dim(0);
    const std::size_t spatial = xhat_.rank() == 4 ? xhat_.dim(2) * xhat_.dim(3) : 1;
    const double m = static_cast<double>(n * spatial);
    Tensor dx(xhat_.shape());
    for (std::size_t ch = 0; ch < c_; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c_ + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          sum_g += g[off + i];
          sum_gx += g[off + i] * xhat_[off + i];
        }
      }
      if (param_grads) {
        gamma_.grad[ch] += sum_gx;
        beta_.grad[ch] += sum_g;
      }
      const double gm = gamma_.value[ch], inv = inv_std_[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c_ + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          if (batch_stats_)
            dx[off + i] = gm * inv * (g[off + i] - sum_g / m - xhat_[off + i] * sum_gx / m);
          else
            dx[off + i] = gm * inv * g[off + i];
        }
      }
    }
    return dx;
  }

  void begin_stat_estimation() {
    acc_mean_.assign(c_, 0.0);
    acc_var_.assign(c_, 0.0);
    acc_count_ = 0;
  }
  // Replaces running statistics with the average of the collected batch statistics.
  void finish_stat_estimation() {
    if (acc_count_ == 0) throw Error("bn: no batches collected for statistics estimation");
    for (std::size_t ch = 0; ch < c_; ++ch) {
      running_mean_[ch] = acc_mean_[ch] / static_cast<double>(acc_count_);
      running_var_[ch] = acc_var_[ch] / static_cast<double>(acc_count_);
    }
    acc_count_ = 0;
  }

  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor*> buffers() override { return {&running_mean_, &running_var_}; }
  Shape output_shape(const Shape& in) const override {
    if (in.empty() || in[0] != c_)
      throw DimensionError("bn expects " + std::to_string(c_) + " channels, got " + shape_str(in));
    return in;
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  std::size_t c_;
  BnMode mode_;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  std::vector<double> acc_mean_ = std::vector<double>(c_, 0.0);
  std::vector<double> acc_var_ = std::vector<double>(c_, 0.0);
  std::size_t acc_count_ = 0;
  std::size_t degenerate_batches_ = 0;
  bool batch_stats_ = true;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

// Paired clean/noised BN branches. Training routes each sample stream through
// exactly one branch; inference mixes the branch outputs with weight lambda:
//   DBN(x) = (1 - lambda) BN_c(x) + lambda BN_n(x).
class DualBatchNorm final : public Layer {
 public:
  DualBatchNorm(std::size_t features, BnMode mode) : clean_(features, mode), noised_(features, mode) {
    rename(clean_, "clean.");
    rename(noised_, "noised.");
  }

  std::string kind() const override { return "dbn"; }
  BatchNorm& clean() { return clean_; }
  BatchNorm& noised() { return noised_; }
  std::size_t features() const { return clean_.features(); }

  Tensor forward(const Tensor& x, const ForwardOptions& opt) override {
    route_ = opt.route;
    switch (route_) {
      case BnRoute::clean: return clean_.forward(x, opt);
      case BnRoute::noised: return noised_.forward(x, opt);
      case BnRoute::mixed: break;
    }
    if (!(opt.lambda >= 0.0 && opt.lambda <= 1.0))
      throw ConfigError("lambda", "DBN mixing weight must lie in [0, 1], got " +
                                      std::to_string(opt.lambda));
    lambda_ = opt.lambda;
    Tensor yc = clean_.forward(x, opt);
    Tensor yn = noised_.forward(x, opt);
    for (std::size_t i = 0; i < yc.size(); ++i) yc[i] = (1.0 - lambda_) * yc[i] + lambda_ * yn[i];
    return yc;
  }

  Tensor backward(const Tensor& g, bool param_grads) override {
    switch (route_) {
      case BnRoute::clean: return clean_.backward(g, param_grads);
      case BnRoute::noised: return noised_.backward(g, param_grads);
      case BnRoute::mixed: break;
    }
    Tensor gc = g, gn = g;
    for (auto& v : gc.values()) v *= (1.0 - lambda_);
    for (auto& v : gn.values()) v *= lambda_;
    Tensor dx = clean_.backward(gc, param_grads);
    const Tensor dn = noised_.backward(gn, param_grads);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dn[i];
    return dx;
  }

  std::vector<Parameter*> parameters() override {
    return {&clean_.gamma(), &clean_.beta(), &noised_.gamma(), &noised_.beta()};
  }
  std::vector<Tensor*> buffers() override {
    return {&clean_.running_mean(), &clean_.running_var(), &noised_.running_mean(),
            &noised_.running_var()};
  }
  Shape output_shape(const Shape& in) const override { return clean_.output_shape(in); }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DualBatchNorm>(*this); }

 private:
  static void rename(BatchNorm& bn, const std::string& prefix) {
    bn.gamma().name = prefix + "gamma";
    bn.beta().name = prefix + "beta";
  }

  BatchNorm clean_, noised_;
  BnRoute route_ = BnRoute::clean;
  double lambda_ = 0.0;
};

}  // namespace splitmix::nn
