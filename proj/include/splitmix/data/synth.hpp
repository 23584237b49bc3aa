#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "splitmix/data/dataset.hpp"
#include "splitmix/error.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::data {

// Gaussian class clusters observed through per-domain affine distortions.
// Sample of class c in domain j:
//   z = mu_c + noise * N(0, I)
//   v = scale_j * rotate_j(z) + shift_j
//   x = clamp(0.5 + contrast * v, 0, 1)
struct SynthConfig {
  std::size_t classes = 10;
  std::size_t domains = 3;
  std::size_t samples_per_domain = 600;
  Shape sample_shape{1, 8, 8};  // [d] or [C, H, W]
  double separation = 1.0;      // std of prototype entries
  double noise = 1.0;
  double shift = 0.0;           // std of per-domain offsets
  double rotation = 0.0;        // radians added per domain index
  double scale_spread = 0.0;    // domain scales drawn from [1 - s, 1 + s]
  double contrast = 0.15;
  bool smooth = true;           // box-blur image prototypes so conv filters see structure
  std::uint64_t seed = 0;
};

struct SynthData {
  std::vector<LabeledDataset> domains;
  std::vector<std::vector<double>> class_means;  // mu_c before distortion
};

namespace detail {

inline void box_blur(std::vector<double>& v, const Shape& s) {
  if (s.size() != 3) return;
  const std::size_t C = s[0], H = s[1], W = s[2];
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        double acc = 0.0;
        int cnt = 0;
        for (int dh = -1; dh <= 1; ++dh)
          for (int dw = -1; dw <= 1; ++dw) {
            const long hh = static_cast<long>(h) + dh, ww = static_cast<long>(w) + dw;
            if (hh < 0 || ww < 0 || hh >= static_cast<long>(H) || ww >= static_cast<long>(W)) continue;
            acc += v[(c * H + static_cast<std::size_t>(hh)) * W + static_cast<std::size_t>(ww)];
            ++cnt;
          }
        out[(c * H + h) * W + w] = acc / cnt;
      }
  double ss = 0.0;
  for (double x : out) ss += x * x;
  const double sd = std::sqrt(ss / static_cast<double>(out.size()));
  for (auto& x : out) x = sd > 0 ? x / sd : 0.0;
  v = std::move(out);
}

}  // namespace detail

inline SynthData synth_multidomain(const SynthConfig& cfg) {
  if (cfg.classes == 0 || cfg.domains == 0 || cfg.samples_per_domain == 0)
    throw ConfigError("dataset", "classes, domains and samples must be positive");
  const std::size_t d = nn::shape_size(cfg.sample_shape);
  if (d == 0) throw ConfigError("dataset.shape", "empty sample shape");

  Rng rng(derive_seed(cfg.seed, {0x5e7}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  SynthData out;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::vector<double> mu(d);
    for (auto& m : mu) m = gauss(rng);
    if (cfg.smooth) detail::box_blur(mu, cfg.sample_shape);
    for (auto& m : mu) m *= cfg.separation;
    out.class_means.push_back(std::move(mu));
  }

  // Coordinate pairs rotated by each domain's angle.
  std::vector<std::size_t> pairing(d);
  std::iota(pairing.begin(), pairing.end(), std::size_t{0});
  std::shuffle(pairing.begin(), pairing.end(), rng);

  for (std::size_t j = 0; j < cfg.domains; ++j) {
    std::vector<double> shift(d);
    for (auto& s : shift) s = cfg.shift * gauss(rng);
    const double scale = 1.0 + cfg.scale_spread * unit(rng);
    const double angle = cfg.rotation * static_cast<double>(j);
    const double ca = std::cos(angle), sa = std::sin(angle);

    Rng srng(derive_seed(cfg.seed, {0xd0, j}));
    LabeledDataset ds;
    ds.num_classes = cfg.classes;
    ds.domain = static_cast<int>(j);
    Shape shape{cfg.samples_per_domain};
    shape.insert(shape.end(), cfg.sample_shape.begin(), cfg.sample_shape.end());
    ds.x = Tensor(shape);
    ds.y.resize(cfg.samples_per_domain);
    std::vector<double> z(d);
    for (std::size_t n = 0; n < cfg.samples_per_domain; ++n) {
      const int label = static_cast<int>(n % cfg.classes);
      ds.y[n] = label;
      const auto& mu = out.class_means[static_cast<std::size_t>(label)];
      for (std::size_t i = 0; i < d; ++i) z[i] = mu[i] + cfg.noise * gauss(srng);
      if (angle != 0.0)
        for (std::size_t p = 0; p + 1 < d; p += 2) {
          const std::size_t a = pairing[p], b = pairing[p + 1];
          const double za = z[a], zb = z[b];
          z[a] = ca * za - sa * zb;
          z[b] = sa * za + ca * zb;
        }
      double* row = ds.x.data() + n * d;
      for (std::size_t i = 0; i < d; ++i)
        row[i] = std::clamp(0.5 + cfg.contrast * (scale * z[i] + shift[i]), 0.0, 1.0);
    }
    // Interleaved labels keep classes balanced; shuffle sample order.
    auto order = shuffled_indices(ds.size(), srng);
    out.domains.push_back(ds.subset(order));
  }
  return out;
}

}  // namespace splitmix::data
