#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitmix/error.hpp"
#include "splitmix/nn/layers.hpp"
#include "splitmix/nn/model.hpp"
#include "splitmix/nn/width.hpp"
#include "splitmix/rng.hpp"

namespace splitmix::nn {

struct LayerSpec {
  std::string kind;           // conv | dense | bn | relu | maxpool | flatten
  std::size_t units = 0;      // output channels (conv) or hidden units (dense) at width ×1
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = true;
  std::optional<BnMode> bn_mode;  // per-layer override of the model BN mode
};

// Declarative ×1 architecture. The last conv/dense layer is the classifier
// and keeps `num_classes` outputs at every width; the first layer consumes the
// raw input channels unsliced.
struct ArchSpec {
  std::string id;
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;
};

enum class InitScheme {
  rescaled,  // Kaiming std from the fan-in of the ×1 network
  shard,     // Kaiming std from the fan-in of the width-sliced layer
};

struct BuildOptions {
  WidthRatio width;
  BnMode bn_mode = BnMode::batch_average;
  bool dual_bn = false;
  bool rescale_layer = false;
  InitScheme init = InitScheme::rescaled;
  std::uint64_t seed = 0;
};

inline double kaiming_std(const WidthfulLayer& layer, InitScheme scheme) {
  const std::size_t fan = scheme == InitScheme::rescaled ? layer.fan_in_full() : layer.fan_in();
  return std::sqrt(2.0 / static_cast<double>(fan));
}

// Zero-mean normal weights with std sqrt(2 / fan_in), zero bias.
inline void kaiming_init(WidthfulLayer& layer, InitScheme scheme, Rng& rng) {
  std::normal_distribution<double> dist(0.0, kaiming_std(layer, scheme));
  for (auto& v : layer.weight().value.values()) v = dist(rng);
  if (auto* b = layer.bias()) b->value.fill(0.0);
}

inline void kaiming_init_rescaled(WidthfulLayer& layer, std::uint64_t seed) {
  Rng rng(seed);
  kaiming_init(layer, InitScheme::rescaled, rng);
}

inline std::size_t classifier_index(const ArchSpec& arch) {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < arch.layers.size(); ++i)
    if (arch.layers[i].kind == "conv" || arch.layers[i].kind == "dense") last = i;
  if (!last) throw ConfigError("architecture.layers", "no conv or dense layer");
  return *last;
}

inline Model build_model(const ArchSpec& arch, const BuildOptions& opt) {
  if (arch.input_shape.empty()) throw ConfigError("architecture.input", "input shape is empty");
  const std::size_t head = classifier_index(arch);
  if (arch.layers[head].units != arch.num_classes)
    throw ConfigError("architecture.layers[" + std::to_string(head) + "]",
                      "classifier must emit " + std::to_string(arch.num_classes) + " units");

  Shape shard = arch.input_shape;
  Shape full = arch.input_shape;
  std::vector<std::unique_ptr<Layer>> layers;
  std::vector<WidthfulLayer*> weighted;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& ls = arch.layers[i];
    const std::string where = "architecture.layers[" + std::to_string(i) + "]";
    std::unique_ptr<Layer> layer;
    bool hidden_weighted = false;
    if (ls.kind == "conv" || ls.kind == "dense") {
      if (ls.units == 0) throw ConfigError(where, "units must be positive");
      const std::size_t out = i == head ? ls.units : opt.width.scale(ls.units, where);
      hidden_weighted = i != head;
      if (ls.kind == "conv") {
        if (shard.size() != 3) throw ConfigError(where, "conv needs a [C,H,W] input");
        auto conv = std::make_unique<Conv2d>(shard[0], out, ls.kernel, ls.stride, ls.padding,
                                             full[0], ls.units, ls.bias);
        weighted.push_back(conv.get());
        layer = std::move(conv);
      } else {
        if (shard.size() != 1) throw ConfigError(where, "dense needs a flat input; add a flatten layer");
        auto dense = std::make_unique<Dense>(shard[0], out, full[0], ls.units, ls.bias);
        weighted.push_back(dense.get());
        layer = std::move(dense);
      }
    } else if (ls.kind == "bn") {
      const BnMode mode = ls.bn_mode.value_or(opt.bn_mode);
      if (opt.dual_bn) layer = std::make_unique<DualBatchNorm>(shard[0], mode);
      else layer = std::make_unique<BatchNorm>(shard[0], mode);
    } else if (ls.kind == "relu") {
      layer = std::make_unique<ReLU>();
    } else if (ls.kind == "maxpool") {
      layer = std::make_unique<MaxPool2d>(ls.kernel ? ls.kernel : 2, ls.stride ? ls.stride : 2);
    } else if (ls.kind == "flatten") {
      layer = std::make_unique<Flatten>();
    } else {
      throw ConfigError(where, "unknown layer kind '" + ls.kind + "'");
    }

    // Track the ×1 shapes alongside the shard so fan-ins of the full net are known.
    try {
      std::unique_ptr<Layer> full_twin;
      if (ls.kind == "conv")
        full_twin = std::make_unique<Conv2d>(full.at(0), ls.units, ls.kernel, ls.stride, ls.padding,
                                             full[0], ls.units, ls.bias);
      else if (ls.kind == "dense")
        full_twin = std::make_unique<Dense>(full.at(0), ls.units, full[0], ls.units, ls.bias);
      else if (ls.kind == "bn")
        full_twin = std::make_unique<BatchNorm>(full.at(0), opt.bn_mode);
      else
        full_twin = layer->clone();
      shard = layer->output_shape(shard);
      full = full_twin->output_shape(full);
    } catch (const DimensionError& e) {
      throw ConfigError(where, e.what());
    }
    layers.push_back(std::move(layer));
    if (hidden_weighted && opt.rescale_layer && !opt.width.is_full())
      layers.push_back(std::make_unique<Scaler>(1.0 / opt.width.value()));
  }

  Model model(ModelInfo{arch.id, opt.width, opt.seed}, arch.input_shape, arch.num_classes,
              std::move(layers));
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < model.num_layers(); ++i)
    if (auto* w = dynamic_cast<WidthfulLayer*>(&model.layer(i))) kaiming_init(*w, opt.init, rng);
  return model;
}

// Parameter and MAC counts of build_model(arch, opt) worked out from the
// specs alone, without allocating weights.
struct Footprint {
  std::size_t params = 0;
  std::size_t macs = 0;
};

inline Footprint footprint(const ArchSpec& arch, const BuildOptions& opt) {
  const std::size_t head = classifier_index(arch);
  Footprint f;
  Shape s = arch.input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& ls = arch.layers[i];
    const std::string where = "architecture.layers[" + std::to_string(i) + "]";
    if (ls.kind == "conv" || ls.kind == "dense") {
      const std::size_t out = i == head ? ls.units : opt.width.scale(ls.units, where);
      if (ls.kind == "conv") {
        if (s.size() != 3) throw ConfigError(where, "conv needs a [C,H,W] input");
        const std::size_t h = (s[1] + 2 * ls.padding - ls.kernel) / ls.stride + 1;
        const std::size_t w = (s[2] + 2 * ls.padding - ls.kernel) / ls.stride + 1;
        f.params += out * s[0] * ls.kernel * ls.kernel + (ls.bias ? out : 0);
        f.macs += out * h * w * ls.kernel * ls.kernel * s[0];
        s = {out, h, w};
      } else {
        if (s.size() != 1) throw ConfigError(where, "dense needs a flat input; add a flatten layer");
        f.params += out * s[0] + (ls.bias ? out : 0);
        f.macs += out * s[0];
        s = {out};
      }
    } else if (ls.kind == "bn") {
      f.params += (opt.dual_bn ? 4 : 2) * s[0];
    } else if (ls.kind == "maxpool") {
      const std::size_t k = ls.kernel ? ls.kernel : 2, st = ls.stride ? ls.stride : 2;
      s = {s[0], (s[1] - k) / st + 1, (s[2] - k) / st + 1};
    } else if (ls.kind == "flatten") {
      std::size_t n = 1;
      for (auto d : s) n *= d;
      s = {n};
    }
  }
  return f;
}

// ---- presets -------------------------------------------------------------

inline LayerSpec conv_spec(std::size_t ch, std::size_t k, std::size_t stride, std::size_t pad) {
  LayerSpec s;
  s.kind = "conv";
  s.units = ch;
  s.kernel = k;
  s.stride = stride;
  s.padding = pad;
  return s;
}
inline LayerSpec dense_spec(std::size_t units, bool bias = true) {
  LayerSpec s;
  s.kind = "dense";
  s.units = units;
  s.bias = bias;
  return s;
}
inline LayerSpec simple_spec(const std::string& kind) {
  LayerSpec s;
  s.kind = kind;
  if (kind == "maxpool") s.kernel = s.stride = 2;
  return s;
}

// CNN used for the Digits benchmark (28×28×3 input, 10 classes).
inline ArchSpec digits_cnn() {
  ArchSpec a{"digits_cnn", {3, 28, 28}, 10, {}};
  auto& l = a.layers;
  l = {conv_spec(64, 5, 1, 2), simple_spec("bn"), simple_spec("relu"), simple_spec("maxpool"),
       conv_spec(64, 5, 1, 2), simple_spec("bn"), simple_spec("relu"), simple_spec("maxpool"),
       conv_spec(128, 5, 1, 2), simple_spec("bn"), simple_spec("relu"), simple_spec("flatten"),
       dense_spec(2048), simple_spec("bn"), simple_spec("relu"),
       dense_spec(512), simple_spec("bn"), simple_spec("relu"), dense_spec(10)};
  return a;
}

// Small CNN for desk-scale simulation on C×H×W synthetic images (H, W divisible by 4).
inline ArchSpec desk_cnn(std::size_t channels, std::size_t hw, std::size_t classes,
                         std::size_t c1 = 16, std::size_t c2 = 32, std::size_t hidden = 64) {
  ArchSpec a{"desk_cnn", {channels, hw, hw}, classes, {}};
  a.layers = {conv_spec(c1, 3, 1, 1), simple_spec("bn"), simple_spec("relu"), simple_spec("maxpool"),
              conv_spec(c2, 3, 1, 1), simple_spec("bn"), simple_spec("relu"), simple_spec("maxpool"),
              simple_spec("flatten"), dense_spec(hidden), simple_spec("bn"), simple_spec("relu"),
              dense_spec(classes)};
  return a;
}

// Fully connected net with BN after every hidden layer.
inline ArchSpec mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes) {
  ArchSpec a{"mlp", {in}, classes, {}};
  for (auto h : hidden) {
    a.layers.push_back(dense_spec(h));
    a.layers.push_back(simple_spec("bn"));
    a.layers.push_back(simple_spec("relu"));
  }
  a.layers.push_back(dense_spec(classes));
  return a;
}

// ---- declarative form ------------------------------------------------------
//
//   {"preset": "digits_cnn"}
//   {"preset": "desk_cnn", "channels": 1, "size": 8, "classes": 10, "c1": 16, "c2": 32, "hidden": 64}
//   {"id": "...", "input": [1, 8, 8], "classes": 10,
//    "layers": [{"kind": "conv", "channels": 16, "kernel": 3, "padding": 1,
//                "bn": true, "activation": "relu"}, {"kind": "maxpool"}, ...]}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& path,
                           std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(path + "." + it.key(), "unknown key");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

}  // namespace detail

inline ArchSpec arch_from_json(const nlohmann::json& j, const std::string& path = "architecture") {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  if (j.contains("preset")) {
    const auto preset = get_or<std::string>(j, "preset", "", path);
    if (preset == "digits_cnn") {
      detail::reject_unknown(j, path, {"preset"});
      return digits_cnn();
    }
    if (preset == "desk_cnn") {
      detail::reject_unknown(j, path, {"preset", "channels", "size", "classes", "c1", "c2", "hidden"});
      return desk_cnn(get_or<std::size_t>(j, "channels", 1, path), get_or<std::size_t>(j, "size", 8, path),
                      get_or<std::size_t>(j, "classes", 10, path), get_or<std::size_t>(j, "c1", 16, path),
                      get_or<std::size_t>(j, "c2", 32, path), get_or<std::size_t>(j, "hidden", 64, path));
    }
    if (preset == "mlp") {
      detail::reject_unknown(j, path, {"preset", "inputs", "hidden", "classes"});
      return mlp(get_or<std::size_t>(j, "inputs", 2, path),
                 get_or<std::vector<std::size_t>>(j, "hidden", {16}, path),
                 get_or<std::size_t>(j, "classes", 2, path));
    }
    throw ConfigError(path + ".preset", "unknown preset '" + preset + "'");
  }
  detail::reject_unknown(j, path, {"id", "input", "classes", "layers"});
  ArchSpec a;
  a.id = get_or<std::string>(j, "id", "custom", path);
  a.input_shape = get_or<Shape>(j, "input", {}, path);
  a.num_classes = get_or<std::size_t>(j, "classes", 0, path);
  if (!j.contains("layers") || !j["layers"].is_array())
    throw ConfigError(path + ".layers", "expected a layer list");
  for (std::size_t i = 0; i < j["layers"].size(); ++i) {
    const auto& lj = j["layers"][i];
    const std::string lp = path + ".layers[" + std::to_string(i) + "]";
    detail::reject_unknown(lj, lp, {"kind", "channels", "units", "kernel", "stride", "padding", "bias",
                                    "bn", "mode", "activation"});
    LayerSpec s;
    s.kind = get_or<std::string>(lj, "kind", "", lp);
    s.units = get_or<std::size_t>(lj, "channels", get_or<std::size_t>(lj, "units", 0, lp), lp);
    s.kernel = get_or<std::size_t>(lj, "kernel", s.kind == "maxpool" ? 2 : 0, lp);
    s.stride = get_or<std::size_t>(lj, "stride", s.kind == "maxpool" ? 2 : 1, lp);
    s.padding = get_or<std::size_t>(lj, "padding", 0, lp);
    s.bias = get_or<bool>(lj, "bias", true, lp);
    if (lj.contains("mode")) s.bn_mode = parse_bn_mode(get_or<std::string>(lj, "mode", "", lp));
    if (s.kind == "conv" && s.kernel == 0) throw ConfigError(lp + ".kernel", "conv needs a kernel size");
    a.layers.push_back(s);
    if (get_or<bool>(lj, "bn", false, lp)) a.layers.push_back(simple_spec("bn"));
    const auto act = get_or<std::string>(lj, "activation", "", lp);
    if (act == "relu") a.layers.push_back(simple_spec("relu"));
    else if (!act.empty()) throw ConfigError(lp + ".activation", "unsupported activation '" + act + "'");
  }
  if (a.input_shape.empty()) throw ConfigError(path + ".input", "input shape required");
  if (a.num_classes == 0) throw ConfigError(path + ".classes", "class count required");
  return a;
}

// Explicit layer-list form; arch_from_json(arch_to_json(a)) reproduces `a`.
inline nlohmann::json arch_to_json(const ArchSpec& a) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& s : a.layers) {
    nlohmann::json l{{"kind", s.kind}};
    if (s.kind == "conv" || s.kind == "dense") {
      l["units"] = s.units;
      l["bias"] = s.bias;
    }
    if (s.kind == "conv" || s.kind == "maxpool") {
      l["kernel"] = s.kernel;
      l["stride"] = s.stride;
    }
    if (s.kind == "conv") l["padding"] = s.padding;
    if (s.bn_mode) l["mode"] = to_string(*s.bn_mode);
    layers.push_back(l);
  }
  return {{"id", a.id}, {"input", a.input_shape}, {"classes", a.num_classes}, {"layers", layers}};
}

}  // namespace splitmix::nn
