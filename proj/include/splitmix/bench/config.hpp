#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitmix/data.hpp"
#include "splitmix/error.hpp"
#include "splitmix/fed/budget.hpp"
#include "splitmix/fed/schedule.hpp"
#include "splitmix/nn.hpp"

namespace splitmix::bench {

using nlohmann::json;

// Environment variable that, when set, replaces the configured output_dir.
inline constexpr const char* kOutputDirEnv = "SPLITMIX_OUTPUT_DIR";

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | file
  data::SynthConfig synth;
  data::DatasetSource file;
};

struct PartitionConfig {
  data::PartitionKind kind = data::PartitionKind::feature_noniid;
  std::size_t clients = 16;
  std::size_t classes_per_client = 3;
  std::vector<std::size_t> clients_per_domain;  // empty: spread evenly
  double val_fraction = 0.1;
  double test_fraction = 0.2;
};

struct ScheduleConfig {
  std::size_t rounds = 50;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  fed::LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool masked_loss = true;
  std::size_t participants = 0;
  double dropout = 0.0;
  std::size_t eval_every = 1;
  std::size_t eval_batch = 128;
  std::size_t post_average_passes = 20;
};

struct RobustnessConfig {
  bool enabled = false;
  double epsilon = 8.0 / 255.0;
  std::size_t steps = 7;
  double step_size = 2.0 / 255.0;
  bool random_start = true;
  std::vector<double> lambda_grid{0.0, 0.2, 0.5, 0.8, 1.0};
  double lambda_n = 0.5;
};

struct BaselineConfig {
  std::string method = "none";  // none | sheterofl | fedavg_individual
  bool enforce_budget = true;   // fedavg_individual
};

struct BnConfig {
  nn::BnMode mode = nn::BnMode::batch_average;
  bool rescale_layer = false;
  nn::InitScheme init = nn::InitScheme::rescaled;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  PartitionConfig partitioner;
  nn::ArchSpec architecture = nn::desk_cnn(1, 8, 10);
  double r = 0.25;
  bool sort = false;
  fed::BudgetConfig budgets;
  ScheduleConfig schedule;
  RobustnessConfig robustness;
  BaselineConfig baseline;
  BnConfig bn;
  std::uint64_t seed = 0;
  std::string output_dir = "results";
  std::size_t threads = 1;
  std::vector<std::string> overrides;  // "key=value" as given on the command line

  nn::WidthRatio atom() const { return nn::WidthRatio::from_double(r); }
  std::size_t num_bases() const { return static_cast<std::size_t>(atom().den()); }
};

namespace detail {

// Reads fields of one JSON object, remembering which keys were consumed so
// leftovers can be reported with their full path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.push_back(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.push_back(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(at(key), "expected " + type_name<T>() + ", got " + j_.at(key).dump());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) throw ConfigError(at(it.key()), "unknown key");
  }

 private:
  template <typename T>
  static std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
    else if constexpr (std::is_arithmetic_v<T>) return "a number";
    else return "a list";
  }

  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

inline void check_fraction(double v, const std::string& path, bool allow_one = false) {
  require(v >= 0.0 && (allow_one ? v <= 1.0 : v < 1.0), path, "must lie in [0, 1" + std::string(allow_one ? "]" : ")"));
}

inline void parse_dataset(const json& j, DatasetConfig& d) {
  Reader r(j, "dataset");
  r.get("source", d.source);
  if (d.source == "synthetic") {
    auto& s = d.synth;
    r.get("classes", s.classes);
    r.get("domains", s.domains);
    r.get("samples_per_domain", s.samples_per_domain);
    r.get("shape", s.sample_shape);
    r.get("separation", s.separation);
    r.get("noise", s.noise);
    r.get("shift", s.shift);
    r.get("rotation", s.rotation);
    r.get("scale_spread", s.scale_spread);
    r.get("contrast", s.contrast);
    r.get("smooth", s.smooth);
    require(s.classes >= 1, r.at("classes"), "need at least one class");
    require(s.domains >= 1, r.at("domains"), "need at least one domain");
    require(s.samples_per_domain >= 1, r.at("samples_per_domain"), "must be positive");
    require(!s.sample_shape.empty(), r.at("shape"), "sample shape required");
  } else if (d.source == "file") {
    std::string format = "internal";
    r.get("format", format);
    d.file.format = data::parse_dataset_format(format);
    r.get("path", d.file.path);
    r.get("labels_path", d.file.labels_path);
    r.get("classes", d.file.num_classes);
    r.get("shape", d.file.sample_shape);
    require(!d.file.path.empty(), r.at("path"), "dataset path required");
    require(d.file.format != data::DatasetFormat::idx_binary || !d.file.labels_path.empty(), r.at("labels_path"),
            "idx datasets need a label file");
  } else {
    throw ConfigError(r.at("source"), "expected 'synthetic' or 'file', got '" + d.source + "'");
  }
  r.finish();
}

inline void parse_partitioner(const json& j, PartitionConfig& p) {
  Reader r(j, "partitioner");
  std::string kind = data::to_string(p.kind);
  r.get("kind", kind);
  try {
    p.kind = data::parse_partition_kind(kind);
  } catch (const ConfigError& e) {
    throw ConfigError(r.at("kind"), e.what());
  }
  r.get("clients", p.clients);
  r.get("classes_per_client", p.classes_per_client);
  r.get("clients_per_domain", p.clients_per_domain);
  r.get("val_fraction", p.val_fraction);
  r.get("test_fraction", p.test_fraction);
  r.finish();
  require(p.clients >= 1, r.at("clients"), "need at least one client");
  check_fraction(p.val_fraction, r.at("val_fraction"));
  check_fraction(p.test_fraction, r.at("test_fraction"));
  require(p.val_fraction + p.test_fraction < 1.0, r.at("test_fraction"), "no training data left");
}

inline void parse_budgets(const json& j, fed::BudgetConfig& b) {
  Reader r(j, "budgets");
  std::string kind = fed::to_string(b.kind);
  r.get("kind", kind);
  b.kind = fed::parse_budget_kind(kind);
  r.get("groups", b.groups);
  r.get("formula_reading", b.formula_reading);
  r.get("group_widths", b.group_widths);
  r.get("step", b.step);
  r.get("median", b.median);
  r.get("sigma", b.sigma);
  r.get("bin", b.bin);
  r.get("widths", b.widths);
  r.finish();
  require(b.groups >= 1, r.at("groups"), "need at least one group");
  require(b.kind != fed::BudgetKind::explicit_list || !b.widths.empty(), r.at("widths"),
          "explicit budgets need a width list");
  for (std::size_t i = 0; i < b.widths.size(); ++i)
    require(b.widths[i] > 0.0 && b.widths[i] <= 1.0, r.at("widths") + "[" + std::to_string(i) + "]",
            "budget must lie in (0, 1]");
}

inline void parse_schedule(const json& j, ScheduleConfig& s) {
  Reader r(j, "schedule");
  r.get("rounds", s.rounds);
  r.get("epochs", s.epochs);
  r.get("batch_size", s.batch_size);
  r.get("lr", s.lr.lr);
  std::string kind = fed::to_string(s.lr.kind);
  r.get("lr_schedule", kind);
  s.lr.kind = fed::parse_lr_kind(kind);
  r.get("milestones", s.lr.milestones);
  r.get("gamma", s.lr.gamma);
  r.get("momentum", s.momentum);
  r.get("weight_decay", s.weight_decay);
  r.get("masked_loss", s.masked_loss);
  r.get("participants", s.participants);
  r.get("dropout", s.dropout);
  r.get("eval_every", s.eval_every);
  r.get("eval_batch", s.eval_batch);
  r.get("post_average_passes", s.post_average_passes);
  r.finish();
  s.lr.total_rounds = std::max<std::size_t>(s.rounds, 1);
  require(s.batch_size >= 1, r.at("batch_size"), "must be positive");
  require(s.eval_batch >= 1, r.at("eval_batch"), "must be positive");
  require(s.lr.lr > 0.0, r.at("lr"), "learning rate must be positive");
  require(s.momentum >= 0.0 && s.momentum < 1.0, r.at("momentum"), "must lie in [0, 1)");
  require(s.weight_decay >= 0.0, r.at("weight_decay"), "must be non-negative");
  check_fraction(s.dropout, r.at("dropout"));
  require(s.post_average_passes >= 1, r.at("post_average_passes"), "must be positive");
}

inline void parse_robustness(const json& j, RobustnessConfig& c) {
  Reader r(j, "robustness");
  r.get("enabled", c.enabled);
  r.get("epsilon", c.epsilon);
  r.get("steps", c.steps);
  r.get("step_size", c.step_size);
  r.get("random_start", c.random_start);
  r.get("lambda_grid", c.lambda_grid);
  r.get("lambda_n", c.lambda_n);
  r.finish();
  require(c.epsilon >= 0.0, r.at("epsilon"), "must be non-negative");
  require(c.steps >= 1, r.at("steps"), "need at least one step");
  require(c.step_size > 0.0, r.at("step_size"), "must be positive");
  check_fraction(c.lambda_n, r.at("lambda_n"), true);
  require(!c.lambda_grid.empty(), r.at("lambda_grid"), "need at least one value");
  for (std::size_t i = 0; i < c.lambda_grid.size(); ++i)
    check_fraction(c.lambda_grid[i], r.at("lambda_grid") + "[" + std::to_string(i) + "]", true);
}

inline void parse_baseline(const json& j, BaselineConfig& b) {
  if (j.is_string()) {
    b.method = j.get<std::string>();
  } else {
    Reader r(j, "baseline");
    r.get("method", b.method);
    r.get("enforce_budget", b.enforce_budget);
    r.finish();
  }
  if (b.method != "none" && b.method != "sheterofl" && b.method != "fedavg_individual")
    throw ConfigError("baseline", "expected none, sheterofl or fedavg_individual, got '" + b.method + "'");
}

inline void parse_bn(const json& j, BnConfig& b) {
  Reader r(j, "bn");
  std::string mode = nn::to_string(b.mode), init = b.init == nn::InitScheme::rescaled ? "rescaled" : "shard";
  r.get("mode", mode);
  r.get("rescale_layer", b.rescale_layer);
  r.get("init", init);
  r.finish();
  try {
    b.mode = nn::parse_bn_mode(mode);
  } catch (const ConfigError& e) {
    throw ConfigError(r.at("mode"), e.what());
  }
  if (init == "rescaled") b.init = nn::InitScheme::rescaled;
  else if (init == "shard" || init == "plain") b.init = nn::InitScheme::shard;
  else throw ConfigError(r.at("init"), "expected 'rescaled' or 'shard', got '" + init + "'");
}

}  // namespace detail

// Validates and resolves a config document. Every error names its field path.
inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  detail::Reader r(j, "");
  if (r.has("dataset")) detail::parse_dataset(r.raw("dataset"), c.dataset);
  if (r.has("partitioner")) detail::parse_partitioner(r.raw("partitioner"), c.partitioner);
  if (r.has("architecture")) c.architecture = nn::arch_from_json(r.raw("architecture"), "architecture");
  if (r.has("splitmix")) {
    detail::Reader s(r.raw("splitmix"), "splitmix");
    s.get("r", c.r);
    s.get("sort", c.sort);
    s.finish();
    if (!(c.r > 0.0 && c.r <= 1.0)) throw ConfigError("splitmix.r", "must lie in (0, 1]");
    const double inv = 1.0 / c.r;
    if (std::abs(inv - std::round(inv)) > 1e-9)
      throw ConfigError("splitmix.r", "1/r must be an integer, got r = " + std::to_string(c.r));
  }
  if (r.has("budgets")) detail::parse_budgets(r.raw("budgets"), c.budgets);
  if (r.has("schedule")) detail::parse_schedule(r.raw("schedule"), c.schedule);
  if (r.has("robustness")) detail::parse_robustness(r.raw("robustness"), c.robustness);
  if (r.has("baseline")) detail::parse_baseline(r.raw("baseline"), c.baseline);
  if (r.has("bn")) detail::parse_bn(r.raw("bn"), c.bn);
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("threads", c.threads);
  r.get("overrides", c.overrides);
  r.finish();
  c.schedule.lr.total_rounds = std::max<std::size_t>(c.schedule.rounds, 1);

  const auto& a = c.architecture;
  if (c.dataset.source == "synthetic") {
    if (a.input_shape != c.dataset.synth.sample_shape)
      throw ConfigError("architecture.input", "architecture expects " + nn::shape_str(a.input_shape) +
                                                  " but the dataset produces " +
                                                  nn::shape_str(c.dataset.synth.sample_shape));
    if (a.num_classes != c.dataset.synth.classes)
      throw ConfigError("architecture.classes", "architecture has " + std::to_string(a.num_classes) +
                                                    " classes, dataset " + std::to_string(c.dataset.synth.classes));
  }
  // Every width the ensemble and the baselines use must be buildable.
  for (std::size_t j = 1; j <= c.num_bases(); ++j) {
    nn::BuildOptions b;
    b.width = nn::WidthRatio::of_atoms(static_cast<long>(j), static_cast<long>(c.num_bases()));
    nn::build_model(a, b);
  }
  if (c.robustness.enabled && c.bn.mode == nn::BnMode::post_average)
    throw ConfigError("bn.mode", "post_average statistics are not supported with robustness training");
  if (c.robustness.enabled && c.baseline.method == "sheterofl")
    throw ConfigError("baseline", "the sheterofl baseline does not support robustness training");
  if (c.baseline.method == "sheterofl" && c.bn.mode == nn::BnMode::locally_tracked)
    throw ConfigError("bn.mode", "locally_tracked statistics are not supported by the sheterofl baseline");
  if (c.partitioner.kind == data::PartitionKind::feature_noniid && !c.partitioner.clients_per_domain.empty()) {
    std::size_t total = 0;
    for (auto n : c.partitioner.clients_per_domain) total += n;
    if (total != c.partitioner.clients)
      throw ConfigError("partitioner.clients_per_domain", "sums to " + std::to_string(total) + ", expected " +
                                                               std::to_string(c.partitioner.clients));
  }
  return c;
}

// Fully resolved document; parse_config(to_json(c)) reproduces c.
inline json to_json(const ExperimentConfig& c) {
  json dataset;
  if (c.dataset.source == "synthetic") {
    const auto& s = c.dataset.synth;
    dataset = {{"source", "synthetic"},   {"classes", s.classes},   {"domains", s.domains},
               {"samples_per_domain", s.samples_per_domain},      {"shape", s.sample_shape},
               {"separation", s.separation}, {"noise", s.noise},   {"shift", s.shift},
               {"rotation", s.rotation},   {"scale_spread", s.scale_spread}, {"contrast", s.contrast},
               {"smooth", s.smooth}};
  } else {
    const auto& f = c.dataset.file;
    const char* fmt = f.format == data::DatasetFormat::idx_binary ? "idx_binary"
                      : f.format == data::DatasetFormat::csv      ? "csv"
                                                                  : "internal";
    dataset = {{"source", "file"}, {"format", fmt}, {"path", f.path}, {"labels_path", f.labels_path},
               {"classes", f.num_classes}, {"shape", f.sample_shape}};
  }
  const auto& p = c.partitioner;
  const auto& b = c.budgets;
  const auto& s = c.schedule;
  const auto& rb = c.robustness;
  return {
      {"dataset", dataset},
      {"partitioner",
       {{"kind", data::to_string(p.kind)}, {"clients", p.clients}, {"classes_per_client", p.classes_per_client},
        {"clients_per_domain", p.clients_per_domain}, {"val_fraction", p.val_fraction},
        {"test_fraction", p.test_fraction}}},
      {"architecture", nn::arch_to_json(c.architecture)},
      {"splitmix", {{"r", c.r}, {"sort", c.sort}}},
      {"budgets",
       {{"kind", fed::to_string(b.kind)}, {"groups", b.groups}, {"formula_reading", b.formula_reading},
        {"group_widths", b.group_widths}, {"step", b.step}, {"median", b.median}, {"sigma", b.sigma},
        {"bin", b.bin}, {"widths", b.widths}}},
      {"schedule",
       {{"rounds", s.rounds}, {"epochs", s.epochs}, {"batch_size", s.batch_size}, {"lr", s.lr.lr},
        {"lr_schedule", fed::to_string(s.lr.kind)}, {"milestones", s.lr.milestones}, {"gamma", s.lr.gamma},
        {"momentum", s.momentum}, {"weight_decay", s.weight_decay}, {"masked_loss", s.masked_loss},
        {"participants", s.participants}, {"dropout", s.dropout}, {"eval_every", s.eval_every},
        {"eval_batch", s.eval_batch}, {"post_average_passes", s.post_average_passes}}},
      {"robustness",
       {{"enabled", rb.enabled}, {"epsilon", rb.epsilon}, {"steps", rb.steps}, {"step_size", rb.step_size},
        {"random_start", rb.random_start}, {"lambda_grid", rb.lambda_grid}, {"lambda_n", rb.lambda_n}}},
      {"baseline", {{"method", c.baseline.method}, {"enforce_budget", c.baseline.enforce_budget}}},
      {"bn",
       {{"mode", nn::to_string(c.bn.mode)}, {"rescale_layer", c.bn.rescale_layer},
        {"init", c.bn.init == nn::InitScheme::rescaled ? "rescaled" : "shard"}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"overrides", c.overrides},
  };
}

// Applies one "dotted.key=value" override to a raw config document. The
// value is parsed as JSON when possible and kept as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component");
    if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object value");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path, "cannot open config file");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path, "not valid JSON");
  return j;
}

// Loads a config file, applies overrides and the output-dir environment
// override, then validates.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json doc = read_json_file(path);
  if (!doc.is_object()) throw ConfigError(path, "config must be a JSON object");
  for (const auto& o : overrides) apply_override(doc, o);
  auto cfg = parse_config(doc);
  for (const auto& o : overrides) cfg.overrides.push_back(o);
  bool cli_output_dir = false;
  for (const auto& o : overrides) cli_output_dir = cli_output_dir || o.rfind("output_dir=", 0) == 0;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env && !cli_output_dir) cfg.output_dir = env;
  return cfg;
}

}  // namespace splitmix::bench
