// splitmix: train, customize, report and sweep from the command line.
//
//   splitmix train --config exp.json [--schedule.rounds=10 ...]
//   splitmix customize --checkpoint results/splitmix/checkpoint --width 0.5 [--lambda 0.2] --config exp.json
//   splitmix report results
//   splitmix sweep --config exp.json [--lambdas 0,0.5,1]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime or numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "splitmix/bench/config.hpp"
#include "splitmix/bench/customize.hpp"
#include "splitmix/bench/experiment.hpp"
#include "splitmix/bench/report.hpp"
#include "splitmix/bench/results.hpp"
#include "splitmix/ensemble/manifest.hpp"

namespace sb = splitmix::bench;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Leftover "--a.b=value" arguments become config overrides.
std::vector<std::string> overrides_from(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (const auto& e : extras) {
    if (e.rfind("--", 0) != 0 || e.find('=') == std::string::npos)
      throw splitmix::ConfigError(e, "unrecognized argument; config overrides look like --key=value");
    out.push_back(e.substr(2));
  }
  return out;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw splitmix::ConfigError(what, "'" + item + "' is not a number");
    }
  }
  if (out.empty()) throw splitmix::ConfigError(what, "empty list");
  return out;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& extras, bool quiet) {
  const auto cfg = sb::load_config(config_path, overrides_from(extras));
  splitmix::fed::RunHooks hooks;
  std::size_t run = 0;
  if (!quiet)
    hooks.on_round = [&](const splitmix::fed::RoundRecord& rec) {
      if (rec.round == 1) ++run;
      std::fprintf(stderr, "[run %zu] round %zu loss %.4f", run, rec.round, rec.train_loss);
      for (const auto& v : rec.val) std::fprintf(stderr, "  x%s %.3f", fmt_g(v.width.value()).c_str(), v.acc);
      std::fprintf(stderr, "\n");
    };
  const auto res = sb::run_experiment(cfg, hooks);
  sb::write_bundle(cfg, res, cfg.output_dir);
  for (const auto& r : res.runs) {
    std::cout << sb::display_name(r.method) << '\n';
    for (const auto& v : r.final_table)
      std::cout << "  x" << fmt_g(v.width.value()) << "  acc " << fmt_g(v.acc) << "  macs " << v.macs << "  params "
                << v.params << '\n';
  }
  std::cout << "results written to " << cfg.output_dir << '\n';
  return 0;
}

struct EvalSource {
  std::string config;
  std::string data, format = "internal", labels;
  std::size_t classes = 0;
};

std::vector<splitmix::fed::ClientData> eval_clients(const EvalSource& src, const std::optional<sb::ExperimentConfig>& cfg) {
  if (!src.data.empty()) {
    splitmix::data::DatasetSource ds;
    ds.format = splitmix::data::parse_dataset_format(src.format);
    ds.path = src.data;
    ds.labels_path = src.labels;
    ds.num_classes = src.classes;
    return sb::as_test_clients(splitmix::data::load_dataset(ds));
  }
  if (!cfg) throw splitmix::ConfigError("--config", "evaluation data needs --config or --data");
  return sb::build_clients(*cfg);
}

int cmd_customize(const std::string& checkpoint, double width, std::optional<double> lambda, const EvalSource& src,
                  const std::vector<std::string>& extras, bool as_json) {
  std::optional<sb::ExperimentConfig> cfg;
  if (!src.config.empty()) cfg = sb::load_config(src.config, overrides_from(extras));
  else if (!extras.empty()) throw splitmix::ConfigError(extras.front(), "overrides need --config");
  fs::path ckpt = checkpoint;
  if (ckpt.empty()) {
    if (!cfg) throw splitmix::ConfigError("--checkpoint", "checkpoint directory required");
    ckpt = fs::path(cfg->output_dir) / "splitmix" / "checkpoint";
  }
  const auto set = splitmix::ensemble::load_base_set(ckpt);
  const auto clients = eval_clients(src, cfg);
  const auto robust = cfg ? sb::robust_config(*cfg) : splitmix::fed::RobustConfig{};
  const std::uint64_t seed = splitmix::derive_seed(cfg ? cfg->seed : 0, {0xe7a1});
  const std::size_t batch = cfg ? cfg->schedule.eval_batch : 128;
  const auto r = sb::customize(set, width, lambda, clients, robust.attack, seed, batch);
  if (as_json) {
    nlohmann::json j{{"width", r.width.value()}, {"macs", r.macs}, {"params", r.params}};
    if (r.lambda) j.update({{"lambda", *r.lambda}, {"sa", r.acc}, {"ra", *r.ra}});
    else j["acc"] = r.acc;
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "width " << fmt_g(r.width.value()) << " (" << set.atoms_for(r.width) << " of " << set.size()
              << " bases)\n";
    if (r.lambda)
      std::cout << "lambda " << fmt_g(*r.lambda) << "\nSA " << sb::fmt(r.acc) << "\nRA " << sb::fmt(*r.ra) << '\n';
    else
      std::cout << "acc " << sb::fmt(r.acc) << '\n';
    std::cout << "macs " << r.macs << "\nparams " << r.params << '\n';
  }
  return 0;
}

int cmd_report(const std::string& dir, bool quiet) {
  const auto rep = sb::render_report(fs::path(dir));
  std::ofstream(fs::path(dir) / "report.txt") << rep.text;
  std::ofstream(fs::path(dir) / "curves.csv") << rep.curves_csv;
  if (!quiet) std::cout << rep.text;
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& checkpoint, const std::string& lambdas,
              const std::string& out, const std::vector<std::string>& extras) {
  const auto cfg = sb::load_config(config_path, overrides_from(extras));
  const fs::path ckpt = checkpoint.empty() ? fs::path(cfg.output_dir) / "splitmix" / "checkpoint" : fs::path(checkpoint);
  const auto set = splitmix::ensemble::load_base_set(ckpt);
  const auto grid = lambdas.empty() ? cfg.robustness.lambda_grid : parse_list(lambdas, "--lambdas");
  for (double l : grid)
    if (!(l >= 0.0 && l <= 1.0)) throw splitmix::ConfigError("--lambdas", "lambda must be in [0, 1]");
  const auto clients = sb::build_clients(cfg);
  const auto points = sb::sweep_checkpoint(set, grid, clients, sb::robust_config(cfg).attack,
                                           splitmix::derive_seed(cfg.seed, {0xe7a1}), cfg.schedule.eval_batch);
  const fs::path path = out.empty() ? fs::path(cfg.output_dir) / "sweep" / "tradeoff.csv" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    sb::CsvWriter w(path, sb::kTradeoffHeader);
    for (const auto& p : points) w.row({sb::fmt_width(p.width), sb::fmt(p.lambda, "%.6g"), sb::fmt(p.sa), sb::fmt(p.ra)});
  }
  std::cout << points.size() << " points written to " << path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split-Mix federated learning simulator"};
  app.require_subcommand(1);

  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  auto* train = app.add_subcommand("train", "Run an experiment and write its results bundle");
  std::string config;
  train->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  train->allow_extras();

  auto* customize = app.add_subcommand("customize", "Evaluate a trained base set at a chosen width and lambda");
  std::string checkpoint;
  double width = 1.0;
  std::optional<double> lambda;
  EvalSource src;
  bool as_json = false;
  customize->add_option("--checkpoint", checkpoint, "Base-set checkpoint directory");
  customize->add_option("-w,--width", width, "Width ratio (multiple of the base width)")->required();
  customize->add_option("-l,--lambda", lambda, "Dual-BN mixing weight in [0, 1]");
  customize->add_option("-c,--config", src.config, "Experiment config; evaluates its test split");
  customize->add_option("--data", src.data, "Dataset file to evaluate instead of the config's test split");
  customize->add_option("--format", src.format, "Dataset format: internal, csv or idx");
  customize->add_option("--labels", src.labels, "Label file for idx datasets");
  customize->add_option("--classes", src.classes, "Number of classes in the dataset file");
  customize->add_flag("--json", as_json, "Print a JSON object");
  customize->allow_extras();

  auto* report = app.add_subcommand("report", "Render tables and curve data from a results directory");
  std::string results_dir;
  report->add_option("dir", results_dir, "Results directory")->required();

  auto* sweep = app.add_subcommand("sweep", "SA/RA over the width x lambda grid of a trained base set");
  std::string lambdas, out;
  sweep->add_option("-c,--config", config, "Experiment config (JSON)")->required();
  sweep->add_option("--checkpoint", checkpoint, "Base-set checkpoint (default: <output_dir>/splitmix/checkpoint)");
  sweep->add_option("--lambdas", lambdas, "Comma-separated lambda grid (default: robustness.lambda_grid)");
  sweep->add_option("-o,--out", out, "Output CSV (default: <output_dir>/sweep/tradeoff.csv)");
  sweep->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(config, train->remaining(), quiet);
    if (*customize) return cmd_customize(checkpoint, width, lambda, src, customize->remaining(), as_json);
    if (*report) return cmd_report(results_dir, quiet);
    if (*sweep) return cmd_sweep(config, checkpoint, lambdas, out, sweep->remaining());
  } catch (const splitmix::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
