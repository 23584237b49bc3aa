#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitmix/bench/config.hpp"
#include "splitmix/bench/experiment.hpp"
#include "splitmix/ensemble/manifest.hpp"
#include "splitmix/error.hpp"
#include "splitmix/fed/records.hpp"

namespace splitmix::bench {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// Column layouts, one per file.
inline const std::vector<std::string> kRoundsHeader{"round", "width", "val_acc", "train_loss", "lr",
                                                    "uploaded_params", "downloaded_params", "budget_violations",
                                                    "macs", "params"};
inline const std::vector<std::string> kFinalHeader{"width", "acc", "macs", "params"};
inline const std::vector<std::string> kTradeoffHeader{"width", "lambda", "sa", "ra"};
inline const std::vector<std::string> kDomainHeader{"domain", "trained_percent", "participations"};

inline std::string fmt(double v, const char* spec = "%.6f") {
  if (!std::isfinite(v)) throw NumericError("refusing to write a non-finite value to a result file");
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string fmt_width(const nn::WidthRatio& w) { return fmt(w.value(), "%.6g"); }

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : path_(path), os_(path) {
    if (!os_) throw Error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
  }

 private:
  fs::path path_;
  std::ofstream os_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("missing column '" + name + "'");
  }
};

inline CsvTable read_csv_table(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) t.header = std::move(cells);
    else t.rows.push_back(std::move(cells));
    first = false;
  }
  if (t.header.empty()) throw DataError(path.string() + " is empty");
  return t;
}

// Writes one method's files into `dir`; returns the file names written.
inline std::vector<std::string> write_run(const fed::RunResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> files{"rounds.csv", "final_table.csv", "domain_params.csv"};
  {
    CsvWriter w(dir / "rounds.csv", kRoundsHeader);
    for (const auto& rec : r.rounds) {
      const std::vector<std::string> common{fmt(rec.train_loss), fmt(rec.lr, "%.6g"),
                                            std::to_string(rec.uploaded_params),
                                            std::to_string(rec.downloaded_params),
                                            std::to_string(rec.budget_violations)};
      if (rec.val.empty()) {
        w.row({std::to_string(rec.round), "", "", common[0], common[1], common[2], common[3], common[4], "", ""});
        continue;
      }
      for (const auto& v : rec.val)
        w.row({std::to_string(rec.round), fmt_width(v.width), fmt(v.acc), common[0], common[1], common[2], common[3],
               common[4], std::to_string(v.macs), std::to_string(v.params)});
    }
  }
  {
    CsvWriter w(dir / "final_table.csv", kFinalHeader);
    for (const auto& v : r.final_table)
      w.row({fmt_width(v.width), fmt(v.acc), std::to_string(v.macs), std::to_string(v.params)});
  }
  if (!r.tradeoff.empty()) {
    files.push_back("tradeoff.csv");
    CsvWriter w(dir / "tradeoff.csv", kTradeoffHeader);
    for (const auto& p : r.tradeoff) w.row({fmt_width(p.width), fmt(p.lambda, "%.6g"), fmt(p.sa), fmt(p.ra)});
  }
  {
    CsvWriter w(dir / "domain_params.csv", kDomainHeader);
    for (const auto& d : r.domain_params)
      w.row({std::to_string(d.domain), fmt(100.0 * d.trained_fraction, "%.4f"), std::to_string(d.participations)});
  }
  nlohmann::json meta{{"schema_version", kSchemaVersion}, {"method", r.method}, {"files", files}};
  std::ofstream(dir / "bundle.json") << meta.dump(2) << '\n';
  return files;
}

// Full bundle: config echo, one directory per method and the Split-Mix checkpoint.
inline void write_bundle(const ExperimentConfig& cfg, const ExperimentResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "config_resolved.json") << to_json(cfg).dump(2) << '\n';
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : res.runs) {
    write_run(r, dir / r.method);
    runs.push_back(r.method);
  }
  if (!res.bases.bases.empty()) ensemble::save_base_set(res.bases, dir / "splitmix" / "checkpoint");
  std::ofstream(dir / "bundle.json") << nlohmann::json{{"schema_version", kSchemaVersion}, {"runs", runs}}.dump(2)
                                     << '\n';
}

}  // namespace splitmix::bench
