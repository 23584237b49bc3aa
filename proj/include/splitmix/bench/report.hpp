#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitmix/bench/results.hpp"
#include "splitmix/error.hpp"

namespace splitmix::bench {

inline std::string display_name(const std::string& method) {
  if (method == "splitmix") return "Split-Mix";
  if (method == "sheterofl") return "SHeteroFL";
  if (method == "fedavg_individual") return "FedAvg";
  return method;
}

// 1234 -> "1.2k", 4800000 -> "4.80M".
inline std::string human_count(double n) {
  char buf[32];
  if (n >= 1e6) std::snprintf(buf, sizeof buf, "%.2fM", n / 1e6);
  else if (n >= 1e3) std::snprintf(buf, sizeof buf, "%.1fk", n / 1e3);
  else std::snprintf(buf, sizeof buf, "%.0f", n);
  return buf;
}

struct RunFiles {
  std::string method;
  std::optional<CsvTable> final_table, rounds, tradeoff, domains;
};

struct Report {
  std::string text;
  std::string curves_csv;  // method,round,width,val_acc
  std::vector<std::string> warnings;
};

namespace detail {

inline int method_rank(const std::string& m) {
  if (m == "splitmix") return 0;
  if (m == "sheterofl") return 1;
  if (m == "fedavg_individual") return 2;
  return 3;
}

inline RunFiles load_run(const fs::path& dir, std::string method, std::vector<std::string>& warnings) {
  RunFiles r;
  if (fs::exists(dir / "bundle.json")) {
    try {
      std::ifstream is(dir / "bundle.json");
      const auto j = nlohmann::json::parse(is);
      if (j.contains("method")) method = j["method"].get<std::string>();
    } catch (const std::exception&) {
      warnings.push_back(dir.string() + "/bundle.json is unreadable");
    }
  }
  r.method = method;
  const auto load = [&](const char* name, std::optional<CsvTable>& slot, bool required) {
    const auto path = dir / name;
    if (!fs::exists(path)) {
      if (required) warnings.push_back(method + ": missing " + name);
      return;
    }
    try {
      slot = read_csv_table(path);
    } catch (const std::exception& e) {
      warnings.push_back(method + ": " + e.what());
    }
  };
  load("final_table.csv", r.final_table, true);
  load("rounds.csv", r.rounds, true);
  load("domain_params.csv", r.domains, true);
  load("tradeoff.csv", r.tradeoff, false);
  return r;
}

inline bool looks_like_run(const fs::path& dir) {
  for (const char* f : {"final_table.csv", "rounds.csv", "domain_params.csv"})
    if (fs::exists(dir / f)) return true;
  return false;
}

inline std::string pad(const std::string& s, std::size_t w, bool right = true) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

// Display width of strings holding the multiplication sign.
inline std::size_t cols(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string pad_left_cols(const std::string& s, std::size_t w) {
  const auto c = cols(s);
  return c >= w ? s : s + std::string(w - c, ' ');
}

}  // namespace detail

// Finds the runs under `dir`: the directory itself if it holds result files,
// otherwise its method subdirectories.
inline std::vector<RunFiles> load_runs(const fs::path& dir, std::vector<std::string>& warnings) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a results directory");
  if (detail::looks_like_run(dir)) return {detail::load_run(dir, dir.filename().string(), warnings)};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && detail::looks_like_run(e.path())) subdirs.push_back(e.path());
  std::vector<RunFiles> runs;
  for (const auto& d : subdirs) runs.push_back(detail::load_run(d, d.filename().string(), warnings));
  std::sort(runs.begin(), runs.end(), [](const RunFiles& a, const RunFiles& b) {
    const int ra = detail::method_rank(a.method), rb = detail::method_rank(b.method);
    return ra != rb ? ra < rb : a.method < b.method;
  });
  if (runs.empty()) throw DataError("no results found in " + dir.string());
  return runs;
}

inline Report render_report(const std::vector<RunFiles>& runs, std::vector<std::string> warnings = {}) {
  std::ostringstream out;
  constexpr std::size_t kWidthCol = 7, kCell = 9;
  const std::size_t block = 3 * kCell + 2;

  // Width rows: union of all methods' widths, in numeric order.
  std::vector<std::pair<double, std::string>> widths;
  std::vector<std::map<std::string, std::vector<std::string>>> cells(runs.size());
  for (std::size_t m = 0; m < runs.size(); ++m) {
    if (!runs[m].final_table) continue;
    const auto& t = *runs[m].final_table;
    try {
      const auto cw = t.column("width"), ca = t.column("acc"), cm = t.column("macs"), cp = t.column("params");
      for (const auto& row : t.rows) {
        const auto& w = row.at(cw);
        if (std::none_of(widths.begin(), widths.end(), [&](const auto& p) { return p.second == w; }))
          widths.emplace_back(std::stod(w), w);
        char acc[32];
        std::snprintf(acc, sizeof acc, "%.2f%%", 100.0 * std::stod(row.at(ca)));
        cells[m][w] = {acc, human_count(std::stod(row.at(cm))), human_count(std::stod(row.at(cp)))};
      }
    } catch (const std::exception& e) {
      warnings.push_back(runs[m].method + ": malformed final_table.csv (" + e.what() + ")");
      cells[m].clear();
    }
  }
  std::sort(widths.begin(), widths.end());

  out << "Test accuracy, MACs and parameters by width\n\n";
  out << detail::pad("Width", kWidthCol, false);
  for (const auto& r : runs) out << " | " << detail::pad(display_name(r.method), block, false);
  out << '\n' << std::string(kWidthCol, ' ');
  for (std::size_t m = 0; m < runs.size(); ++m)
    out << " | " << detail::pad("Acc", kCell) << ' ' << detail::pad("MACs", kCell) << ' '
        << detail::pad("#Params", kCell);
  out << '\n' << std::string(kWidthCol, '-');
  for (std::size_t m = 0; m < runs.size(); ++m) out << "-+-" << std::string(block, '-');
  out << '\n';
  for (const auto& [value, w] : widths) {
    out << detail::pad_left_cols("×" + w, kWidthCol);
    for (std::size_t m = 0; m < runs.size(); ++m) {
      const auto it = cells[m].find(w);
      out << " | ";
      if (it == cells[m].end()) out << detail::pad("-", kCell) << ' ' << detail::pad("-", kCell) << ' '
                                    << detail::pad("-", kCell);
      else
        out << detail::pad(it->second[0], kCell) << ' ' << detail::pad(it->second[1], kCell) << ' '
            << detail::pad(it->second[2], kCell);
    }
    out << '\n';
  }

  // Per-domain share of parameters trained locally.
  std::vector<std::string> domains;
  std::vector<std::map<std::string, std::string>> shares(runs.size());
  for (std::size_t m = 0; m < runs.size(); ++m) {
    if (!runs[m].domains) continue;
    try {
      const auto& t = *runs[m].domains;
      const auto cd = t.column("domain"), cp = t.column("trained_percent");
      for (const auto& row : t.rows) {
        if (std::find(domains.begin(), domains.end(), row.at(cd)) == domains.end()) domains.push_back(row.at(cd));
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", std::stod(row.at(cp)));
        shares[m][row.at(cd)] = buf;
      }
    } catch (const std::exception& e) {
      warnings.push_back(runs[m].method + ": malformed domain_params.csv (" + e.what() + ")");
    }
  }
  if (!domains.empty()) {
    std::sort(domains.begin(), domains.end(), [](const auto& a, const auto& b) { return std::stoi(a) < std::stoi(b); });
    out << "\nLocally trained parameters by domain (%)\n\n" << detail::pad("Domain", kWidthCol, false);
    for (const auto& r : runs) out << " | " << detail::pad(display_name(r.method), kCell + 2, false);
    out << '\n' << std::string(kWidthCol, '-');
    for (std::size_t m = 0; m < runs.size(); ++m) out << "-+-" << std::string(kCell + 2, '-');
    out << '\n';
    for (const auto& d : domains) {
      out << detail::pad(d, kWidthCol, false);
      for (std::size_t m = 0; m < runs.size(); ++m) {
        const auto it = shares[m].find(d);
        out << " | " << detail::pad(it == shares[m].end() ? "-" : it->second, kCell + 2);
      }
      out << '\n';
    }
  }

  for (const auto& r : runs) {
    if (!r.tradeoff) continue;
    try {
      const auto& t = *r.tradeoff;
      const auto cw = t.column("width"), cl = t.column("lambda"), cs = t.column("sa"), cr = t.column("ra");
      out << '\n' << display_name(r.method) << " accuracy-robustness trade-off\n\n"
          << detail::pad("Width", kWidthCol, false) << " | " << detail::pad("Lambda", kCell) << ' '
          << detail::pad("SA", kCell) << ' ' << detail::pad("RA", kCell) << '\n'
          << std::string(kWidthCol, '-') << "-+-" << std::string(block, '-') << '\n';
      for (const auto& row : t.rows) {
        char sa[32], ra[32];
        std::snprintf(sa, sizeof sa, "%.2f%%", 100.0 * std::stod(row.at(cs)));
        std::snprintf(ra, sizeof ra, "%.2f%%", 100.0 * std::stod(row.at(cr)));
        out << detail::pad_left_cols("×" + row.at(cw), kWidthCol) << " | " << detail::pad(row.at(cl), kCell)
            << ' ' << detail::pad(sa, kCell) << ' ' << detail::pad(ra, kCell) << '\n';
      }
    } catch (const std::exception& e) {
      warnings.push_back(r.method + ": malformed tradeoff.csv (" + e.what() + ")");
    }
  }

  std::ostringstream curves;
  curves << "method,round,width,val_acc\n";
  for (const auto& r : runs) {
    if (!r.rounds) continue;
    try {
      const auto& t = *r.rounds;
      const auto cr = t.column("round"), cw = t.column("width"), ca = t.column("val_acc");
      for (const auto& row : t.rows)
        if (row.size() > ca && !row[ca].empty())
          curves << r.method << ',' << row.at(cr) << ',' << row.at(cw) << ',' << row.at(ca) << '\n';
    } catch (const std::exception& e) {
      warnings.push_back(r.method + ": malformed rounds.csv (" + e.what() + ")");
    }
  }

  if (!warnings.empty()) {
    out << "\nWarnings:\n";
    for (const auto& w : warnings) out << "  " << w << '\n';
  }
  // Drop the padding that trails the last column.
  std::string text, line;
  std::istringstream lines(out.str());
  while (std::getline(lines, line)) {
    line.erase(line.find_last_not_of(' ') + 1);
    text += line + '\n';
  }
  return {text, curves.str(), std::move(warnings)};
}

inline Report render_report(const fs::path& dir) {
  std::vector<std::string> warnings;
  auto runs = load_runs(dir, warnings);
  return render_report(runs, std::move(warnings));
}

}  // namespace splitmix::bench
