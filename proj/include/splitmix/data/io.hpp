#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "splitmix/data/dataset.hpp"
#include "splitmix/error.hpp"
#include "splitmix/nn/checkpoint.hpp"

// Supported dataset files:
//
//  idx_binary  image file: u32 BE magic 0x00000803, u32 BE N, rows, cols, then
//              N*rows*cols u8 pixels (scaled by 1/255); label file: u32 BE magic
//              0x00000801, u32 BE N, then N u8 labels.
//  csv         header row, then one sample per row: label, feature values.
//              Features are scaled by 1/255 when any exceeds 1.
//  internal    "SMXD", u32 version 1, u32 classes, i32 domain, tensor of
//              samples (checkpoint tensor encoding), u64 N, i32 labels[N];
//              little-endian.

namespace splitmix::data {

enum class DatasetFormat { idx_binary, csv, internal };

inline DatasetFormat parse_dataset_format(const std::string& s) {
  if (s == "idx" || s == "idx_binary") return DatasetFormat::idx_binary;
  if (s == "csv") return DatasetFormat::csv;
  if (s == "internal") return DatasetFormat::internal;
  throw ConfigError("dataset.format", "unknown dataset format '" + s + "'");
}

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("truncated " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return is;
}

inline void check_labels(const LabeledDataset& ds, const std::string& path) {
  for (int y : ds.y)
    if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes)
      throw DataError(path + ": label " + std::to_string(y) + " out of range [0, " +
                      std::to_string(ds.num_classes) + ")");
}

}  // namespace detail

// `num_classes` of 0 infers max label + 1.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                               std::size_t num_classes = 0) {
  auto is = detail::open_binary(images_path);
  if (detail::read_be32(is, "idx header") != 0x00000803u)
    throw DataError(images_path + ": bad idx image magic");
  const std::size_t n = detail::read_be32(is, "idx header");
  const std::size_t rows = detail::read_be32(is, "idx header");
  const std::size_t cols = detail::read_be32(is, "idx header");
  LabeledDataset ds;
  ds.x = Tensor({n, 1, rows, cols});
  std::vector<unsigned char> buf(n * rows * cols);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    throw DataError(images_path + ": truncated payload, declared " + std::to_string(n) + " images");
  for (std::size_t i = 0; i < buf.size(); ++i) ds.x[i] = buf[i] / 255.0;

  auto ls = detail::open_binary(labels_path);
  if (detail::read_be32(ls, "idx header") != 0x00000801u)
    throw DataError(labels_path + ": bad idx label magic");
  const std::size_t nl = detail::read_be32(ls, "idx header");
  if (nl != n) throw DataError(labels_path + ": " + std::to_string(nl) + " labels for " + std::to_string(n) + " images");
  std::vector<unsigned char> lb(n);
  ls.read(reinterpret_cast<char*>(lb.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(ls.gcount()) != n)
    throw DataError(labels_path + ": truncated payload, declared " + std::to_string(n) + " labels");
  int max_label = 0;
  for (auto v : lb) {
    ds.y.push_back(v);
    max_label = std::max<int>(max_label, v);
  }
  ds.num_classes = num_classes ? num_classes : static_cast<std::size_t>(max_label) + 1;
  detail::check_labels(ds, labels_path);
  return ds;
}

inline void save_idx(const LabeledDataset& ds, const std::string& images_path, const std::string& labels_path) {
  const auto put = [](std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  const auto s = ds.sample_shape();
  const std::size_t rows = s.size() >= 2 ? s[s.size() - 2] : 1, cols = s.empty() ? 1 : s.back();
  if (nn::shape_size(s) != rows * cols) throw DimensionError("idx files hold single-channel images");
  std::ofstream os(images_path, std::ios::binary);
  put(os, 0x00000803u);
  put(os, static_cast<std::uint32_t>(ds.size()));
  put(os, static_cast<std::uint32_t>(rows));
  put(os, static_cast<std::uint32_t>(cols));
  for (double v : ds.x.values()) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  std::ofstream ls(labels_path, std::ios::binary);
  put(ls, 0x00000801u);
  put(ls, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.y) ls.put(static_cast<char>(y));
}

// `sample_shape` reshapes the feature columns (e.g. {1, 8, 8}); empty keeps them flat.
inline LabeledDataset load_csv(const std::string& path, std::size_t num_classes = 0, Shape sample_shape = {}) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw DataError(path + ": missing header row");
  std::size_t columns = 1;
  for (char c : line) columns += c == ',';
  if (columns < 2) throw DataError(path + ": header needs a label and at least one feature");
  const std::size_t d = columns - 1;
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(row) + ": cannot parse '" + cell + "'");
      }
      if (col == 0) {
        if (v != std::floor(v)) throw DataError(path + ":" + std::to_string(row) + ": non-integer label");
        labels.push_back(static_cast<int>(v));
      } else {
        values.push_back(v);
      }
      ++col;
    }
    if (col != columns)
      throw DataError(path + ":" + std::to_string(row) + ": expected " + std::to_string(columns) + " columns, got " +
                      std::to_string(col));
  }
  double vmax = 0.0;
  for (double v : values) {
    if (v < 0.0) throw DataError(path + ": negative feature value");
    vmax = std::max(vmax, v);
  }
  if (vmax > 1.0)
    for (auto& v : values) v /= 255.0;
  LabeledDataset ds;
  if (sample_shape.empty()) sample_shape = {d};
  if (nn::shape_size(sample_shape) != d)
    throw ConfigError("dataset.shape", "shape " + nn::shape_str(sample_shape) + " does not hold " +
                                           std::to_string(d) + " features");
  Shape shape{labels.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  ds.x = Tensor(shape, std::move(values));
  ds.y = std::move(labels);
  int max_label = 0;
  for (int y : ds.y) max_label = std::max(max_label, y);
  ds.num_classes = num_classes ? num_classes : static_cast<std::size_t>(max_label) + 1;
  detail::check_labels(ds, path);
  ds.validate(path);
  return ds;
}

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
  std::ofstream os(path);
  const std::size_t d = nn::shape_size(ds.sample_shape());
  os << "label";
  for (std::size_t i = 0; i < d; ++i) os << ",f" << i;
  os << '\n';
  os.precision(17);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    os << ds.y[n];
    for (std::size_t i = 0; i < d; ++i) os << ',' << ds.x[n * d + i];
    os << '\n';
  }
}

inline void write_dataset(std::ostream& os, const LabeledDataset& ds) {
  os.write("SMXD", 4);
  nn::io::put_u32(os, 1);
  nn::io::put_u32(os, static_cast<std::uint32_t>(ds.num_classes));
  nn::io::put_u32(os, static_cast<std::uint32_t>(ds.domain));
  nn::io::put_tensor(os, ds.x);
  nn::io::put_u64(os, ds.y.size());
  for (int y : ds.y) nn::io::put_u32(os, static_cast<std::uint32_t>(y));
}

inline LabeledDataset read_dataset(std::istream& is, const std::string& what = "dataset") {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SMXD", 4) != 0) throw DataError(what + ": bad magic");
  if (nn::io::get_u32(is, "version") != 1) throw DataError(what + ": unsupported version");
  LabeledDataset ds;
  ds.num_classes = nn::io::get_u32(is, "class count");
  ds.domain = static_cast<int>(nn::io::get_u32(is, "domain"));
  ds.x = nn::io::get_tensor(is);
  const auto n = nn::io::get_u64(is, "label count");
  if (ds.x.rank() == 0 || ds.x.dim(0) != n) throw DataError(what + ": label count does not match samples");
  ds.y.resize(n);
  for (auto& y : ds.y) y = static_cast<int>(nn::io::get_u32(is, "labels"));
  detail::check_labels(ds, what);
  ds.validate(what);
  return ds;
}

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_dataset(os, ds);
}

struct DatasetSource {
  DatasetFormat format = DatasetFormat::internal;
  std::string path;
  std::string labels_path;  // idx only
  std::size_t num_classes = 0;
  Shape sample_shape;  // csv only
};

inline LabeledDataset load_dataset(const DatasetSource& src) {
  switch (src.format) {
    case DatasetFormat::idx_binary: return load_idx(src.path, src.labels_path, src.num_classes);
    case DatasetFormat::csv: return load_csv(src.path, src.num_classes, src.sample_shape);
    case DatasetFormat::internal: {
      auto is = detail::open_binary(src.path);
      return read_dataset(is, src.path);
    }
  }
  throw ConfigError("dataset.format", "unsupported format");
}

}  // namespace splitmix::data
