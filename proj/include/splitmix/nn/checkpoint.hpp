#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "splitmix/error.hpp"
#include "splitmix/nn/model.hpp"

// Model checkpoint layout (all integers and floats little-endian):
//
//   char[4]  magic "SMXC"
//   u32      format version (1)
//   u32      arch id length, then that many bytes
//   i64      width numerator, i64 width denominator
//   u64      init seed
//   u32      parameter tensor count, then per tensor:
//              u32 rank, u64 dims[rank], f64 values[prod(dims)]
//   u32      buffer tensor count, then tensors as above
//
// Parameters and buffers appear in model declaration order.

namespace splitmix::nn {

namespace io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void need(std::istream& is, const char* what) {
  if (!is) throw DataError(std::string("truncated input while reading ") + what);
}
inline std::uint32_t get_u32(std::istream& is, const char* what = "u32") {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  need(is, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::istream& is, const char* what = "u64") {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  need(is, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is, const char* what = "f64") {
  return std::bit_cast<double>(get_u64(is, what));
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u64(os, d);
  for (double v : t.values()) put_f64(os, v);
}
inline Tensor get_tensor(std::istream& is) {
  const auto rank = get_u32(is, "tensor rank");
  if (rank > 8) throw DataError("implausible tensor rank " + std::to_string(rank));
  Shape s(rank);
  for (auto& d : s) d = get_u64(is, "tensor dims");
  Tensor t(s);
  for (auto& v : t.values()) v = get_f64(is, "tensor values");
  return t;
}

}  // namespace io

struct CheckpointHeader {
  std::string arch_id;
  WidthRatio width;
  std::uint64_t seed = 0;
};

inline void write_checkpoint(std::ostream& os, const Model& model) {
  os.write("SMXC", 4);
  io::put_u32(os, 1);
  const auto& id = model.info().arch_id;
  io::put_u32(os, static_cast<std::uint32_t>(id.size()));
  os.write(id.data(), static_cast<std::streamsize>(id.size()));
  io::put_u64(os, static_cast<std::uint64_t>(model.info().width.num()));
  io::put_u64(os, static_cast<std::uint64_t>(model.info().width.den()));
  io::put_u64(os, model.info().seed);
  const auto params = model.parameters();
  io::put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) io::put_tensor(os, p->value);
  const auto bufs = model.buffers();
  io::put_u32(os, static_cast<std::uint32_t>(bufs.size()));
  for (const auto* b : bufs) io::put_tensor(os, *b);
}

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  io::need(is, "magic");
  if (std::memcmp(magic, "SMXC", 4) != 0) throw DataError("not a model checkpoint (bad magic)");
  const auto version = io::get_u32(is, "version");
  if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version));
  CheckpointHeader h;
  const auto len = io::get_u32(is, "arch id length");
  if (len > 4096) throw DataError("implausible arch id length");
  h.arch_id.resize(len);
  is.read(h.arch_id.data(), len);
  io::need(is, "arch id");
  const auto num = static_cast<long>(io::get_u64(is, "width"));
  const auto den = static_cast<long>(io::get_u64(is, "width"));
  h.width = WidthRatio(num, den);
  h.seed = io::get_u64(is, "seed");
  return h;
}

// Loads values into `model`, which must have been built with the same
// architecture and width.
inline CheckpointHeader read_checkpoint(std::istream& is, Model& model) {
  CheckpointHeader h = read_checkpoint_header(is);
  if (h.arch_id != model.info().arch_id || !(h.width == model.info().width))
    throw DataError("checkpoint is for " + h.arch_id + " at width " + h.width.str() +
                    ", model is " + model.info().arch_id + " at " + model.info().width.str());
  auto params = model.parameters();
  if (io::get_u32(is, "parameter count") != params.size())
    throw DataError("checkpoint parameter count mismatch");
  for (auto* p : params) {
    Tensor t = io::get_tensor(is);
    if (t.shape() != p->value.shape())
      throw DataError("checkpoint shape mismatch for " + p->name + ": " + shape_str(t.shape()));
    p->value = std::move(t);
  }
  auto bufs = model.buffers();
  if (io::get_u32(is, "buffer count") != bufs.size()) throw DataError("checkpoint buffer count mismatch");
  for (auto* b : bufs) {
    Tensor t = io::get_tensor(is);
    if (t.shape() != b->shape()) throw DataError("checkpoint buffer shape mismatch");
    *b = std::move(t);
  }
  model.info().seed = h.seed;
  return h;
}

inline void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_checkpoint(os, model);
}

inline CheckpointHeader load_checkpoint(const std::string& path, Model& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_checkpoint(is, model);
}

}  // namespace splitmix::nn
