#pragma once

// "STEP1" checkpoint container: magic, record count, then per-tensor records
// (name length + name + rank + extents + little-endian f64 payload).
// Round trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "step/params.hpp"
#include "step/tensor.hpp"

namespace step {

namespace detail {

static_assert(sizeof(double) == 8);

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_named_tensors(const std::string& path, const NamedTensors& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write("STEP1", 5);
  detail::write_u32(os, static_cast<uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    detail::write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::write_u32(os, static_cast<uint32_t>(t.dim(i)));
    for (double v : t.data()) detail::write_f64(os, v);
  }
  if (!os) throw IoError("write failed: " + path);
}

inline NamedTensors load_named_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "STEP1", 5) != 0)
    throw ParseError("not a STEP1 checkpoint: " + path);
  const uint32_t count = detail::read_u32(is);
  NamedTensors records;
  records.reserve(count);
  for (uint32_t r = 0; r < count; ++r) {
    const uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = detail::read_u32(is);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(detail::read_u32(is));
    std::vector<double> data(static_cast<size_t>(shape_size(shape)));
    for (double& v : data) v = detail::read_f64(is);
    if (!is) throw ParseError("truncated checkpoint: " + path);
    records.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return records;
}

inline void save_checkpoint(const std::string& path, const ParameterStore& store,
                            const NamedTensors& extra = {}) {
  NamedTensors records;
  records.reserve(store.size() + extra.size());
  for (const auto& p : store.all()) records.emplace_back(p.name, p.tensor);
  for (const auto& e : extra) records.push_back(e);
  save_named_tensors(path, records);
}

// Copies values into the store's existing parameters; every parameter must be
// present with a matching shape. Returns records that matched no parameter.
inline NamedTensors load_checkpoint_into(const std::string& path, ParameterStore& store) {
  NamedTensors records = load_named_tensors(path);
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : records) by_name.emplace(name, &t);
  for (auto& p : store.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw SchemaError("checkpoint missing parameter: " + p.name);
    if (it->second->shape() != p.tensor.shape())
      throw SchemaError("checkpoint shape mismatch for " + p.name + ": " +
                        shape_str(it->second->shape()) + " vs " + shape_str(p.tensor.shape()));
    p.tensor.mutable_data() = it->second->data();
    by_name.erase(it);
  }
  NamedTensors rest;
  for (auto& [name, t] : records)
    if (by_name.count(name)) rest.emplace_back(name, t);
  return rest;
}

}  // namespace step
