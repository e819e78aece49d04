#pragma once

// Versioned checkpoint container: string metadata plus named float32 arrays
// with explicit shapes, all little-endian.
//
//   "FCKP" | u32 version
//   u32 n_meta   | n_meta  x (u32 klen, key, u32 vlen, value)
//   u32 n_arrays | n_arrays x (u32 nlen, name, u8 dtype=0, u32 ndim,
//                              ndim x u32 dims, row-major float payload)

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "facegcd/common.hpp"
#include "facegcd/params.hpp"
#include "facegcd/tensor.hpp"

namespace facegcd {

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor> arrays;
};

namespace detail {
inline void ckpt_write_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline std::uint32_t ckpt_read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw DataError("truncated checkpoint");
  return v;
}
inline void ckpt_write_str(std::ofstream& f, const std::string& s) {
  ckpt_write_u32(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string ckpt_read_str(std::ifstream& f) {
  const std::uint32_t n = ckpt_read_u32(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  if (!f) throw DataError("truncated checkpoint string");
  return s;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write("FCKP", 4);
  detail::ckpt_write_u32(f, 1);
  detail::ckpt_write_u32(f, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::ckpt_write_str(f, k);
    detail::ckpt_write_str(f, v);
  }
  detail::ckpt_write_u32(f, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, t] : ck.arrays) {
    detail::ckpt_write_str(f, name);
    const std::uint8_t dtype = 0;
    f.write(reinterpret_cast<const char*>(&dtype), 1);
    detail::ckpt_write_u32(f, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) detail::ckpt_write_u32(f, static_cast<std::uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!f) throw DataError("short write on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "FCKP") throw DataError("bad checkpoint magic: " + path);
  if (detail::ckpt_read_u32(f) != 1) throw DataError("unsupported checkpoint version");
  Checkpoint ck;
  const std::uint32_t n_meta = detail::ckpt_read_u32(f);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = detail::ckpt_read_str(f);
    ck.meta[k] = detail::ckpt_read_str(f);
  }
  const std::uint32_t n_arrays = detail::ckpt_read_u32(f);
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    std::string name = detail::ckpt_read_str(f);
    std::uint8_t dtype = 0;
    f.read(reinterpret_cast<char*>(&dtype), 1);
    if (!f || dtype != 0) throw DataError("unsupported checkpoint dtype");
    const std::uint32_t ndim = detail::ckpt_read_u32(f);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(static_cast<int>(detail::ckpt_read_u32(f)));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw DataError("truncated checkpoint payload: " + name);
    ck.arrays.emplace(std::move(name), std::move(t));
  }
  return ck;
}

inline Checkpoint checkpoint_from(const ParamStore& ps,
                                  std::map<std::string, std::string> meta = {}) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (size_t i = 0; i < ps.size(); ++i) ck.arrays.emplace(ps.name_at(i), ps.at(i).val());
  return ck;
}

// Copies arrays into matching parameters. Every parameter must be present
// with an identical shape; extra checkpoint arrays are an error too.
inline void restore_into(ParamStore& ps, const Checkpoint& ck) {
  if (ck.arrays.size() != ps.size())
    throw DataError("checkpoint parameter count mismatch: file has " +
                    std::to_string(ck.arrays.size()) + ", model has " +
                    std::to_string(ps.size()));
  for (size_t i = 0; i < ps.size(); ++i) {
    auto it = ck.arrays.find(ps.name_at(i));
    if (it == ck.arrays.end()) throw DataError("checkpoint missing parameter: " + ps.name_at(i));
    ag::Var v = ps.at(i);
    if (it->second.shape() != v.val().shape())
      throw ShapeError("checkpoint shape mismatch for " + ps.name_at(i));
    v.val() = it->second;
  }
}

}  // namespace facegcd
