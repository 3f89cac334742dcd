#pragma once

// Model checkpoints:
//   "FOSDCKPT" | u32 version | u32 layers | (u32 in, u32 out) * layers |
//   u32 classes | u64 D | D x f64
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "fedosd/error.hpp"
#include "fedosd/nn.hpp"

namespace fedosd {

inline constexpr char kCheckpointMagic[8] = {'F', 'O', 'S', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t& at) {
  if (in.size() < at + sizeof(T)) throw IoError("checkpoint truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  at += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const ModelParams& model) {
  model.validate();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.shapes.size()));
  for (const auto& s : model.shapes) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.in_dim));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.out_dim));
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.num_classes()));
  detail::put_le<std::uint64_t>(out, model.size());
  for (double x : model.flat) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

inline ModelParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw IoError("not a checkpoint (bad magic)");
  std::size_t at = sizeof kCheckpointMagic;
  if (detail::get_le<std::uint32_t>(bytes, at) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version");
  const auto layers = detail::get_le<std::uint32_t>(bytes, at);
  ModelParams m;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const auto in = detail::get_le<std::uint32_t>(bytes, at);
    const auto out = detail::get_le<std::uint32_t>(bytes, at);
    m.shapes.push_back({in, out});
  }
  const auto classes = detail::get_le<std::uint32_t>(bytes, at);
  const auto d = detail::get_le<std::uint64_t>(bytes, at);
  if (bytes.size() != at + d * 8) throw IoError("checkpoint payload length does not match D");
  m.flat.resize(d);
  for (auto& x : m.flat) x = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, at));
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("inconsistent checkpoint: ") + e.what());
  }
  if (m.num_classes() != classes) throw IoError("checkpoint class count does not match output layer");
  return m;
}

inline void save_checkpoint(const ModelParams& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  const std::string bytes = encode_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fedosd
