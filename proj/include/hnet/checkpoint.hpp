#pragma once

// Checkpoint archive: a text manifest followed by the raw payload.
//
//   hnet-checkpoint 1
//   count <entries>
//   payload <bytes>
//   <name> <n> <h> <w> <c> <byte offset>     (one line per parameter)
//   end
//   <payload: little-endian IEEE-754 float32, concatenated in manifest order>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hnet/autodiff.hpp"
#include "hnet/errors.hpp"
#include "hnet/model.hpp"
#include "hnet/tensor.hpp"

namespace hnet {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::ostringstream head;
  std::size_t offset = 0;
  head << "hnet-checkpoint 1\ncount " << entries.size() << "\n";
  std::size_t total = 0;
  for (const auto& e : entries) total += e.data.size() * 4;
  head << "payload " << total << "\n";
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.find_first_of(" \t\n") != std::string::npos)
      throw IoError("checkpoint: invalid parameter name '" + e.name + "'");
    head << e.name << ' ' << e.shape.n << ' ' << e.shape.h << ' ' << e.shape.w << ' ' << e.shape.c << ' ' << offset
         << "\n";
    offset += e.data.size() * 4;
  }
  head << "end\n";
  std::string out = head.str();
  out.reserve(out.size() + total);
  for (const auto& e : entries)
    for (float f : e.data) {
      const std::uint32_t bits = detail::to_le(std::bit_cast<std::uint32_t>(f));
      char b[4];
      std::memcpy(b, &bits, 4);
      out.append(b, 4);
    }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes, const std::string& origin) {
  std::size_t pos = 0;
  const auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw IoError(origin + ": truncated checkpoint header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "hnet-checkpoint 1") throw IoError(origin + ": not an hnet checkpoint");
  std::size_t count = 0, payload = 0;
  {
    std::istringstream a(next_line()), b(next_line());
    std::string k1, k2;
    if (!(a >> k1 >> count) || k1 != "count" || !(b >> k2 >> payload) || k2 != "payload")
      throw IoError(origin + ": malformed checkpoint header");
  }
  std::vector<CheckpointEntry> entries(count);
  std::vector<std::size_t> offsets(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream l(next_line());
    auto& e = entries[i];
    if (!(l >> e.name >> e.shape.n >> e.shape.h >> e.shape.w >> e.shape.c >> offsets[i]))
      throw IoError(origin + ": malformed manifest line " + std::to_string(i + 1));
  }
  if (next_line() != "end") throw IoError(origin + ": missing manifest terminator");
  if (bytes.size() - pos != payload) throw IoError(origin + ": payload size does not match manifest");
  for (std::size_t i = 0; i < count; ++i) {
    auto& e = entries[i];
    const std::size_t n = e.shape.size();
    if (offsets[i] + n * 4 > payload) throw IoError(origin + ": entry '" + e.name + "' exceeds payload");
    e.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + pos + offsets[i] + 4 * k, 4);
      e.data[k] = std::bit_cast<float>(detail::to_le(bits));
    }
  }
  return entries;
}

template <class T>
std::vector<CheckpointEntry> snapshot(const ParameterSet<T>& params) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : params)
    out.push_back({p->name, p->value.shape(), std::vector<float>(p->value.data().begin(), p->value.data().end())});
  return out;
}

/// Copies entry values into matching parameters. Names and shapes must agree
/// one-to-one with the parameter set.
template <class T>
void restore(ParameterSet<T>& params, const std::vector<CheckpointEntry>& entries) {
  for (const auto& p : params) {
    const CheckpointEntry* hit = nullptr;
    for (const auto& e : entries)
      if (e.name == p->name) hit = &e;
    if (hit == nullptr) throw CheckpointMismatch(p->name, "checkpoint has no parameter '" + p->name + "'");
    if (hit->shape != p->value.shape())
      throw CheckpointMismatch(p->name, "parameter '" + p->name + "' has shape " + hit->shape.str() +
                                            " in checkpoint but " + p->value.shape().str() + " in model");
  }
  for (const auto& e : entries)
    if (params.find(e.name) == nullptr)
      throw CheckpointMismatch(e.name, "checkpoint parameter '" + e.name + "' does not exist in model");
  for (const auto& e : entries) {
    auto* p = params.find(e.name);
    for (std::size_t i = 0; i < e.data.size(); ++i) p->value[i] = static_cast<T>(e.data[i]);
  }
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <class T>
void save_checkpoint(const ParameterSet<T>& params, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(snapshot(params)));
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

template <class T>
void load_checkpoint(ParameterSet<T>& params, const std::filesystem::path& path) {
  restore(params, read_checkpoint(path));
}

/// Recovers the architecture hyperparameters recorded implicitly by the
/// parameter names and shapes. Spatial input size is not stored.
inline HNetConfig infer_config(const std::vector<CheckpointEntry>& entries, std::size_t height, std::size_t width) {
  const auto find = [&](const std::string& name) -> const CheckpointEntry* {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  };
  const auto* first = find("enc.b1.conv1.weight");
  if (first == nullptr) throw CheckpointMismatch("enc.b1.conv1.weight", "checkpoint lacks enc.b1.conv1.weight");
  HNetConfig c;
  c.height = height;
  c.width = width;
  c.kernel = first->shape.n;
  c.channels = first->shape.w;
  c.filters = first->shape.c;
  c.blocks = 0;
  while (find("enc.b" + std::to_string(c.blocks + 1) + ".conv1.weight") != nullptr) ++c.blocks;
  c.dense_units.clear();
  for (std::size_t i = 1;; ++i) {
    const auto* fc = find("reg.fc" + std::to_string(i) + ".weight");
    if (fc == nullptr) break;
    c.dense_units.push_back(fc->shape.c);
  }
  c.shared_parameters = find("sn2.enc.b1.conv1.weight") == nullptr;
  return c;
}

}  // namespace hnet
