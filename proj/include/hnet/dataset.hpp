#pragma once

// Two-view records, seeded splitting, and the on-disk dataset layout:
//
//   <dir>/manifest.jsonl            {"id","fx","fy","fz","split"} per line
//   <dir>/<id>_a.png, <id>_b.png    8-bit grayscale views
//   <dir>/<id>_a_mask.png, ...      8-bit masks (0 or 255)

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnet/errors.hpp"
#include "hnet/png.hpp"
#include "hnet/rng.hpp"
#include "hnet/tensor.hpp"

namespace hnet {

struct DatasetRecord {
  std::string id;
  Tensor<float> view_a, view_b;  // (1, h, w, 3) in [0, 1]
  Tensor<float> mask_a, mask_b;  // (1, h, w, 1) in {0, 1}
  std::array<double, 3> force{};  // fx, fy, fz in newtons
  std::string split;
};

struct SplitFractions {
  double train = 0.7, val = 0.15, test = 0.15;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const SplitSizes&) const = default;
};

/// val and test get round(fraction * n); train takes the remainder.
inline SplitSizes split_sizes(std::size_t n, const SplitFractions& f) {
  f.validate();
  SplitSizes s;
  s.val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  s.test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  if (s.val + s.test > n) throw ConfigError("split fractions leave no room for the training set");
  s.train = n - s.val - s.test;
  return s;
}

/// Seeded shuffle, then contiguous train/val/test slices. Returns the three
/// lists and labels each record's `split`.
inline std::array<std::vector<DatasetRecord>, 3> split_dataset(std::vector<DatasetRecord> records,
                                                               const SplitFractions& f, std::uint64_t seed) {
  if (records.empty()) throw ContractError("split_dataset: no records");
  const SplitSizes s = split_sizes(records.size(), f);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x53504C));
  rng.shuffle(std::span<std::size_t>(order));
  std::array<std::vector<DatasetRecord>, 3> out;
  static constexpr std::array<const char*, 3> kNames = {"train", "val", "test"};
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t part = k < s.train ? 0 : (k < s.train + s.val ? 1 : 2);
    DatasetRecord r = std::move(records[order[k]]);
    r.split = kNames[part];
    out[part].push_back(std::move(r));
  }
  return out;
}

namespace detail {

inline std::filesystem::path record_file(const std::filesystem::path& dir, const std::string& id, const char* suffix) {
  return dir / (id + suffix);
}

inline std::vector<float> channel0(const Tensor<float>& t) {
  const Shape s = t.shape();
  std::vector<float> out(s.h * s.w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i * s.c];
  return out;
}

inline Tensor<float> to_tensor(const GrayImage& img, std::size_t channels, bool binary) {
  Tensor<float> t(Shape{1, img.height, img.width, channels});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = binary ? (img.pixels[i] >= 128 ? 1.0f : 0.0f) : static_cast<float>(img.pixels[i]) / 255.0f;
    for (std::size_t c = 0; c < channels; ++c) t[i * channels + c] = v;
  }
  return t;
}

}  // namespace detail

inline GrayImage tensor_to_gray(const Tensor<float>& t) {
  const Shape s = t.shape();
  return GrayImage::from_unit(s.h, s.w, detail::channel0(t));
}

/// Reads an 8-bit image as (1, h, w, channels) with values in [0, 1].
inline Tensor<float> read_image_tensor(const std::filesystem::path& path, std::size_t channels = 3) {
  return detail::to_tensor(read_png(path), channels, false);
}

inline Tensor<float> read_mask_tensor(const std::filesystem::path& path) {
  return detail::to_tensor(read_png(path), 1, true);
}

inline nlohmann::ordered_json manifest_line(const DatasetRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["fx"] = r.force[0];
  j["fy"] = r.force[1];
  j["fz"] = r.force[2];
  j["split"] = r.split;
  return j;
}

inline void write_dataset(std::span<const DatasetRecord> records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& r : records) {
    if (r.id.empty() || r.id.find_first_of("/\\ \n") != std::string::npos)
      throw IoError("invalid record id '" + r.id + "'");
    write_png(detail::record_file(dir, r.id, "_a.png"), tensor_to_gray(r.view_a));
    write_png(detail::record_file(dir, r.id, "_b.png"), tensor_to_gray(r.view_b));
    write_png(detail::record_file(dir, r.id, "_a_mask.png"), tensor_to_gray(r.mask_a));
    write_png(detail::record_file(dir, r.id, "_b_mask.png"), tensor_to_gray(r.mask_b));
    manifest << manifest_line(r).dump() << '\n';
  }
  if (!manifest) throw IoError("write failed for " + (dir / "manifest.jsonl").string());
}

struct ManifestEntry {
  std::string id;
  std::array<double, 3> force{};
  std::string split;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.force = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("fz").get<double>()};
      e.split = j.at("split").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": corrupt manifest line (" + ex.what() + ")");
    }
  }
  return out;
}

/// Loads records whose split matches `split`, or every record when `split` is empty.
inline std::vector<DatasetRecord> read_dataset(const std::filesystem::path& dir, const std::string& split = "") {
  std::vector<DatasetRecord> out;
  for (const auto& e : read_manifest(dir)) {
    if (!split.empty() && e.split != split) continue;
    DatasetRecord r;
    r.id = e.id;
    r.force = e.force;
    r.split = e.split;
    const auto load = [&](const char* suffix, bool mask) {
      const auto p = detail::record_file(dir, e.id, suffix);
      if (!std::filesystem::exists(p))
        throw IoError("record '" + e.id + "': missing file " + p.filename().string());
      return mask ? read_mask_tensor(p) : read_image_tensor(p);
    };
    r.view_a = load("_a.png", false);
    r.view_b = load("_b.png", false);
    r.mask_a = load("_a_mask.png", true);
    r.mask_b = load("_b_mask.png", true);
    out.push_back(std::move(r));
  }
  return out;
}

/// FNV-1a 64 over the manifest and every referenced file, in manifest order.
inline std::uint64_t dataset_checksum(const std::filesystem::path& dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    char buf[8192];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
      for (std::streamsize i = 0; i < in.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[i]);
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(dir / "manifest.jsonl");
  for (const auto& e : read_manifest(dir))
    for (const char* s : {"_a.png", "_b.png", "_a_mask.png", "_b_mask.png"}) mix(detail::record_file(dir, e.id, s));
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
  return s;
}

}  // namespace hnet
