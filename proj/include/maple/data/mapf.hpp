// SPDX-License-Identifier: Apache-2.0
//
// MAPF matrix files: "MAPF" magic, u32 version (1), u32 rows, u32 cols,
// then rows*cols IEEE-754 float32 values, row-major, all little-endian.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "maple/errors.hpp"
#include "maple/numerics/matrix.hpp"

namespace maple {

inline constexpr std::array<char, 4> kMapfMagic{'M', 'A', 'P', 'F'};
inline constexpr std::uint32_t kMapfVersion = 1;

enum class Scale { low, high };

inline constexpr std::array<Scale, 2> kAllScales{Scale::low, Scale::high};

inline std::string_view scale_name(Scale s) { return s == Scale::low ? "low" : "high"; }

inline Scale parse_scale(std::string_view name) {
  if (name == "low") return Scale::low;
  if (name == "high") return Scale::high;
  throw ConfigError("unknown scale '" + std::string(name) + "' (expected low or high)");
}

inline std::size_t scale_index(Scale s) { return s == Scale::low ? 0 : 1; }

// One slide's instance embeddings at one scale.
struct FeatureBag {
  std::string slide_id;
  Scale scale = Scale::low;
  Matrix<float> features;

  std::size_t instances() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_mapf(const Matrix<float>& m) {
  std::vector<unsigned char> out;
  out.reserve(16 + 4 * m.size());
  out.insert(out.end(), kMapfMagic.begin(), kMapfMagic.end());
  detail::put_u32(out, kMapfVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Matrix<float> decode_mapf(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 16) throw FormatError(FormatError::Kind::truncated, origin + ": truncated MAPF header");
  if (!std::equal(kMapfMagic.begin(), kMapfMagic.end(), bytes.begin())) {
    throw FormatError(FormatError::Kind::magic, origin + ": bad magic (not a MAPF file)");
  }
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kMapfVersion) {
    throw FormatError(FormatError::Kind::version, origin + ": unsupported MAPF version " + std::to_string(version));
  }
  const std::uint64_t rows = detail::get_u32(bytes.data() + 8);
  const std::uint64_t cols = detail::get_u32(bytes.data() + 12);
  const std::uint64_t expected = 16 + 4 * rows * cols;
  if (bytes.size() < expected) {
    throw FormatError(FormatError::Kind::truncated, origin + ": truncated payload, expected " +
                                                        std::to_string(expected) + " bytes, got " +
                                                        std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError(FormatError::Kind::truncated, origin + ": trailing bytes after payload");
  }
  Matrix<float> m(rows, cols);
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t i = 0; i < m.size(); ++i, p += 4) {
    m[i] = std::bit_cast<float>(detail::get_u32(p));
    if (!std::isfinite(m[i])) {
      throw FormatError(FormatError::Kind::non_finite,
                        origin + ": non-finite value at row " + std::to_string(i / cols) + ", col " +
                            std::to_string(i % cols));
    }
  }
  return m;
}

inline void write_mapf(const std::filesystem::path& path, const Matrix<float>& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::io, "cannot open " + path.string() + " for writing");
  const auto bytes = encode_mapf(m);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path.string());
}

inline Matrix<float> read_mapf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_mapf(bytes, path.string());
}

inline FeatureBag load_feature_bag(const std::filesystem::path& path, std::size_t expected_dim,
                                   std::string slide_id = {}, Scale scale = Scale::low) {
  FeatureBag bag{std::move(slide_id), scale, read_mapf(path)};
  if (bag.features.rows() == 0) {
    throw FormatError(FormatError::Kind::empty, path.string() + ": feature bag has no instances");
  }
  if (bag.features.cols() != expected_dim) {
    throw FormatError(FormatError::Kind::dimension, path.string() + ": dimension " +
                                                        std::to_string(bag.features.cols()) +
                                                        " does not match manifest dimension " +
                                                        std::to_string(expected_dim));
  }
  return bag;
}

}  // namespace maple
