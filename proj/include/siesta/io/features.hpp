#pragma once

#include <concepts>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "siesta/binary_io.hpp"
#include "siesta/dataset.hpp"
#include "siesta/error.hpp"

namespace siesta::io {

// Feature file layout (little-endian):
//   "SFEA" | u32 version | u64 N | u32 r | u32 s | u32 d | u32 label_width
//   N*r*s*d f32 values (tensor-major, position-major within a tensor)
//   N labels, label_width bytes each, unsigned
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 32;

inline std::size_t feature_file_bytes(std::size_t n, std::size_t r, std::size_t s, std::size_t d,
                                      std::size_t label_width) {
  return kFeatureHeaderBytes + 4 * n * r * s * d + n * label_width;
}

inline std::uint32_t label_width_for(std::size_t num_classes) {
  if (num_classes <= 0x100) return 1;
  if (num_classes <= 0x10000) return 2;
  return 4;
}

template <std::floating_point T>
void write_features(std::ostream& os, const FeatureDataset<T>& ds, std::size_t r, std::size_t s, std::size_t d) {
  ds.validate();
  const std::uint32_t lw = label_width_for(ds.num_classes);
  binary::write_magic(os, "SFEA");
  binary::write_le<std::uint32_t>(os, kFeatureVersion);
  binary::write_le<std::uint64_t>(os, ds.size());
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  binary::write_le<std::uint32_t>(os, lw);
  for (const auto& t : ds.tensors) {
    if (t.rows() != r || t.cols() != s || t.channels() != d) throw ConfigError("write_features: tensor shape mismatch");
    for (T v : t.data()) binary::write_le<float>(os, static_cast<float>(v));
  }
  for (int y : ds.labels) {
    switch (lw) {
      case 1: binary::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(y)); break;
      case 2: binary::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(y)); break;
      default: binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(y)); break;
    }
  }
}

template <std::floating_point T>
void write_features(std::ostream& os, const FeatureDataset<T>& ds) {
  if (ds.tensors.empty()) throw ConfigError("write_features: empty dataset needs explicit dims");
  const auto& t = ds.tensors.front();
  write_features(os, ds, t.rows(), t.cols(), t.channels());
}

struct FeatureHeader {
  std::uint64_t n = 0;
  std::uint32_t rows = 0, cols = 0, channels = 0, label_width = 0;
};

template <std::floating_point T>
FeatureDataset<T> read_features(std::istream& is, std::size_t num_classes, FeatureHeader* header_out = nullptr) {
  binary::expect_magic(is, "SFEA", "feature file");
  const auto version = binary::read_le<std::uint32_t>(is, "feature version");
  if (version != kFeatureVersion) throw DataError("feature file: unsupported version " + std::to_string(version));
  FeatureHeader h;
  h.n = binary::read_le<std::uint64_t>(is, "N");
  h.rows = binary::read_le<std::uint32_t>(is, "r");
  h.cols = binary::read_le<std::uint32_t>(is, "s");
  h.channels = binary::read_le<std::uint32_t>(is, "d");
  h.label_width = binary::read_le<std::uint32_t>(is, "label width");
  if (h.rows == 0 || h.cols == 0 || h.channels == 0) throw DataError("feature file: zero tensor dimension");
  if (h.label_width != 1 && h.label_width != 2 && h.label_width != 4) throw DataError("feature file: bad label width");
  FeatureDataset<T> ds;
  ds.num_classes = num_classes;
  ds.tensors.reserve(h.n);
  const std::size_t per = static_cast<std::size_t>(h.rows) * h.cols * h.channels;
  for (std::uint64_t i = 0; i < h.n; ++i) {
    std::vector<T> v(per);
    for (auto& x : v) x = static_cast<T>(binary::read_le<float>(is, "feature value"));
    ds.tensors.emplace_back(h.rows, h.cols, h.channels, std::move(v));
  }
  int max_label = -1;
  for (std::uint64_t i = 0; i < h.n; ++i) {
    int y = 0;
    switch (h.label_width) {
      case 1: y = binary::read_le<std::uint8_t>(is, "label"); break;
      case 2: y = binary::read_le<std::uint16_t>(is, "label"); break;
      default: y = static_cast<int>(binary::read_le<std::uint32_t>(is, "label")); break;
    }
    max_label = std::max(max_label, y);
    ds.labels.push_back(y);
  }
  if (ds.num_classes == 0) ds.num_classes = static_cast<std::size_t>(max_label + 1);
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("feature file: trailing bytes");
  ds.validate();
  if (header_out) *header_out = h;
  return ds;
}

template <std::floating_point T>
void save_features(const std::string& path, const FeatureDataset<T>& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_features(os, ds);
}

template <std::floating_point T>
FeatureDataset<T> load_feature_file(const std::string& path, std::size_t num_classes = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_features<T>(is, num_classes);
}

}  // namespace siesta::io
