#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "siesta/binary_io.hpp"
#include "siesta/error.hpp"

namespace siesta::io {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;  // unsigned byte, 3 dims
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;  // unsigned byte, 1 dim

/// Grayscale image set with pixels in [0, 1].
struct ImageSet {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> pixels;  // count x rows x cols
  std::vector<int> labels;

  std::size_t count() const { return rows * cols == 0 ? 0 : pixels.size() / (rows * cols); }
  const float* image(std::size_t i) const { return pixels.data() + i * rows * cols; }
};

inline ImageSet read_idx_images(std::istream& is) {
  const auto magic = binary::read_be<std::uint32_t>(is, "IDX magic");
  if (magic != kIdxImagesMagic) throw DataError("IDX images: bad magic");
  const auto n = binary::read_be<std::uint32_t>(is, "IDX count");
  const auto rows = binary::read_be<std::uint32_t>(is, "IDX rows");
  const auto cols = binary::read_be<std::uint32_t>(is, "IDX cols");
  ImageSet set;
  set.rows = rows;
  set.cols = cols;
  const std::size_t total = static_cast<std::size_t>(n) * rows * cols;
  std::vector<unsigned char> raw(total);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(total));
  if (static_cast<std::size_t>(is.gcount()) != total) throw DataError("IDX images: truncated pixel data");
  set.pixels.resize(total);
  for (std::size_t i = 0; i < total; ++i) set.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return set;
}

inline std::vector<int> read_idx_labels(std::istream& is) {
  const auto magic = binary::read_be<std::uint32_t>(is, "IDX magic");
  if (magic != kIdxLabelsMagic) throw DataError("IDX labels: bad magic");
  const auto n = binary::read_be<std::uint32_t>(is, "IDX count");
  std::vector<unsigned char> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw DataError("IDX labels: truncated");
  return {raw.begin(), raw.end()};
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return is;
}

inline ImageSet load_idx(const std::string& images_path, const std::string& labels_path) {
  auto is = open_binary(images_path);
  auto set = read_idx_images(is);
  auto ls = open_binary(labels_path);
  set.labels = read_idx_labels(ls);
  if (set.labels.size() != set.count()) throw DataError("IDX: image and label counts differ");
  return set;
}

/// Pixels are quantized to round(255 p).
inline void write_idx_images(std::ostream& os, const ImageSet& set) {
  binary::write_be<std::uint32_t>(os, kIdxImagesMagic);
  binary::write_be<std::uint32_t>(os, static_cast<std::uint32_t>(set.count()));
  binary::write_be<std::uint32_t>(os, static_cast<std::uint32_t>(set.rows));
  binary::write_be<std::uint32_t>(os, static_cast<std::uint32_t>(set.cols));
  std::vector<char> raw(set.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float p = std::clamp(set.pixels[i], 0.0f, 1.0f);
    raw[i] = static_cast<char>(static_cast<unsigned char>(std::lround(p * 255.0f)));
  }
  os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("IDX images: write failed");
}

inline void write_idx_labels(std::ostream& os, const std::vector<int>& labels) {
  binary::write_be<std::uint32_t>(os, kIdxLabelsMagic);
  binary::write_be<std::uint32_t>(os, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) {
    if (y < 0 || y > 255) throw ConfigError("IDX labels must fit in one byte");
    os.put(static_cast<char>(y));
  }
  if (!os) throw IoError("IDX labels: write failed");
}

inline void save_idx(const ImageSet& set, const std::string& images_path, const std::string& labels_path) {
  std::ofstream is(images_path, std::ios::binary);
  if (!is) throw IoError("cannot open " + images_path + " for writing");
  write_idx_images(is, set);
  std::ofstream ls(labels_path, std::ios::binary);
  if (!ls) throw IoError("cannot open " + labels_path + " for writing");
  write_idx_labels(ls, set.labels);
}

}  // namespace siesta::io
