#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "siesta/error.hpp"

namespace siesta::binary {

// Little-endian scalar I/O used by every on-disk format in this library.
template <class T>
  requires std::is_arithmetic_v<T>
void write_le(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
  if (!os) throw IoError("write failed");
}

template <class T>
  requires std::is_arithmetic_v<T>
T read_le(std::istream& is, const char* what = "value") {
  std::array<char, sizeof(T)> bytes;
  is.read(bytes.data(), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw DataError(std::string("truncated input while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <class T>
  requires std::is_arithmetic_v<T>
T read_be(std::istream& is, const char* what = "value") {
  std::array<char, sizeof(T)> bytes;
  is.read(bytes.data(), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw DataError(std::string("truncated input while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::little) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <class T>
  requires std::is_arithmetic_v<T>
void write_be(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::little) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
  if (!os) throw IoError("write failed");
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5], const char* format) {
  char got[4] = {};
  is.read(got, 4);
  if (is.gcount() != 4 || std::memcmp(got, magic, 4) != 0) {
    throw DataError(std::string("bad magic for ") + format);
  }
}

}  // namespace siesta::binary
