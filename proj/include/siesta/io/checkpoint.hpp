#pragma once

#include <concepts>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "siesta/binary_io.hpp"
#include "siesta/error.hpp"
#include "siesta/head/cosine_head.hpp"
#include "siesta/nn/network.hpp"

namespace siesta::io {

// Network checkpoint (little-endian):
//   "SNET" | u32 version | u32 layer_count
//   per layer: u32 kind | u64 in_dim | u64 out_dim | i32 depth_index
//   per trainable layer, in order: weights then bias as f64
// Head section appended:
//   "SHED" | u64 K | u64 dim | f64 tau | K*dim f64 weights | K u64 counters | K u8 active
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <std::floating_point T>
void write_network(std::ostream& os, const nn::Network<T>& net) {
  binary::write_magic(os, "SNET");
  binary::write_le<std::uint32_t>(os, kCheckpointVersion);
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.spec.kind));
    binary::write_le<std::uint64_t>(os, l.spec.in_dim);
    binary::write_le<std::uint64_t>(os, l.spec.out_dim);
    binary::write_le<std::int32_t>(os, l.depth_index);
  }
  for (const auto& l : net.layers()) {
    for (T v : l.weight) binary::write_le<double>(os, static_cast<double>(v));
    for (T v : l.bias) binary::write_le<double>(os, static_cast<double>(v));
  }
}

template <std::floating_point T>
nn::Network<T> read_network(std::istream& is) {
  binary::expect_magic(is, "SNET", "network checkpoint");
  const auto version = binary::read_le<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) throw DataError("network checkpoint: unsupported version");
  const auto count = binary::read_le<std::uint32_t>(is, "layer count");
  std::vector<nn::LayerSpec> specs;
  std::vector<int> depths;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = binary::read_le<std::uint32_t>(is, "layer kind");
    if (kind > 4) throw DataError("network checkpoint: unknown layer kind");
    nn::LayerSpec s{static_cast<nn::LayerKind>(kind), static_cast<std::size_t>(binary::read_le<std::uint64_t>(is)),
                    static_cast<std::size_t>(binary::read_le<std::uint64_t>(is))};
    specs.push_back(s);
    depths.push_back(binary::read_le<std::int32_t>(is, "depth"));
  }
  nn::Network<T> net;
  try {
    net = nn::Network<T>(specs, 0);
  } catch (const ConfigError& e) {
    throw DataError(std::string("network checkpoint: ") + e.what());
  }
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    auto& l = net.layers()[i];
    l.depth_index = depths[i];
    for (auto& v : l.weight) v = static_cast<T>(binary::read_le<double>(is, "weight"));
    for (auto& v : l.bias) v = static_cast<T>(binary::read_le<double>(is, "bias"));
  }
  return net;
}

template <std::floating_point T>
void write_head(std::ostream& os, const CosineHead<T>& head) {
  binary::write_magic(os, "SHED");
  binary::write_le<std::uint64_t>(os, head.num_classes());
  binary::write_le<std::uint64_t>(os, head.dim());
  binary::write_le<double>(os, static_cast<double>(head.tau()));
  for (T v : head.weights()) binary::write_le<double>(os, static_cast<double>(v));
  for (auto c : head.counts()) binary::write_le<std::uint64_t>(os, c);
  for (std::size_t k = 0; k < head.num_classes(); ++k) binary::write_le<std::uint8_t>(os, head.active(k) ? 1 : 0);
}

template <std::floating_point T>
CosineHead<T> read_head(std::istream& is) {
  binary::expect_magic(is, "SHED", "head section");
  const auto K = binary::read_le<std::uint64_t>(is, "K");
  const auto dim = binary::read_le<std::uint64_t>(is, "dim");
  const auto tau = binary::read_le<double>(is, "tau");
  if (K == 0 || dim == 0 || !(tau > 0.0)) throw DataError("head section: invalid header");
  CosineHead<T> head(K, dim, static_cast<T>(tau));
  for (auto& v : head.weights()) v = static_cast<T>(binary::read_le<double>(is, "head weight"));
  for (std::size_t k = 0; k < K; ++k) head.set_count(k, binary::read_le<std::uint64_t>(is, "counter"));
  for (std::size_t k = 0; k < K; ++k) head.set_active(k, binary::read_le<std::uint8_t>(is, "active") != 0);
  return head;
}

template <std::floating_point T>
void save_checkpoint(const std::string& path, const nn::Network<T>& net, const CosineHead<T>& head) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_network(os, net);
  write_head(os, head);
}

template <std::floating_point T>
std::pair<nn::Network<T>, CosineHead<T>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  auto net = read_network<T>(is);
  auto head = read_head<T>(is);
  return {std::move(net), std::move(head)};
}

}  // namespace siesta::io
