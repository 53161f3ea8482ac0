#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <future>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siesta/binary_io.hpp"
#include "siesta/error.hpp"
#include "siesta/pq/kmeans.hpp"
#include "siesta/tensor.hpp"

namespace siesta::pq {

struct PQConfig {
  std::size_t n_codebooks = 8;
  std::size_t codebook_size = 256;
  std::size_t kmeans_iters = 25;
  std::size_t restarts = 3;

  friend bool operator==(const PQConfig&, const PQConfig&) = default;
};

/// Codes for one latent tensor: rows x cols x n_codebooks bytes plus a label.
struct EncodedTensor {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t n_codebooks = 0;
  std::vector<std::uint8_t> codes;
  std::int32_t label = 0;

  static constexpr std::size_t kLabelBytes = sizeof(std::int32_t);

  std::size_t bytes() const { return codes.size() + kLabelBytes; }

  friend bool operator==(const EncodedTensor&, const EncodedTensor&) = default;
};

inline std::size_t encoded_bytes(std::size_t rows, std::size_t cols, std::size_t n_codebooks) {
  return rows * cols * n_codebooks + EncodedTensor::kLabelBytes;
}

/// Product quantizer over d-dim channel vectors with an optional orthogonal
/// pre-rotation (x -> R x before splitting into sub-vectors).
class PQCodec {
 public:
  PQCodec() = default;

  PQCodec(std::size_t dim, std::size_t n_codebooks, std::size_t codebook_size, std::vector<double> codebooks,
          std::optional<std::vector<double>> rotation = std::nullopt)
      : dim_(dim), n_codebooks_(n_codebooks), codebook_size_(codebook_size), codebooks_(std::move(codebooks)),
        rotation_(std::move(rotation)) {
    check_shape(dim, n_codebooks, codebook_size);
    if (codebooks_.size() != n_codebooks * codebook_size * sub_dim()) {
      throw ConfigError("PQCodec: codebook array has wrong size");
    }
    if (rotation_ && rotation_->size() != dim * dim) throw ConfigError("PQCodec: rotation must be d x d");
  }

  static void check_shape(std::size_t dim, std::size_t n_codebooks, std::size_t codebook_size) {
    if (n_codebooks == 0 || dim == 0) throw ConfigError("PQ: dim and n_codebooks must be positive");
    if (dim % n_codebooks != 0) {
      throw ConfigError("PQ: d=" + std::to_string(dim) + " not divisible by n_codebooks=" + std::to_string(n_codebooks));
    }
    if (codebook_size == 0 || codebook_size > 256) throw ConfigError("PQ: codebook_size must be in [1, 256]");
  }

  /// Independent k-means per subspace over N x d `vectors`.
  static PQCodec fit(const PQConfig& cfg, std::span<const double> vectors, std::size_t dim, std::uint64_t seed) {
    check_shape(dim, cfg.n_codebooks, cfg.codebook_size);
    if (vectors.size() % dim != 0) throw ConfigError("PQ fit: vector array not a multiple of d");
    const std::size_t n = vectors.size() / dim;
    if (n < cfg.codebook_size) {
      throw ConfigError("PQ fit: need N >= codebook_size (" + std::to_string(cfg.codebook_size) + "), got " +
                        std::to_string(n));
    }
    const std::size_t sub = dim / cfg.n_codebooks;
    std::vector<double> codebooks(cfg.n_codebooks * cfg.codebook_size * sub);
    std::vector<std::future<KMeansResult>> jobs;
    for (std::size_t m = 0; m < cfg.n_codebooks; ++m) {
      jobs.push_back(std::async(std::launch::deferred, [&, m] {
        auto part = extract_subspace(vectors, n, dim, m, sub);
        return kmeans(part, n, sub, {cfg.codebook_size, cfg.kmeans_iters, cfg.restarts}, derive_seed(seed, m));
      }));
    }
    for (std::size_t m = 0; m < cfg.n_codebooks; ++m) {
      auto r = jobs[m].get();
      std::copy(r.centroids.begin(), r.centroids.end(), codebooks.begin() + m * cfg.codebook_size * sub);
    }
    return PQCodec(dim, cfg.n_codebooks, cfg.codebook_size, std::move(codebooks));
  }

  /// Alternating orthogonal-Procrustes rotation / warm-started Lloyd codebook
  /// refinement. Keeps the best (rotation, codebooks) seen, so the training
  /// error never exceeds the starting error.
  PQCodec fit_rotation(std::span<const double> vectors, std::size_t iterations, std::size_t lloyd_iters = 5) const {
    using Mat = Eigen::MatrixXd;
    if (vectors.size() % dim_ != 0) throw ConfigError("fit_rotation: vector array not a multiple of d");
    const std::size_t n = vectors.size() / dim_;
    if (n == 0) throw ConfigError("fit_rotation: no vectors");
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(vectors.data(),
                                                                                               static_cast<Eigen::Index>(n),
                                                                                               static_cast<Eigen::Index>(dim_));
    PQCodec best = *this;
    if (!best.rotation_) best.rotation_ = identity(dim_);
    double best_err = best.quantization_error(vectors);
    PQCodec cur = best;

    for (std::size_t it = 0; it < iterations; ++it) {
      // Procrustes: R = argmin ||X R^T - Yhat||, Yhat = reconstruction in rotated space.
      std::vector<double> rotated = cur.rotate_all(vectors, n);
      std::vector<double> recon(rotated.size());
      std::vector<std::uint8_t> codes(n_codebooks_);
      for (std::size_t i = 0; i < n; ++i) {
        cur.quantize_rotated(std::span<const double>(rotated.data() + i * dim_, dim_), codes);
        cur.reconstruct_rotated(codes, std::span<double>(recon.data() + i * dim_, dim_));
      }
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Y(
          recon.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim_));
      const Mat M = Y.transpose() * X;  // d x d
      Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Mat R = svd.matrixU() * svd.matrixV().transpose();
      if (!R.allFinite()) R = Mat::Identity(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
      std::vector<double> rot(dim_ * dim_);
      for (std::size_t r = 0; r < dim_; ++r)
        for (std::size_t c = 0; c < dim_; ++c) rot[r * dim_ + c] = R(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      cur.rotation_ = std::move(rot);

      rotated = cur.rotate_all(vectors, n);
      const std::size_t sub = sub_dim();
      for (std::size_t m = 0; m < n_codebooks_; ++m) {
        auto part = extract_subspace(rotated, n, dim_, m, sub);
        std::vector<double> cb(cur.codebooks_.begin() + static_cast<std::ptrdiff_t>(m * codebook_size_ * sub),
                               cur.codebooks_.begin() + static_cast<std::ptrdiff_t>((m + 1) * codebook_size_ * sub));
        lloyd(part, n, sub, cb, codebook_size_, lloyd_iters);
        std::copy(cb.begin(), cb.end(), cur.codebooks_.begin() + static_cast<std::ptrdiff_t>(m * codebook_size_ * sub));
      }
      const double err = cur.quantization_error(vectors);
      if (err <= best_err) {
        best_err = err;
        best = cur;
      }
    }
    return best;
  }

  std::size_t dim() const { return dim_; }
  std::size_t n_codebooks() const { return n_codebooks_; }
  std::size_t codebook_size() const { return codebook_size_; }
  std::size_t sub_dim() const { return dim_ / n_codebooks_; }
  const std::vector<double>& codebooks() const { return codebooks_; }
  const std::optional<std::vector<double>>& rotation() const { return rotation_; }
  bool has_rotation() const { return rotation_.has_value(); }

  std::span<const double> centroid(std::size_t codebook, std::size_t code) const {
    return {codebooks_.data() + (codebook * codebook_size_ + code) * sub_dim(), sub_dim()};
  }

  /// Bytes needed to hold the codec itself.
  std::size_t model_bytes() const {
    return codebooks_.size() * sizeof(double) + (rotation_ ? rotation_->size() * sizeof(double) : 0);
  }

  template <std::floating_point T>
  void encode_vector(std::span<const T> x, std::span<std::uint8_t> codes) const {
    if (x.size() != dim_) throw ConfigError("encode: vector has " + std::to_string(x.size()) + " dims, codec expects " +
                                            std::to_string(dim_));
    if (codes.size() != n_codebooks_) throw ConfigError("encode: code buffer has wrong length");
    std::vector<double> y(dim_);
    rotate(x, y);
    quantize_rotated(y, codes);
  }

  template <std::floating_point T>
  void decode_vector(std::span<const std::uint8_t> codes, std::span<T> out) const {
    if (codes.size() != n_codebooks_ || out.size() != dim_) throw ConfigError("decode: wrong code or output length");
    for (auto c : codes) {
      if (c >= codebook_size_) throw DataError("decode: code " + std::to_string(c) + " >= codebook_size");
    }
    std::vector<double> y(dim_);
    reconstruct_rotated(codes, y);
    unrotate(y, out);
  }

  template <std::floating_point T>
  EncodedTensor encode(const LatentTensor<T>& tensor, int label = 0) const {
    if (tensor.channels() != dim_) {
      throw ConfigError("encode: tensor has " + std::to_string(tensor.channels()) + " channels, codec expects " +
                        std::to_string(dim_));
    }
    EncodedTensor enc;
    enc.rows = static_cast<std::uint32_t>(tensor.rows());
    enc.cols = static_cast<std::uint32_t>(tensor.cols());
    enc.n_codebooks = static_cast<std::uint32_t>(n_codebooks_);
    enc.label = label;
    enc.codes.resize(tensor.positions() * n_codebooks_);
    for (std::size_t p = 0; p < tensor.positions(); ++p) {
      encode_vector(tensor.vector_at(p), std::span<std::uint8_t>(enc.codes.data() + p * n_codebooks_, n_codebooks_));
    }
    return enc;
  }

  template <std::floating_point T>
  LatentTensor<T> decode(const EncodedTensor& enc) const {
    if (enc.n_codebooks != n_codebooks_) throw DataError("decode: tensor encoded with a different codebook count");
    if (enc.codes.size() != static_cast<std::size_t>(enc.rows) * enc.cols * n_codebooks_) {
      throw DataError("decode: code array length does not match dims");
    }
    LatentTensor<T> out(enc.rows, enc.cols, dim_);
    for (std::size_t p = 0; p < out.positions(); ++p) {
      decode_vector(std::span<const std::uint8_t>(enc.codes.data() + p * n_codebooks_, n_codebooks_), out.vector_at(p));
    }
    return out;
  }

  /// Mean squared reconstruction error per vector over N x d `vectors`.
  template <std::floating_point T>
  double quantization_error(std::span<const T> vectors) const {
    if (vectors.size() % dim_ != 0) throw ConfigError("quantization_error: array not a multiple of d");
    const std::size_t n = vectors.size() / dim_;
    if (n == 0) return 0.0;
    std::vector<std::uint8_t> codes(n_codebooks_);
    std::vector<double> recon(dim_);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<const T> x(vectors.data() + i * dim_, dim_);
      encode_vector(x, codes);
      decode_vector(std::span<const std::uint8_t>(codes), std::span<double>(recon));
      for (std::size_t j = 0; j < dim_; ++j) {
        const double d = static_cast<double>(x[j]) - recon[j];
        total += d * d;
      }
    }
    return total / static_cast<double>(n);
  }

  void save(std::ostream& os) const {
    binary::write_magic(os, "SPQC");
    binary::write_le<std::uint32_t>(os, kVersion);
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(n_codebooks_));
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(codebook_size_));
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
    binary::write_le<std::uint8_t>(os, rotation_ ? 1 : 0);
    for (double v : codebooks_) binary::write_le<double>(os, v);
    if (rotation_) {
      for (double v : *rotation_) binary::write_le<double>(os, v);
    }
  }

  static PQCodec load(std::istream& is) {
    binary::expect_magic(is, "SPQC", "codec file");
    const auto version = binary::read_le<std::uint32_t>(is, "codec version");
    if (version != kVersion) throw DataError("codec file: unsupported version " + std::to_string(version));
    const std::size_t ncb = binary::read_le<std::uint32_t>(is, "n_codebooks");
    const std::size_t ks = binary::read_le<std::uint32_t>(is, "codebook_size");
    const std::size_t d = binary::read_le<std::uint32_t>(is, "dim");
    const auto rot_flag = binary::read_le<std::uint8_t>(is, "rotation flag");
    try {
      check_shape(d, ncb, ks);
    } catch (const ConfigError& e) {
      throw DataError(std::string("codec file: ") + e.what());
    }
    std::vector<double> cb(ncb * ks * (d / ncb));
    for (auto& v : cb) v = binary::read_le<double>(is, "codebook");
    std::optional<std::vector<double>> rot;
    if (rot_flag) {
      rot.emplace(d * d);
      for (auto& v : *rot) v = binary::read_le<double>(is, "rotation");
    }
    return PQCodec(d, ncb, ks, std::move(cb), std::move(rot));
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    save(os);
  }
  static PQCodec load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return load(is);
  }

  friend bool operator==(const PQCodec&, const PQCodec&) = default;

  static constexpr std::uint32_t kVersion = 1;

 private:
  static std::vector<double> identity(std::size_t d) {
    std::vector<double> r(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) r[i * d + i] = 1.0;
    return r;
  }

  static std::vector<double> extract_subspace(std::span<const double> vectors, std::size_t n, std::size_t dim,
                                              std::size_t m, std::size_t sub) {
    std::vector<double> part(n * sub);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(vectors.data() + i * dim + m * sub, sub, part.data() + i * sub);
    }
    return part;
  }

  std::vector<double> rotate_all(std::span<const double> vectors, std::size_t n) const {
    std::vector<double> out(vectors.size());
    for (std::size_t i = 0; i < n; ++i) {
      rotate(std::span<const double>(vectors.data() + i * dim_, dim_), std::span<double>(out.data() + i * dim_, dim_));
    }
    return out;
  }

  template <class T>
  void rotate(std::span<const T> x, std::span<double> y) const {
    if (!rotation_) {
      for (std::size_t i = 0; i < dim_; ++i) y[i] = static_cast<double>(x[i]);
      return;
    }
    const auto& R = *rotation_;
    for (std::size_t r = 0; r < dim_; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) acc += R[r * dim_ + c] * static_cast<double>(x[c]);
      y[r] = acc;
    }
  }

  template <class T>
  void unrotate(std::span<const double> y, std::span<T> x) const {
    if (!rotation_) {
      for (std::size_t i = 0; i < dim_; ++i) x[i] = static_cast<T>(y[i]);
      return;
    }
    const auto& R = *rotation_;
    for (std::size_t c = 0; c < dim_; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < dim_; ++r) acc += R[r * dim_ + c] * y[r];
      x[c] = static_cast<T>(acc);
    }
  }

  void quantize_rotated(std::span<const double> y, std::span<std::uint8_t> codes) const {
    const std::size_t sub = sub_dim();
    for (std::size_t m = 0; m < n_codebooks_; ++m) {
      const double* x = y.data() + m * sub;
      const double* cb = codebooks_.data() + m * codebook_size_ * sub;
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < codebook_size_; ++c) {
        const double d = squared_distance(x, cb + c * sub, sub);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      codes[m] = static_cast<std::uint8_t>(best);
    }
  }

  void reconstruct_rotated(std::span<const std::uint8_t> codes, std::span<double> y) const {
    const std::size_t sub = sub_dim();
    for (std::size_t m = 0; m < n_codebooks_; ++m) {
      const double* c = codebooks_.data() + (m * codebook_size_ + codes[m]) * sub;
      std::copy_n(c, sub, y.data() + m * sub);
    }
  }

  std::size_t dim_ = 0;
  std::size_t n_codebooks_ = 0;
  std::size_t codebook_size_ = 0;
  std::vector<double> codebooks_;
  std::optional<std::vector<double>> rotation_;
};

/// Flattens the channel vectors of every tensor into an N*r*s x d array.
template <std::floating_point T>
std::vector<double> flatten_vectors(std::span<const LatentTensor<T>> tensors) {
  std::vector<double> out;
  for (const auto& t : tensors) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

}  // namespace siesta::pq
