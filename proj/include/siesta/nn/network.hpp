#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "siesta/error.hpp"
#include "siesta/random.hpp"
#include "siesta/tensor.hpp"

namespace siesta::nn {

enum class LayerKind : std::uint32_t { dense = 0, pointwise_conv = 1, global_avg_pool = 2, gelu = 3, flatten = 4 };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::pointwise_conv: return "pointwise_conv";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::gelu: return "gelu";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

inline bool is_trainable(LayerKind k) { return k == LayerKind::dense || k == LayerKind::pointwise_conv; }

// out_dim equals in_dim for pool and activation layers; flatten maps
// per-position channels (in_dim) to positions * channels (out_dim).
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out}; }
  static LayerSpec pointwise(std::size_t in, std::size_t out) { return {LayerKind::pointwise_conv, in, out}; }
  static LayerSpec pool(std::size_t dim) { return {LayerKind::global_avg_pool, dim, dim}; }
  static LayerSpec gelu(std::size_t dim) { return {LayerKind::gelu, dim, dim}; }
  static LayerSpec flatten(std::size_t channels, std::size_t positions) {
    return {LayerKind::flatten, channels, channels * positions};
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline bool is_reduction(LayerKind k) { return k == LayerKind::global_avg_pool || k == LayerKind::flatten; }

/// Checks that dims chain, that exactly one pool or flatten stage separates the
/// tensor-shaped prefix from the vector-shaped suffix, and that something is
/// trainable. Throws ConfigError naming the offending layer.
inline void validate_stack(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw ConfigError("network has no layers");
  std::size_t pools = 0;
  std::size_t trainable = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(s.kind) + ")";
    if (s.in_dim == 0 || s.out_dim == 0) throw ConfigError(where + ": dims must be positive");
    if (s.kind == LayerKind::flatten && s.out_dim % s.in_dim != 0) {
      throw ConfigError(where + ": out_dim must be a multiple of in_dim");
    }
    if (!is_trainable(s.kind) && s.kind != LayerKind::flatten && s.in_dim != s.out_dim) {
      throw ConfigError(where + ": pool/activation must preserve width");
    }
    if (i > 0 && specs[i - 1].out_dim != s.in_dim) {
      throw ConfigError(where + ": in_dim " + std::to_string(s.in_dim) + " does not match previous out_dim " +
                        std::to_string(specs[i - 1].out_dim));
    }
    if (is_reduction(s.kind)) ++pools;
    if (s.kind == LayerKind::pointwise_conv && pools > 0) throw ConfigError(where + ": pointwise_conv after pooling");
    if (s.kind == LayerKind::dense && pools == 0) throw ConfigError(where + ": dense before pooling");
    if (is_trainable(s.kind)) ++trainable;
  }
  if (pools != 1) throw ConfigError("network needs exactly one pool or flatten layer, found " + std::to_string(pools));
  if (trainable == 0) throw ConfigError("network has no trainable layer");
}

template <std::floating_point T>
struct Layer {
  LayerSpec spec;
  std::vector<T> weight;  // out_dim x in_dim, row-major
  std::vector<T> bias;    // out_dim
  int depth_index = -1;   // -1 for parameter-free layers
};

/// Top layers G: maps an r x s x d latent tensor to an embedding.
template <std::floating_point T>
class Network {
 public:
  Network() = default;

  /// Kaiming fan-in init, seeded. Trainable layers are numbered from the
  /// output: the last one gets `first_depth`, the one before it first_depth+1,
  /// and so on. The cosine head sits at depth 0, hence the default of 1.
  Network(std::vector<LayerSpec> specs, std::uint64_t seed, int first_depth = 1) {
    validate_stack(specs);
    Rng rng(seed);
    layers_.reserve(specs.size());
    for (const auto& s : specs) {
      Layer<T> layer;
      layer.spec = s;
      if (is_trainable(s.kind)) {
        layer.weight.resize(s.out_dim * s.in_dim);
        layer.bias.assign(s.out_dim, T(0));
        std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(s.in_dim)));
        for (auto& w : layer.weight) w = static_cast<T>(init(rng));
      }
      layers_.push_back(std::move(layer));
    }
    int depth = first_depth;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      if (is_trainable(it->spec.kind)) it->depth_index = depth++;
    }
  }

  /// pointwise_conv(d->hidden) + gelu + reduction + dense + gelu + dense(e->e).
  /// `positions` > 0 flattens the r*s grid; 0 averages it away.
  static Network default_stack(std::size_t channels, std::size_t hidden, std::size_t embed, std::uint64_t seed,
                               std::size_t positions = 0) {
    const LayerSpec reduce = positions > 0 ? LayerSpec::flatten(hidden, positions) : LayerSpec::pool(hidden);
    return Network({LayerSpec::pointwise(channels, hidden), LayerSpec::gelu(hidden), reduce,
                    LayerSpec::dense(reduce.out_dim, embed), LayerSpec::gelu(embed), LayerSpec::dense(embed, embed)},
                   seed);
  }

  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }

  std::size_t input_channels() const { return layers_.front().spec.in_dim; }
  std::size_t output_dim() const { return layers_.back().spec.out_dim; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Bumped on every parameter mutation; tapes remember the value they saw.
  std::uint64_t generation() const { return generation_; }
  void touch() { ++generation_; }

  bool all_finite() const {
    for (const auto& l : layers_) {
      for (T v : l.weight) if (!std::isfinite(v)) return false;
      for (T v : l.bias) if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (!(x.spec == y.spec) || x.weight != y.weight || x.bias != y.bias || x.depth_index != y.depth_index) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Layer<T>> layers_;
  std::uint64_t generation_ = 0;
};

// Activation block: batch x positions x channels, contiguous.
template <std::floating_point T>
struct Activation {
  std::size_t batch = 0;
  std::size_t positions = 0;
  std::size_t channels = 0;
  std::vector<T> values;
};

template <std::floating_point T>
struct Tape {
  std::uint64_t generation = 0;
  const void* owner = nullptr;
  std::vector<Activation<T>> inputs;  // input to each layer, in order
  std::size_t batch = 0;
};

template <std::floating_point T>
struct ForwardResult {
  std::vector<T> embeddings;  // batch x output_dim
  Tape<T> tape;
};

template <std::floating_point T>
struct LayerGrad {
  std::vector<T> weight;
  std::vector<T> bias;
};

template <std::floating_point T>
struct NetworkGrads {
  std::vector<LayerGrad<T>> layers;  // one per layer; empty for parameter-free layers
};

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
}

template <class T>
T gelu_grad(T x) {
  const double xd = x;
  const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
  return static_cast<T>(cdf + xd * pdf);
}

// rows x in  ->  rows x out  with  y = W x + b
template <class T>
void affine_rows(const Layer<T>& layer, const std::vector<T>& in, std::size_t rows, std::vector<T>& out) {
  const std::size_t n_in = layer.spec.in_dim;
  const std::size_t n_out = layer.spec.out_dim;
  out.assign(rows * n_out, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in.data() + r * n_in;
    T* y = out.data() + r * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      const T* w = layer.weight.data() + o * n_in;
      T acc = layer.bias[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
}

}  // namespace detail

/// Runs G over a batch. Every tensor must share spatial dims and carry
/// input_channels() channels.
template <std::floating_point T>
ForwardResult<T> forward(const Network<T>& net, std::span<const LatentTensor<T>> batch) {
  if (net.layers().empty()) throw ConfigError("forward on empty network");
  if (batch.empty()) throw UsageError("forward on empty batch");
  const std::size_t positions = batch.front().positions();
  const std::size_t channels = batch.front().channels();
  if (channels != net.input_channels()) {
    throw ConfigError("input has " + std::to_string(channels) + " channels, network expects " +
                      std::to_string(net.input_channels()));
  }
  Activation<T> act{batch.size(), positions, channels, {}};
  act.values.reserve(batch.size() * positions * channels);
  for (const auto& t : batch) {
    if (t.positions() != positions || t.channels() != channels) throw ConfigError("batch tensors differ in shape");
    act.values.insert(act.values.end(), t.data().begin(), t.data().end());
  }

  ForwardResult<T> result;
  result.tape.generation = net.generation();
  result.tape.owner = &net;
  result.tape.batch = batch.size();
  result.tape.inputs.reserve(net.layers().size());

  for (const auto& layer : net.layers()) {
    Activation<T> next{act.batch, act.positions, layer.spec.out_dim, {}};
    switch (layer.spec.kind) {
      case LayerKind::dense:
      case LayerKind::pointwise_conv:
        detail::affine_rows(layer, act.values, act.batch * act.positions, next.values);
        break;
      case LayerKind::gelu:
        next.values.resize(act.values.size());
        for (std::size_t i = 0; i < act.values.size(); ++i) next.values[i] = detail::gelu(act.values[i]);
        break;
      case LayerKind::global_avg_pool: {
        next.positions = 1;
        next.values.assign(act.batch * act.channels, T(0));
        const T scale = T(1) / static_cast<T>(act.positions);
        for (std::size_t b = 0; b < act.batch; ++b) {
          T* y = next.values.data() + b * act.channels;
          for (std::size_t p = 0; p < act.positions; ++p) {
            const T* x = act.values.data() + (b * act.positions + p) * act.channels;
            for (std::size_t c = 0; c < act.channels; ++c) y[c] += x[c];
          }
          for (std::size_t c = 0; c < act.channels; ++c) y[c] *= scale;
        }
        break;
      }
      case LayerKind::flatten:
        if (act.positions * act.channels != layer.spec.out_dim) {
          throw ConfigError("flatten expects " + std::to_string(layer.spec.out_dim) + " values per sample, got " +
                            std::to_string(act.positions * act.channels));
        }
        next.positions = 1;
        next.values = act.values;
        break;
    }
    result.tape.inputs.push_back(std::move(act));
    act = std::move(next);
  }
  result.embeddings = std::move(act.values);
  return result;
}

template <std::floating_point T>
ForwardResult<T> forward(const Network<T>& net, const std::vector<LatentTensor<T>>& batch) {
  return forward(net, std::span<const LatentTensor<T>>(batch));
}

/// Embeddings only, for inference paths that never backpropagate.
template <std::floating_point T>
std::vector<T> embed(const Network<T>& net, std::span<const LatentTensor<T>> batch) {
  return forward(net, batch).embeddings;
}

/// Exact reverse-mode pass. `output_grad` is batch x output_dim, i.e. dL/d(embeddings).
template <std::floating_point T>
NetworkGrads<T> backward(const Network<T>& net, const Tape<T>& tape, std::span<const T> output_grad) {
  if (tape.owner != &net || tape.generation != net.generation() || tape.inputs.size() != net.layers().size()) {
    throw UsageError("backward: tape does not belong to the current network state");
  }
  if (output_grad.size() != tape.batch * net.output_dim()) {
    throw UsageError("backward: output_grad has " + std::to_string(output_grad.size()) + " values, expected " +
                     std::to_string(tape.batch * net.output_dim()));
  }
  NetworkGrads<T> grads;
  grads.layers.resize(net.layers().size());
  std::vector<T> dy(output_grad.begin(), output_grad.end());
  std::vector<T> dx;

  for (std::size_t li = net.layers().size(); li-- > 0;) {
    const auto& layer = net.layers()[li];
    const auto& in = tape.inputs[li];
    switch (layer.spec.kind) {
      case LayerKind::dense:
      case LayerKind::pointwise_conv: {
        const std::size_t n_in = layer.spec.in_dim;
        const std::size_t n_out = layer.spec.out_dim;
        const std::size_t rows = in.batch * in.positions;
        auto& g = grads.layers[li];
        g.weight.assign(n_out * n_in, T(0));
        g.bias.assign(n_out, T(0));
        dx.assign(rows * n_in, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
          const T* x = in.values.data() + r * n_in;
          const T* gy = dy.data() + r * n_out;
          T* gx = dx.data() + r * n_in;
          for (std::size_t o = 0; o < n_out; ++o) {
            const T go = gy[o];
            if (go == T(0)) continue;
            g.bias[o] += go;
            T* gw = g.weight.data() + o * n_in;
            const T* w = layer.weight.data() + o * n_in;
            for (std::size_t i = 0; i < n_in; ++i) {
              gw[i] += go * x[i];
              gx[i] += go * w[i];
            }
          }
        }
        break;
      }
      case LayerKind::gelu:
        dx.resize(dy.size());
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * detail::gelu_grad(in.values[i]);
        break;
      case LayerKind::global_avg_pool: {
        dx.assign(in.batch * in.positions * in.channels, T(0));
        const T scale = T(1) / static_cast<T>(in.positions);
        for (std::size_t b = 0; b < in.batch; ++b) {
          const T* gy = dy.data() + b * in.channels;
          for (std::size_t p = 0; p < in.positions; ++p) {
            T* gx = dx.data() + (b * in.positions + p) * in.channels;
            for (std::size_t c = 0; c < in.channels; ++c) gx[c] = gy[c] * scale;
          }
        }
        break;
      }
      case LayerKind::flatten:
        dx = dy;
        break;
    }
    dy.swap(dx);
  }
  return grads;
}

}  // namespace siesta::nn
