#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "increg/error.hpp"
#include "increg/gemm.hpp"
#include "increg/lowering.hpp"
#include "increg/tensor.hpp"

namespace increg {

enum class LayerKind { conv, relu, maxpool, fully_connected, softmax_xent };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::fully_connected: return "fc";
    case LayerKind::softmax_xent: return "softmax";
  }
  return "?";
}

/// Per-sample activation shape.
struct Shape3 {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  constexpr std::size_t size() const { return c * h * w; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t filters = 0;  // conv
  std::size_t kernel = 0;   // conv, square
  std::size_t stride = 1;   // conv
  std::size_t pad = 0;      // conv
  std::size_t pool_size = 2;
  std::size_t pool_stride = 2;
  std::size_t outputs = 0;  // fully connected
  bool prune_exempt = false;

  static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t stride = 1,
                        std::size_t pad = 0, bool exempt = false) {
    LayerSpec s;
    s.kind = LayerKind::conv;
    s.filters = filters;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    s.prune_exempt = exempt;
    return s;
  }
  static LayerSpec relu() { return {}; }
  static LayerSpec maxpool(std::size_t size, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool;
    s.pool_size = size;
    s.pool_stride = stride;
    return s;
  }
  static LayerSpec fully_connected(std::size_t outputs) {
    LayerSpec s;
    s.kind = LayerKind::fully_connected;
    s.outputs = outputs;
    return s;
  }
  static LayerSpec softmax_xent() {
    LayerSpec s;
    s.kind = LayerKind::softmax_xent;
    return s;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct Architecture {
  Shape3 input;
  std::vector<LayerSpec> layers;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <class T>
struct Layer {
  LayerSpec spec;
  std::string name;
  Shape3 in;
  Shape3 out;
  ConvGeometry geom;                  // conv only
  std::vector<ColumnIndex> col_map;   // conv only; dense order unless compacted
  Matrix<T> weight;                   // conv: filters x cols, fc: outputs x inputs
  std::vector<T> bias;
  Matrix<T> weight_momentum;
  std::vector<T> bias_momentum;

  bool has_params() const {
    return spec.kind == LayerKind::conv || spec.kind == LayerKind::fully_connected;
  }
  /// Dense when the lowered matrix still carries every (c, kh, kw) position.
  bool dense_columns() const { return col_map.size() == geom.lowered_cols(); }
};

namespace detail {

inline std::size_t pool_out(std::size_t in, std::size_t size, std::size_t stride) {
  return in < size ? 0 : (in - size) / stride + 1;
}

inline std::vector<std::string> layer_names(const std::vector<LayerSpec>& specs) {
  std::vector<std::string> names;
  std::size_t conv = 0, relu = 0, pool = 0, fc = 0;
  for (const auto& s : specs) {
    switch (s.kind) {
      case LayerKind::conv: names.push_back("conv" + std::to_string(++conv)); break;
      case LayerKind::relu: names.push_back("relu" + std::to_string(++relu)); break;
      case LayerKind::maxpool: names.push_back("pool" + std::to_string(++pool)); break;
      case LayerKind::fully_connected: names.push_back("fc" + std::to_string(++fc)); break;
      case LayerKind::softmax_xent: names.push_back("loss"); break;
    }
  }
  return names;
}

}  // namespace detail

/// Sequential CNN: parameters, momentum buffers and the seed used for its
/// initialization and batch order. `version` changes on every parameter update and
/// is used to reject stale forward caches.
template <class T>
class Network {
 public:
  using value_type = T;

  Network() = default;

  /// Builds the network with He-scaled Gaussian weights and zero biases.
  static Network build(const Architecture& arch, std::uint64_t seed) {
    Network net;
    net.input_ = arch.input;
    net.seed_ = seed;
    const auto names = detail::layer_names(arch.layers);
    detail::require(!arch.layers.empty() && arch.layers.back().kind == LayerKind::softmax_xent,
                    "Architecture: last layer must be softmax-xent");
    Shape3 shape = arch.input;
    detail::require(shape.size() > 0, "Architecture: empty input shape");
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      const auto& spec = arch.layers[i];
      Layer<T> layer;
      layer.spec = spec;
      layer.name = names[i];
      layer.in = shape;
      switch (spec.kind) {
        case LayerKind::conv: {
          layer.geom = {shape.c, shape.h, shape.w, spec.kernel, spec.kernel, spec.stride, spec.pad};
          detail::require(spec.filters > 0 && layer.geom.valid(),
                          "Architecture: " + layer.name + " geometry does not fit input");
          layer.col_map = full_column_map(shape.c, spec.kernel, spec.kernel);
          layer.out = {spec.filters, layer.geom.out_h(), layer.geom.out_w()};
          layer.weight = Matrix<T>(spec.filters, layer.geom.lowered_cols());
          layer.bias.assign(spec.filters, T{});
          break;
        }
        case LayerKind::relu: layer.out = shape; break;
        case LayerKind::maxpool: {
          detail::require(spec.pool_size > 0 && spec.pool_stride > 0,
                          "Architecture: bad pooling parameters");
          layer.out = {shape.c, detail::pool_out(shape.h, spec.pool_size, spec.pool_stride),
                       detail::pool_out(shape.w, spec.pool_size, spec.pool_stride)};
          detail::require(layer.out.size() > 0, "Architecture: " + layer.name + " empties the map");
          break;
        }
        case LayerKind::fully_connected: {
          detail::require(spec.outputs > 0, "Architecture: fc needs outputs");
          layer.out = {spec.outputs, 1, 1};
          layer.weight = Matrix<T>(spec.outputs, shape.size());
          layer.bias.assign(spec.outputs, T{});
          break;
        }
        case LayerKind::softmax_xent:
          detail::require(i + 1 == arch.layers.size(), "Architecture: softmax-xent must be last");
          detail::require(shape.h == 1 && shape.w == 1 && shape.c >= 2,
                          "Architecture: softmax-xent expects a class vector");
          layer.out = shape;
          break;
      }
      if (layer.has_params()) {
        const double stddev = std::sqrt(2.0 / static_cast<double>(layer.weight.cols()));
        std::normal_distribution<double> normal(0.0, stddev);
        for (auto& w : layer.weight.storage()) w = static_cast<T>(normal(rng));
        layer.weight_momentum = Matrix<T>(layer.weight.rows(), layer.weight.cols());
        layer.bias_momentum.assign(layer.bias.size(), T{});
      }
      shape = layer.out;
      net.layers_.push_back(std::move(layer));
    }
    return net;
  }

  /// Assembles a network from explicit layers (used by compaction and checkpoint
  /// loading). Shapes are trusted but checked for chain compatibility.
  static Network from_layers(Shape3 input, std::vector<Layer<T>> layers, std::uint64_t seed) {
    Network net;
    net.input_ = input;
    net.seed_ = seed;
    net.layers_ = std::move(layers);
    Shape3 shape = input;
    for (const auto& l : net.layers_) {
      detail::require(l.in == shape, "Network: " + l.name + " input shape breaks the chain");
      if (l.has_params()) {
        detail::require(l.weight_momentum.rows() == l.weight.rows() &&
                            l.weight_momentum.cols() == l.weight.cols() &&
                            l.bias_momentum.size() == l.bias.size(),
                        "Network: momentum buffer shape differs from " + l.name);
      }
      shape = l.out;
    }
    return net;
  }

  const Shape3& input_shape() const { return input_; }
  std::size_t num_classes() const { return layers_.empty() ? 0 : layers_.back().out.c; }
  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  Layer<T>& layer(std::size_t i) { return layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return layers_.at(i); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  Architecture architecture() const {
    Architecture a{input_, {}};
    for (const auto& l : layers_) a.layers.push_back(l.spec);
    return a;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  template <class U>
  Network<U> cast() const {
    std::vector<Layer<U>> out;
    for (const auto& l : layers_) {
      Layer<U> c;
      c.spec = l.spec;
      c.name = l.name;
      c.in = l.in;
      c.out = l.out;
      c.geom = l.geom;
      c.col_map = l.col_map;
      c.weight = convert<U>(l.weight);
      c.bias = convert<U, T>(std::span<const T>(l.bias));
      c.weight_momentum = convert<U>(l.weight_momentum);
      c.bias_momentum = convert<U, T>(std::span<const T>(l.bias_momentum));
      out.push_back(std::move(c));
    }
    return Network<U>::from_layers(input_, std::move(out), seed_);
  }

  friend bool operator==(const Network& a, const Network& b) {
    if (!(a.input_ == b.input_) || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (!(x.spec == y.spec) || !(x.in == y.in) || !(x.out == y.out) || x.col_map != y.col_map ||
          !(x.geom == y.geom) || !(x.weight == y.weight) || x.bias != y.bias ||
          !(x.weight_momentum == y.weight_momentum) || x.bias_momentum != y.bias_momentum)
        return false;
    }
    return true;
  }

 private:
  Shape3 input_;
  std::vector<Layer<T>> layers_;
  std::uint64_t seed_ = 0;
  std::uint64_t version_ = 0;
};

/// Everything backward needs from a forward pass.
template <class T>
struct ForwardCache {
  std::uint64_t version = 0;
  std::size_t batch = 0;
  std::vector<Tensor4<T>> inputs;                  // input of every layer
  std::vector<std::vector<std::uint32_t>> argmax;  // maxpool winners per layer
  Matrix<T> logits;
};

template <class T>
struct ForwardResult {
  Matrix<T> logits;
  ForwardCache<T> cache;
};

template <class T>
struct Gradients {
  std::vector<Matrix<T>> weight;  // empty for parameter-free layers
  std::vector<std::vector<T>> bias;
  double loss = 0.0;
};

namespace detail {

template <class T>
Tensor4<T> conv_forward(const Layer<T>& layer, const Tensor4<T>& in, Matrix<T>& lowered) {
  const std::size_t batch = in.shape().n;
  Tensor4<T> out({batch, layer.out.c, layer.out.h, layer.out.w});
  const std::size_t area = layer.geom.out_area();
  for (std::size_t b = 0; b < batch; ++b) {
    im2col_into<T>(in.sample(b), layer.geom, layer.col_map, lowered);
    auto dst = out.sample(b);
    for (std::size_t f = 0; f < layer.out.c; ++f)
      std::fill_n(dst.data() + f * area, area, layer.bias[f]);
    kernels::gemm_nn(layer.weight.rows(), area, layer.weight.cols(), layer.weight.data().data(),
                     lowered.data().data(), dst.data());
  }
  return out;
}

template <class T>
Tensor4<T> maxpool_forward(const Layer<T>& layer, const Tensor4<T>& in,
                           std::vector<std::uint32_t>* argmax) {
  const auto& s = in.shape();
  Tensor4<T> out({s.n, layer.out.c, layer.out.h, layer.out.w});
  if (argmax) argmax->assign(out.size(), 0);
  const std::size_t k = layer.spec.pool_size, st = layer.spec.pool_stride;
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < layer.out.h; ++y)
        for (std::size_t x = 0; x < layer.out.w; ++x, ++o) {
          std::size_t best = in.offset(n, c, y * st, x * st);
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::size_t idx = in.offset(n, c, y * st + dy, x * st + dx);
              if (in.data()[idx] > in.data()[best]) best = idx;
            }
          out.data()[o] = in.data()[best];
          if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
        }
  return out;
}

template <class T>
Tensor4<T> fc_forward(const Layer<T>& layer, const Tensor4<T>& in) {
  const std::size_t batch = in.shape().n;
  const std::size_t outputs = layer.weight.rows();
  Tensor4<T> out({batch, outputs, 1, 1});
  for (std::size_t b = 0; b < batch; ++b)
    std::copy(layer.bias.begin(), layer.bias.end(), out.sample(b).begin());
  kernels::gemm_nt(batch, outputs, layer.weight.cols(), in.data().data(),
                   layer.weight.data().data(), out.data().data());
  return out;
}

template <class T>
Matrix<T> run_forward(const Network<T>& net, const Tensor4<T>& batch, ForwardCache<T>* cache,
                      std::vector<double>* layer_ms) {
  const auto& in_shape = net.input_shape();
  if (batch.shape().c != in_shape.c || batch.shape().h != in_shape.h ||
      batch.shape().w != in_shape.w || batch.shape().n == 0) {
    throw InvalidArgument("forward: batch " + to_string(batch.shape()) +
                          " does not match network input");
  }
  const auto& layers = net.layers();
  if (cache) {
    cache->version = net.version();
    cache->batch = batch.shape().n;
    cache->inputs.clear();
    cache->argmax.assign(layers.size(), {});
  }
  if (layer_ms) layer_ms->assign(layers.size(), 0.0);
  Tensor4<T> act = batch;
  Matrix<T> lowered;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    const auto t0 = std::chrono::steady_clock::now();
    Tensor4<T> next;
    switch (layer.spec.kind) {
      case LayerKind::conv: next = conv_forward(layer, act, lowered); break;
      case LayerKind::relu:
        next = act;
        for (auto& v : next.storage()) v = v > T{} ? v : T{};
        break;
      case LayerKind::maxpool:
        next = maxpool_forward(layer, act, cache ? &cache->argmax[i] : nullptr);
        break;
      case LayerKind::fully_connected: next = fc_forward(layer, act); break;
      case LayerKind::softmax_xent: next = act; break;
    }
    if (layer_ms) {
      (*layer_ms)[i] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (cache) cache->inputs.push_back(std::move(act));
    act = std::move(next);
  }
  Matrix<T> logits(act.shape().n, act.shape().c, std::move(act.storage()));
  if (cache) cache->logits = logits;
  return logits;
}

}  // namespace detail

/// Forward pass keeping what backward needs.
template <class T>
ForwardResult<T> forward(const Network<T>& net, const Tensor4<T>& batch) {
  ForwardResult<T> r;
  r.logits = detail::run_forward(net, batch, &r.cache, nullptr);
  return r;
}

/// Inference-only forward pass; optionally records per-layer wall time in ms.
template <class T>
Matrix<T> infer(const Network<T>& net, const Tensor4<T>& batch,
                std::vector<double>* layer_ms = nullptr) {
  return detail::run_forward<T>(net, batch, nullptr, layer_ms);
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
template <class T>
double softmax_xent(const Matrix<T>& logits, std::span<const int> labels, Matrix<T>* dlogits) {
  const std::size_t batch = logits.rows(), classes = logits.cols();
  detail::require(labels.size() == batch, "softmax_xent: label count differs from batch");
  if (dlogits) *dlogits = Matrix<T>(batch, classes);
  double loss = 0.0;
  std::vector<double> p(classes);
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    detail::require(y >= 0 && static_cast<std::size_t>(y) < classes,
                    "softmax_xent: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits(b, c)));
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += p[c] = std::exp(logits(b, c) - mx);
    loss += std::log(z) - (static_cast<double>(logits(b, static_cast<std::size_t>(y))) - mx);
    if (dlogits) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double target = static_cast<std::size_t>(y) == c ? 1.0 : 0.0;
        (*dlogits)(b, c) = static_cast<T>((p[c] / z - target) / static_cast<double>(batch));
      }
    }
  }
  return loss / static_cast<double>(batch);
}

/// Gradient of the mean cross-entropy loss (the data term only) for every parameter.
template <class T>
Gradients<T> backward(const Network<T>& net, const ForwardCache<T>& cache,
                      std::span<const int> labels) {
  const auto& layers = net.layers();
  if (cache.version != net.version() || cache.inputs.size() != layers.size()) {
    throw ContractViolation("backward: forward cache is stale or belongs to another network");
  }
  if (labels.size() != cache.batch) {
    throw InvalidArgument("backward: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(cache.batch));
  }
  Gradients<T> g;
  g.weight.resize(layers.size());
  g.bias.resize(layers.size());
  Matrix<T> dlogits;
  g.loss = softmax_xent(cache.logits, labels, &dlogits);

  const std::size_t batch = cache.batch;
  Tensor4<T> dout({batch, dlogits.cols(), 1, 1}, std::move(dlogits.storage()));
  Matrix<T> lowered, dlowered;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& layer = layers[i];
    const Tensor4<T>& in = cache.inputs[i];
    const bool need_input_grad = i > 0;
    Tensor4<T> din;
    switch (layer.spec.kind) {
      case LayerKind::softmax_xent: din = std::move(dout); break;
      case LayerKind::relu: {
        din = std::move(dout);
        auto d = din.data();
        auto x = in.data();
        for (std::size_t k = 0; k < d.size(); ++k)
          if (!(x[k] > T{})) d[k] = T{};
        break;
      }
      case LayerKind::maxpool: {
        din = Tensor4<T>(in.shape());
        const auto& arg = cache.argmax[i];
        for (std::size_t k = 0; k < arg.size(); ++k) din.data()[arg[k]] += dout.data()[k];
        break;
      }
      case LayerKind::fully_connected: {
        const std::size_t outputs = layer.weight.rows(), inputs = layer.weight.cols();
        g.weight[i] = Matrix<T>(outputs, inputs);
        g.bias[i].assign(outputs, T{});
        kernels::gemm_tn(outputs, inputs, batch, dout.data().data(), in.data().data(),
                         g.weight[i].data().data());
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t o = 0; o < outputs; ++o) g.bias[i][o] += dout.sample(b)[o];
        if (need_input_grad) {
          din = Tensor4<T>(in.shape());
          kernels::gemm_nn(batch, inputs, outputs, dout.data().data(),
                           layer.weight.data().data(), din.data().data());
        }
        break;
      }
      case LayerKind::conv: {
        const std::size_t filters = layer.weight.rows(), cols = layer.weight.cols();
        const std::size_t area = layer.geom.out_area();
        g.weight[i] = Matrix<T>(filters, cols);
        g.bias[i].assign(filters, T{});
        if (need_input_grad) din = Tensor4<T>(in.shape());
        dlowered = Matrix<T>(cols, area);
        for (std::size_t b = 0; b < batch; ++b) {
          im2col_into<T>(in.sample(b), layer.geom, layer.col_map, lowered);
          const T* dy = dout.sample(b).data();
          kernels::gemm_nt(filters, cols, area, dy, lowered.data().data(),
                           g.weight[i].data().data());
          for (std::size_t f = 0; f < filters; ++f) {
            T acc{};
            for (std::size_t p = 0; p < area; ++p) acc += dy[f * area + p];
            g.bias[i][f] += acc;
          }
          if (need_input_grad) {
            dlowered.fill(T{});
            kernels::gemm_tn(cols, area, filters, layer.weight.data().data(), dy,
                             dlowered.data().data());
            col2im_add<T>(dlowered, layer.geom, layer.col_map, din.sample(b));
          }
        }
        break;
      }
    }
    dout = std::move(din);
  }
  return g;
}

}  // namespace increg
