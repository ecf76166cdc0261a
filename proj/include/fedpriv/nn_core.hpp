// Copyright 2026 The fedpriv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedpriv/byte_io.hpp"
#include "fedpriv/datastore.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/random.hpp"

namespace fedpriv {

struct NetworkDims {
  std::uint32_t input_dim = 13;
  std::uint32_t hidden_dim = 200;
  std::uint32_t output_dim = 9096;

  // 4h(d + h + 1) + o(h + 1)
  std::size_t parameter_count() const {
    const std::size_t d = input_dim, h = hidden_dim, o = output_dim;
    return 4 * h * (d + h + 1) + o * (h + 1);
  }

  friend bool operator==(const NetworkDims&, const NetworkDims&) = default;
};

inline void validate_dims(const NetworkDims& dims) {
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.output_dim == 0) {
    throw Error(ErrorCode::kShapeError, "network dimensions must be >= 1");
  }
}

// One gradient vector in the network's flat parameter layout.
struct FlatGradient {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const FlatGradient&, const FlatGradient&) = default;
};

inline double l2_norm(std::span<const double> v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

// Single-layer LSTM followed by a per-frame affine output layer.
//
// All parameters live in one flat vector, in this order:
//   Wx  (4h x d, row-major)   input weights
//   Wh  (4h x h, row-major)   recurrent weights
//   b   (4h)                  gate biases
//   Wo  (o x h, row-major)    output weights
//   bo  (o)                   output biases
// Gate blocks within the 4h rows are ordered input, forget, cell candidate,
// output. FlatGradient uses the same layout.
class Network {
 public:
  explicit Network(NetworkDims dims) : dims_(dims) {
    validate_dims(dims);
    params_.assign(dims.parameter_count(), 0.0);
  }

  static Network FromParameters(NetworkDims dims, std::vector<double> params) {
    Network net(dims);
    if (params.size() != net.params_.size()) {
      throw Error(ErrorCode::kShapeError, "parameter vector has wrong length");
    }
    for (double p : params) {
      if (!std::isfinite(p)) throw Error(ErrorCode::kInvalidValue, "non-finite parameter");
    }
    net.params_ = std::move(params);
    return net;
  }

  const NetworkDims& dims() const { return dims_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<const double> parameters() const { return params_; }
  std::span<double> mutable_parameters() { return params_; }

  std::span<const double> wx() const { return segment(wx_offset(), gate_rows() * dims_.input_dim); }
  std::span<const double> wh() const { return segment(wh_offset(), gate_rows() * dims_.hidden_dim); }
  std::span<const double> bias() const { return segment(b_offset(), gate_rows()); }
  std::span<const double> wo() const { return segment(wo_offset(), std::size_t{dims_.output_dim} * dims_.hidden_dim); }
  std::span<const double> bo() const { return segment(bo_offset(), dims_.output_dim); }

  std::span<double> wx() { return msegment(wx_offset(), gate_rows() * dims_.input_dim); }
  std::span<double> wh() { return msegment(wh_offset(), gate_rows() * dims_.hidden_dim); }
  std::span<double> bias() { return msegment(b_offset(), gate_rows()); }
  std::span<double> wo() { return msegment(wo_offset(), std::size_t{dims_.output_dim} * dims_.hidden_dim); }
  std::span<double> bo() { return msegment(bo_offset(), dims_.output_dim); }

  std::size_t gate_rows() const { return 4 * std::size_t{dims_.hidden_dim}; }
  std::size_t wx_offset() const { return 0; }
  std::size_t wh_offset() const { return gate_rows() * dims_.input_dim; }
  std::size_t b_offset() const { return wh_offset() + gate_rows() * dims_.hidden_dim; }
  std::size_t wo_offset() const { return b_offset() + gate_rows(); }
  std::size_t bo_offset() const { return wo_offset() + std::size_t{dims_.output_dim} * dims_.hidden_dim; }

  friend bool operator==(const Network&, const Network&) = default;

 private:
  std::span<const double> segment(std::size_t off, std::size_t n) const {
    return std::span<const double>(params_).subspan(off, n);
  }
  std::span<double> msegment(std::size_t off, std::size_t n) {
    return std::span<double>(params_).subspan(off, n);
  }

  NetworkDims dims_;
  std::vector<double> params_;
};

// FNV-1a over the raw parameter bytes; equal hashes across replicas are the
// synchronization check.
inline std::uint64_t parameter_hash(const Network& net) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (double p : net.parameters()) {
    std::uint64_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] (fan_in = d for Wx,
// h for Wh and Wo), drawn in layout order; biases zero except the forget
// gate, which starts at 1.
inline Network init_network(const NetworkDims& dims, RandomSource& rng) {
  Network net(dims);
  auto fill = [&rng](std::span<double> w, std::uint32_t fan_in) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : w) x = limit * (2.0 * rng.uniform() - 1.0);
  };
  fill(net.wx(), dims.input_dim);
  fill(net.wh(), dims.hidden_dim);
  auto b = net.bias();
  std::fill(b.begin() + dims.hidden_dim, b.begin() + 2 * dims.hidden_dim, 1.0);
  fill(net.wo(), dims.hidden_dim);
  return net;
}

// Everything backward() needs, per timestep t (row-major, T rows).
struct ForwardCache {
  NetworkDims dims;
  std::uint64_t params_hash = 0;
  std::size_t n_frames = 0;
  std::vector<double> inputs;       // T x d
  std::vector<double> gate_pre;     // T x 4h, before nonlinearity
  std::vector<double> gates;        // T x 4h: sigmoid(i), sigmoid(f), tanh(g), sigmoid(o)
  std::vector<double> cells;        // T x h
  std::vector<double> cell_tanh;    // T x h
  std::vector<double> hidden;       // T x h
  std::vector<double> logits;       // T x o
  std::vector<double> probs;        // T x o, softmax of logits
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void softmax_row(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - m);
    z += out[k];
  }
  for (auto& p : out) p /= z;
}

}  // namespace detail

// Runs the LSTM from a zero state over `frames` (T x input_dim, row-major).
inline ForwardCache forward(const Network& net, std::span<const double> frames) {
  const std::size_t d = net.dims().input_dim;
  const std::size_t h = net.dims().hidden_dim;
  const std::size_t o = net.dims().output_dim;
  const std::size_t g4 = 4 * h;
  if (frames.empty() || frames.size() % d != 0) {
    throw Error(ErrorCode::kShapeError, "frames must be a nonempty T x input_dim block");
  }
  const std::size_t T = frames.size() / d;

  ForwardCache c;
  c.dims = net.dims();
  c.params_hash = parameter_hash(net);
  c.n_frames = T;
  c.inputs.assign(frames.begin(), frames.end());
  c.gate_pre.resize(T * g4);
  c.gates.resize(T * g4);
  c.cells.resize(T * h);
  c.cell_tanh.resize(T * h);
  c.hidden.resize(T * h);
  c.logits.resize(T * o);
  c.probs.resize(T * o);

  const auto wx = net.wx();
  const auto wh = net.wh();
  const auto b = net.bias();
  const auto wo = net.wo();
  const auto bo = net.bo();
  std::vector<double> zero_state(h, 0.0);

  for (std::size_t t = 0; t < T; ++t) {
    const double* x = &frames[t * d];
    const double* h_prev = t == 0 ? zero_state.data() : &c.hidden[(t - 1) * h];
    const double* c_prev = t == 0 ? zero_state.data() : &c.cells[(t - 1) * h];
    double* z = &c.gate_pre[t * g4];
    double* a = &c.gates[t * g4];
    for (std::size_t r = 0; r < g4; ++r) {
      double acc = b[r];
      const double* wxr = &wx[r * d];
      for (std::size_t j = 0; j < d; ++j) acc += wxr[j] * x[j];
      const double* whr = &wh[r * h];
      for (std::size_t j = 0; j < h; ++j) acc += whr[j] * h_prev[j];
      z[r] = acc;
    }
    for (std::size_t k = 0; k < h; ++k) {
      a[k] = detail::sigmoid(z[k]);
      a[h + k] = detail::sigmoid(z[h + k]);
      a[2 * h + k] = std::tanh(z[2 * h + k]);
      a[3 * h + k] = detail::sigmoid(z[3 * h + k]);
      const double cell = a[h + k] * c_prev[k] + a[k] * a[2 * h + k];
      c.cells[t * h + k] = cell;
      c.cell_tanh[t * h + k] = std::tanh(cell);
      c.hidden[t * h + k] = a[3 * h + k] * c.cell_tanh[t * h + k];
    }
    const double* ht = &c.hidden[t * h];
    double* y = &c.logits[t * o];
    for (std::size_t k = 0; k < o; ++k) {
      double acc = bo[k];
      const double* wok = &wo[k * h];
      for (std::size_t j = 0; j < h; ++j) acc += wok[j] * ht[j];
      y[k] = acc;
    }
    detail::softmax_row(std::span<const double>(y, o),
                        std::span<double>(&c.probs[t * o], o));
  }
  return c;
}

inline void check_labels(std::span<const std::uint32_t> labels, std::size_t n_frames,
                         std::uint32_t n_classes) {
  if (labels.size() != n_frames) {
    throw Error(ErrorCode::kShapeError, "label count differs from frame count");
  }
  for (auto l : labels) {
    if (l >= n_classes) throw Error(ErrorCode::kLabelError, "label out of range");
  }
}

// Mean over frames of the softmax cross-entropy, via log-sum-exp.
inline double loss(std::span<const double> logits, std::size_t n_classes,
                   std::span<const std::uint32_t> labels) {
  if (n_classes == 0 || logits.size() % n_classes != 0) {
    throw Error(ErrorCode::kShapeError, "logits are not a T x classes block");
  }
  const std::size_t T = logits.size() / n_classes;
  if (T == 0) throw Error(ErrorCode::kShapeError, "no frames");
  check_labels(labels, T, static_cast<std::uint32_t>(n_classes));
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = logits.subspan(t * n_classes, n_classes);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    total += (m + std::log(z)) - row[labels[t]];
  }
  return total / static_cast<double>(T);
}

inline double sequence_loss(const Network& net, const FeatureSequence& seq) {
  const auto cache = forward(net, seq.frames);
  return loss(cache.logits, net.dims().output_dim, seq.labels);
}

// Backpropagation through time of the mean per-frame cross-entropy.
inline FlatGradient backward(const Network& net, const ForwardCache& cache,
                             std::span<const std::uint32_t> labels) {
  if (cache.dims != net.dims() || cache.params_hash != parameter_hash(net)) {
    throw Error(ErrorCode::kCacheError, "cache was not produced by this network");
  }
  const std::size_t d = net.dims().input_dim;
  const std::size_t h = net.dims().hidden_dim;
  const std::size_t o = net.dims().output_dim;
  const std::size_t g4 = 4 * h;
  const std::size_t T = cache.n_frames;
  check_labels(labels, T, net.dims().output_dim);

  FlatGradient grad;
  grad.values.assign(net.parameter_count(), 0.0);
  double* gwx = &grad.values[net.wx_offset()];
  double* gwh = &grad.values[net.wh_offset()];
  double* gb = &grad.values[net.b_offset()];
  double* gwo = &grad.values[net.wo_offset()];
  double* gbo = &grad.values[net.bo_offset()];
  const auto wh = net.wh();
  const auto wo = net.wo();

  const double inv_t = 1.0 / static_cast<double>(T);
  std::vector<double> dy(o);
  std::vector<double> dh(h);
  std::vector<double> dc(h);
  std::vector<double> dz(g4);
  std::vector<double> dh_next(h, 0.0);
  std::vector<double> dc_next(h, 0.0);

  for (std::size_t t = T; t-- > 0;) {
    const double* p = &cache.probs[t * o];
    const double* ht = &cache.hidden[t * h];
    for (std::size_t k = 0; k < o; ++k) dy[k] = p[k] * inv_t;
    dy[labels[t]] -= inv_t;

    for (std::size_t k = 0; k < o; ++k) {
      gbo[k] += dy[k];
      double* row = &gwo[k * h];
      for (std::size_t j = 0; j < h; ++j) row[j] += dy[k] * ht[j];
    }
    for (std::size_t j = 0; j < h; ++j) {
      double acc = dh_next[j];
      for (std::size_t k = 0; k < o; ++k) acc += wo[k * h + j] * dy[k];
      dh[j] = acc;
    }

    const double* a = &cache.gates[t * g4];
    const double* ct = &cache.cell_tanh[t * h];
    for (std::size_t k = 0; k < h; ++k) {
      const double i = a[k], f = a[h + k], g = a[2 * h + k], og = a[3 * h + k];
      const double c_prev = t == 0 ? 0.0 : cache.cells[(t - 1) * h + k];
      dc[k] = dh[k] * og * (1.0 - ct[k] * ct[k]) + dc_next[k];
      dz[k] = dc[k] * g * i * (1.0 - i);
      dz[h + k] = dc[k] * c_prev * f * (1.0 - f);
      dz[2 * h + k] = dc[k] * i * (1.0 - g * g);
      dz[3 * h + k] = dh[k] * ct[k] * og * (1.0 - og);
      dc_next[k] = dc[k] * f;
    }

    const double* x = &cache.inputs[t * d];
    const double* h_prev = t == 0 ? nullptr : &cache.hidden[(t - 1) * h];
    for (std::size_t r = 0; r < g4; ++r) {
      gb[r] += dz[r];
      double* rx = &gwx[r * d];
      for (std::size_t j = 0; j < d; ++j) rx[j] += dz[r] * x[j];
      if (h_prev) {
        double* rh = &gwh[r * h];
        for (std::size_t j = 0; j < h; ++j) rh[j] += dz[r] * h_prev[j];
      }
    }
    for (std::size_t j = 0; j < h; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < g4; ++r) acc += wh[r * h + j] * dz[r];
      dh_next[j] = acc;
    }
  }
  return grad;
}

inline FlatGradient sequence_gradient(const Network& net, const FeatureSequence& seq) {
  return backward(net, forward(net, seq.frames), seq.labels);
}

// One gradient per sequence, in batch order. `batch` is any range whose
// elements bind to const FeatureSequence&.
template <typename Batch>
std::vector<FlatGradient> per_example_gradients(const Network& net, const Batch& batch) {
  std::vector<FlatGradient> out;
  for (const FeatureSequence& seq : batch) out.push_back(sequence_gradient(net, seq));
  if (out.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  return out;
}

// p <- p - lr * g over the flat layout.
inline void apply_update(Network& net, const FlatGradient& grad, double lr) {
  if (grad.size() != net.parameter_count()) {
    throw Error(ErrorCode::kShapeError, "gradient length does not match network");
  }
  auto params = net.mutable_parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad.values[i];
}

// Central differences of sequence_loss, two forward passes per parameter.
inline FlatGradient finite_difference_gradient(const Network& net,
                                               const FeatureSequence& seq,
                                               double step) {
  if (!(step >= 1e-8 && step <= 1e-3)) {
    throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be in [1e-8, 1e-3]");
  }
  Network probe = net;
  auto params = probe.mutable_parameters();
  FlatGradient grad;
  grad.values.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = sequence_loss(probe, seq);
    params[i] = saved - step;
    const double down = sequence_loss(probe, seq);
    params[i] = saved;
    grad.values[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// FDPNET01 container: "FDPNET01" | u32 d | u32 h | u32 o |
// parameter_count f64 values in flat layout, all little-endian.

inline constexpr std::string_view kNetworkMagic = "FDPNET01";

inline std::vector<std::uint8_t> encode_network(const Network& net) {
  bytes::Writer w;
  w.raw(kNetworkMagic);
  w.u32(net.dims().input_dim);
  w.u32(net.dims().hidden_dim);
  w.u32(net.dims().output_dim);
  for (double p : net.parameters()) w.f64(p);
  return w.take();
}

inline Network decode_network(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, ErrorCode::kFormatError);
  if (r.raw(kNetworkMagic.size()) != kNetworkMagic) {
    throw Error(ErrorCode::kFormatError, "bad network magic");
  }
  NetworkDims dims;
  dims.input_dim = r.u32();
  dims.hidden_dim = r.u32();
  dims.output_dim = r.u32();
  if (dims.input_dim == 0 || dims.hidden_dim == 0 || dims.output_dim == 0) {
    throw Error(ErrorCode::kFormatError, "zero network dimension");
  }
  const std::size_t n = dims.parameter_count();
  if (r.remaining() != n * 8) {
    throw Error(ErrorCode::kFormatError, "parameter block has wrong length");
  }
  std::vector<double> params(n);
  for (auto& p : params) p = r.f64();
  try {
    return Network::FromParameters(dims, std::move(params));
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormatError, e.what());
  }
}

inline void write_network(const Network& net, const std::string& path) {
  bytes::write_file(path, encode_network(net));
}

inline Network read_network(const std::string& path) {
  return decode_network(bytes::read_file(path));
}

}  // namespace fedpriv
