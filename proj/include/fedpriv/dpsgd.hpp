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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedpriv/datastore.hpp"
#include "fedpriv/dp_core.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/nn_core.hpp"
#include "fedpriv/random.hpp"

namespace fedpriv {

struct DpSgdConfig {
  double clip_bound = 1.0;
  PrivacyParams step_params{100.0, 1e-6};
  double learning_rate = 1e-4;
  std::uint32_t batch_size = 8;
  Adjacency adjacency = Adjacency::kAddRemove;
  // When set, the per-coordinate noise SD used verbatim instead of the
  // Gaussian calibration.
  std::optional<double> noise_override;
  // false: a public contributor whose gradients carry no noise and no spend.
  bool noisy = true;

  friend bool operator==(const DpSgdConfig&, const DpSgdConfig&) = default;
};

inline void validate_config(const DpSgdConfig& cfg) {
  if (!(cfg.clip_bound > 0.0) || std::isnan(cfg.clip_bound)) {
    throw Error(ErrorCode::kInvalidArgument, "clip bound must be > 0");
  }
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be finite and > 0");
  }
  if (cfg.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  if (cfg.noise_override &&
      (!std::isfinite(*cfg.noise_override) || *cfg.noise_override < 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "noise override must be finite and >= 0");
  }
  if (cfg.noisy) {
    ValidatePrivacyParams(cfg.step_params);
    if (cfg.step_params.delta <= 0.0 && !cfg.noise_override) {
      throw Error(ErrorCode::kGaussianRequiresDelta,
                  "noisy training needs delta > 0 or a noise override");
    }
  }
}

// The only training artifact that leaves a worker.
struct GradientRelease {
  std::uint32_t step_id = 0;
  FlatGradient vector;
  PrivacyParams spent;
  bool noisy = true;
  double clip_bound = 0.0;
  std::uint32_t batch_size = 0;

  friend bool operator==(const GradientRelease&, const GradientRelease&) = default;
};

inline void require_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kInvalidGradient, "non-finite gradient");
  }
}

// Scales g onto the L2 ball of radius c when it lies outside.
inline FlatGradient l2_clip(const FlatGradient& grad, double c) {
  if (!(c > 0.0)) throw Error(ErrorCode::kInvalidArgument, "clip bound must be > 0");
  require_finite(grad.values);
  const double norm = l2_norm(grad.values);
  if (norm <= c) return grad;
  FlatGradient out = grad;
  const double scale = c / norm;
  for (auto& x : out.values) x *= scale;
  return out;
}

// Gaussian noise SD for one release of the clipped mean over a batch of B.
// Sensitivity of the mean is C/B under add/remove and 2C/B under replace.
inline double release_sigma(const DpSgdConfig& cfg, std::size_t batch) {
  if (!cfg.noisy) return 0.0;
  if (cfg.noise_override) return *cfg.noise_override;
  const double b = static_cast<double>(batch);
  const double delta_value = cfg.adjacency == Adjacency::kReplace
                                 ? 2.0 * cfg.clip_bound / b
                                 : cfg.clip_bound / b;
  return gaussian_sigma({delta_value, cfg.adjacency}, cfg.step_params);
}

using ClipObserver = std::function<void(const FlatGradient&)>;

// Clamp, add noise, account:
//   vector = (sum_i clip(g_i, C)) / B + N(0, sigma^2 I)
// The ledger is charged step_params when noisy; on BudgetExceeded nothing is
// released and the ledger is unchanged.
inline GradientRelease dp_gradient_release(std::span<const FlatGradient> per_example,
                                           const DpSgdConfig& cfg,
                                           AccountLedger& ledger, RandomSource& rng,
                                           std::uint32_t step_id,
                                           const ClipObserver& observer = {}) {
  validate_config(cfg);
  if (per_example.empty()) throw Error(ErrorCode::kEmptyDataset, "no per-example gradients");
  const std::size_t n = per_example.front().size();
  for (const auto& g : per_example) {
    if (g.size() != n) throw Error(ErrorCode::kShapeError, "per-example gradient lengths differ");
  }
  if (cfg.noisy && !ledger.can_spend(cfg.step_params)) {
    throw Error(ErrorCode::kBudgetExceeded,
                "step " + std::to_string(step_id) + " would exceed the privacy budget");
  }

  GradientRelease release;
  release.step_id = step_id;
  release.noisy = cfg.noisy;
  release.clip_bound = cfg.clip_bound;
  release.batch_size = static_cast<std::uint32_t>(per_example.size());
  release.vector.values.assign(n, 0.0);
  auto& out = release.vector.values;
  for (const auto& g : per_example) {
    const FlatGradient clipped = l2_clip(g, cfg.clip_bound);
    if (observer) observer(clipped);
    for (std::size_t i = 0; i < n; ++i) out[i] += clipped.values[i];
  }
  const double b = static_cast<double>(per_example.size());
  for (auto& x : out) x /= b;

  const double sigma = release_sigma(cfg, per_example.size());
  if (sigma > 0.0) {
    for (auto& x : out) x += sigma * rng.gaussian();
  }
  if (cfg.noisy) {
    ledger.spend("step-" + std::to_string(step_id), cfg.step_params);
    release.spent = cfg.step_params;
  }
  return release;
}

// Per-example gradients of one batch, privatized. The update itself is not
// applied here: it happens after federation, on the averaged releases.
template <typename Batch>
GradientRelease train_step(const Network& net, const Batch& batch,
                           const DpSgdConfig& cfg, AccountLedger& ledger,
                           RandomSource& rng, std::uint32_t step_id,
                           const ClipObserver& observer = {}) {
  if (cfg.noisy && !ledger.can_spend(cfg.step_params)) {
    throw Error(ErrorCode::kBudgetExceeded,
                "step " + std::to_string(step_id) + " would exceed the privacy budget");
  }
  const auto grads = per_example_gradients(net, batch);
  return dp_gradient_release(grads, cfg, ledger, rng, step_id, observer);
}

// Shuffles sequence indices once per epoch (Fisher-Yates on rng) and hands
// out consecutive batches; the final batch of an epoch may be short.
class BatchSampler {
 public:
  BatchSampler(std::size_t n_items, std::size_t batch_size)
      : order_(n_items), batch_size_(batch_size) {
    if (n_items == 0) throw Error(ErrorCode::kEmptyDataset, "nothing to sample");
    if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = n_items;
  }

  std::size_t batches_per_epoch() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

  std::vector<std::size_t> next(RandomSource& rng) {
    if (cursor_ >= order_.size()) {
      for (std::size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1], order_[rng.uniform_index(i)]);
      }
      cursor_ = 0;
    }
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                   order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return batch;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_;
};

inline std::vector<std::reference_wrapper<const FeatureSequence>> gather(
    const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::reference_wrapper<const FeatureSequence>> batch;
  batch.reserve(indices.size());
  for (auto i : indices) batch.emplace_back(data.sequences.at(i));
  return batch;
}

// Sum of per-example gradients in batch order, divided by the batch size.
inline FlatGradient mean_gradient(std::span<const FlatGradient> grads) {
  if (grads.empty()) throw Error(ErrorCode::kEmptyDataset, "no gradients");
  FlatGradient out;
  out.values.assign(grads.front().size(), 0.0);
  for (const auto& g : grads) {
    if (g.size() != out.size()) throw Error(ErrorCode::kShapeError, "gradient lengths differ");
    for (std::size_t i = 0; i < g.size(); ++i) out.values[i] += g.values[i];
  }
  const double b = static_cast<double>(grads.size());
  for (auto& x : out.values) x /= b;
  return out;
}

// Plain mini-batch SGD with no privacy machinery (the public warm start).
inline Network warm_start(Network net, const Dataset& data, std::uint32_t epochs,
                          double lr, std::uint32_t batch_size, RandomSource& rng) {
  require_training_data(data);
  if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
  BatchSampler sampler(data.sequences.size(), batch_size);
  const std::size_t steps = std::size_t{epochs} * sampler.batches_per_epoch();
  for (std::size_t s = 0; s < steps; ++s) {
    const auto idx = sampler.next(rng);
    const auto grads = per_example_gradients(net, gather(data, idx));
    apply_update(net, mean_gradient(grads), lr);
  }
  return net;
}

inline double mean_loss(const Network& net, const Dataset& data) {
  require_training_data(data);
  double total = 0.0;
  for (const auto& s : data.sequences) total += sequence_loss(net, s);
  return total / static_cast<double>(data.sequences.size());
}

}  // namespace fedpriv
