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
#include <cstdio>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedpriv/error.hpp"
#include "fedpriv/random.hpp"

namespace fedpriv {

// (epsilon, delta) pair. A configured step or budget must satisfy
// epsilon > 0 and 0 <= delta < 1; spend totals may be (0, 0).
struct PrivacyParams {
  double epsilon = 0.0;
  double delta = 0.0;

  friend bool operator==(const PrivacyParams&, const PrivacyParams&) = default;
};

inline void ValidatePrivacyParams(const PrivacyParams& p) {
  if (!std::isfinite(p.epsilon) || p.epsilon <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be finite and > 0");
  }
  if (!std::isfinite(p.delta) || p.delta < 0.0 || p.delta >= 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "delta must lie in [0, 1)");
  }
}

struct ClampBounds {
  double lower = 0.0;
  double upper = 0.0;

  double width() const { return upper - lower; }
};

inline void ValidateBounds(const ClampBounds& b) {
  if (!std::isfinite(b.lower) || !std::isfinite(b.upper) ||
      !(b.lower < b.upper)) {
    throw Error(ErrorCode::kInvalidArgument,
                "clamp bounds must be finite with lower < upper");
  }
}

// AddRemove: neighbours differ by one added or removed individual.
// Replace: neighbours differ by one edited individual.
enum class Adjacency { kAddRemove, kReplace };

struct Sensitivity {
  double value = 0.0;
  Adjacency adjacency = Adjacency::kAddRemove;
};

inline double clamp(double x, const ClampBounds& bounds) {
  ValidateBounds(bounds);
  if (std::isnan(x)) throw Error(ErrorCode::kInvalidValue, "clamp of NaN");
  return std::min(std::max(x, bounds.lower), bounds.upper);
}

// Sensitivity of the clamped mean over a dataset known to hold n records.
// Both conventions give (U - L) / n: one record can move the clamped mean
// by at most the bound width divided by the record count.
inline Sensitivity mean_sensitivity(const ClampBounds& bounds, std::size_t n,
                                    Adjacency adjacency = Adjacency::kAddRemove) {
  ValidateBounds(bounds);
  if (n == 0) throw Error(ErrorCode::kEmptyDataset, "mean over zero records");
  return {bounds.width() / static_cast<double>(n), adjacency};
}

inline double laplace_sample(double scale, RandomSource& rng) {
  if (!std::isfinite(scale) || scale <= 0.0) {
    throw Error(ErrorCode::kInvalidScale, "Laplace scale must be > 0");
  }
  return rng.laplace(scale);
}

inline double gaussian_sample(double sigma, RandomSource& rng) {
  if (!std::isfinite(sigma) || sigma <= 0.0) {
    throw Error(ErrorCode::kInvalidScale, "Gaussian sigma must be > 0");
  }
  return sigma * rng.gaussian();
}

// Classic Gaussian mechanism calibration, sigma = D * sqrt(2 ln(1.25/delta)) / eps.
// The analysis behind it covers eps <= 1; larger eps is accepted as a
// convention and callers needing a specific sigma use an explicit override.
inline double gaussian_sigma(const Sensitivity& sensitivity,
                             const PrivacyParams& params) {
  ValidatePrivacyParams(params);
  if (params.delta <= 0.0) {
    throw Error(ErrorCode::kGaussianRequiresDelta,
                "the Gaussian mechanism needs delta > 0");
  }
  if (!std::isfinite(sensitivity.value) || sensitivity.value < 0.0) {
    throw Error(ErrorCode::kInvalidValue, "sensitivity must be finite and >= 0");
  }
  return sensitivity.value * std::sqrt(2.0 * std::log(1.25 / params.delta)) /
         params.epsilon;
}

inline double clamped_mean(std::span<const double> values,
                           const ClampBounds& bounds) {
  if (values.empty()) throw Error(ErrorCode::kEmptyDataset, "mean of no values");
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidValue, "non-finite input to DP mean");
    }
    sum += clamp(v, bounds);
  }
  return sum / static_cast<double>(values.size());
}

// Laplace scale of the DP mean: (U - L) / (N * eps).
inline double dp_mean_noise_scale(const ClampBounds& bounds, std::size_t n,
                                  double epsilon) {
  if (!std::isfinite(epsilon) || epsilon <= 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be finite and > 0");
  }
  return mean_sensitivity(bounds, n).value / epsilon;
}

// Clamped mean plus Laplace(scale) noise. scale == 0 releases the clamped
// mean itself and draws nothing from rng.
inline double dp_mean_with_scale(std::span<const double> values,
                                 const ClampBounds& bounds, double scale,
                                 RandomSource& rng) {
  const double mean = clamped_mean(values, bounds);
  if (scale == 0.0) return mean;
  return mean + laplace_sample(scale, rng);
}

// (eps, 0)-DP mean: sum(clamp(x_i)) / N + Lap((U - L) / (N eps)).
inline double dp_mean(std::span<const double> values, const ClampBounds& bounds,
                      double epsilon, RandomSource& rng) {
  if (values.empty()) throw Error(ErrorCode::kEmptyDataset, "mean of no values");
  return dp_mean_with_scale(values, bounds,
                            dp_mean_noise_scale(bounds, values.size(), epsilon),
                            rng);
}

// Exact floating-point accumulator (Shewchuk expansions). value() is the
// correctly rounded sum of everything added, independent of add order.
class ExactSum {
 public:
  void add(double x) {
    std::size_t used = 0;
    for (double y : partials_) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[used++] = lo;
      x = hi;
    }
    partials_.resize(used);
    partials_.push_back(x);
  }

  double value() const {
    std::size_t n = partials_.size();
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    // Round-half-even correction when the remaining tail pushes past a tie.
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) ||
                  (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

  // Sign of (sum - bound), computed exactly.
  bool exceeds(double bound) const {
    ExactSum diff = *this;
    diff.add(-bound);
    return diff.value() > 0.0;
  }

 private:
  std::vector<double> partials_;
};

struct LedgerEntry {
  std::string label;
  PrivacyParams params;
};

// Running account of privacy spend under linear composition. Totals are
// kept exactly, so spent() is the correctly rounded sum of the entries and
// carries no accumulated rounding error.
class AccountLedger {
 public:
  explicit AccountLedger(PrivacyParams budget) : budget_(budget) {
    if (!std::isfinite(budget.epsilon) || budget.epsilon < 0.0 ||
        !std::isfinite(budget.delta) || budget.delta < 0.0 ||
        budget.delta >= 1.0) {
      throw Error(ErrorCode::kInvalidArgument, "invalid privacy budget");
    }
  }

  const PrivacyParams& budget() const { return budget_; }
  PrivacyParams spent() const { return {eps_.value(), delta_.value()}; }
  const std::vector<LedgerEntry>& entries() const { return entries_; }

  bool can_spend(const PrivacyParams& step) const {
    ExactSum eps = eps_;
    ExactSum delta = delta_;
    eps.add(step.epsilon);
    delta.add(step.delta);
    // Compared in reported arithmetic: the correctly rounded total may not
    // exceed the budget, so a budget written as k * step admits k steps.
    return eps.value() <= budget_.epsilon && delta.value() <= budget_.delta;
  }

  // Records one release. On BudgetExceeded the ledger is left untouched.
  void spend(std::string label, const PrivacyParams& step) {
    ValidatePrivacyParams(step);
    if (!can_spend(step)) {
      throw Error(ErrorCode::kBudgetExceeded,
                  "step '" + label + "' would exceed the privacy budget");
    }
    eps_.add(step.epsilon);
    delta_.add(step.delta);
    entries_.push_back({std::move(label), step});
  }

  // Text report: a header with the budget, then one line per entry with
  // label, epsilon, delta and the cumulative totals, tab separated.
  std::string report() const {
    std::ostringstream out;
    out << "# budget\t" << Fmt(budget_.epsilon) << '\t' << Fmt(budget_.delta)
        << '\n';
    out << "# label\tepsilon\tdelta\tcumulative_epsilon\tcumulative_delta\n";
    ExactSum eps;
    ExactSum delta;
    for (const auto& e : entries_) {
      eps.add(e.params.epsilon);
      delta.add(e.params.delta);
      out << e.label << '\t' << Fmt(e.params.epsilon) << '\t'
          << Fmt(e.params.delta) << '\t' << Fmt(eps.value()) << '\t'
          << Fmt(delta.value()) << '\n';
    }
    return out.str();
  }

 private:
  static std::string Fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  PrivacyParams budget_;
  ExactSum eps_;
  ExactSum delta_;
  std::vector<LedgerEntry> entries_;
};

// Value-returning composition: the input ledger is never modified.
inline AccountLedger compose(const AccountLedger& ledger, std::string label,
                             const PrivacyParams& step) {
  AccountLedger next = ledger;
  next.spend(std::move(label), step);
  return next;
}

// ---------------------------------------------------------------------------
// Empirical distinguishability probe (test oracle).

struct ProbeOptions {
  std::size_t n_samples = 1'000'000;
  std::size_t n_bins = 20;
  // Bins whose numerator count is below this are statistically unresolvable
  // and are left out of max_ratio (they still count toward violated_mass).
  std::size_t min_count = 2000;
  // Multiplicative slack on e^eps used when tallying violated_mass.
  double slack = 1.15;
};

struct ProbeReport {
  double max_ratio = 0.0;
  double violated_mass = 0.0;
  std::size_t resolved_bins = 0;
};

// True when the multisets differ by at most one record (one added, removed
// or replaced).
inline bool differ_by_at_most_one(std::span<const double> a,
                                  std::span<const double> b) {
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::size_t only_a = 0;
  std::size_t only_b = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < sa.size() && j < sb.size()) {
    if (sa[i] == sb[j]) {
      ++i;
      ++j;
    } else if (sa[i] < sb[j]) {
      ++only_a;
      ++i;
    } else {
      ++only_b;
      ++j;
    }
  }
  only_a += sa.size() - i;
  only_b += sb.size() - j;
  return only_a <= 1 && only_b <= 1;
}

// Draws n_samples releases of mechanism(d) and of mechanism(d_adjacent),
// histograms both over shared equal-width bins spanning all draws, and
// reports the largest per-bin probability ratio in either direction with
// delta folded in as a per-bin floor of delta / n_bins.
template <typename Mechanism>
ProbeReport distinguishability_probe(Mechanism&& mechanism,
                                     std::span<const double> d,
                                     std::span<const double> d_adjacent,
                                     const PrivacyParams& params,
                                     RandomSource& rng,
                                     const ProbeOptions& options = {}) {
  ValidatePrivacyParams(params);
  if (options.n_samples < 100'000) {
    throw Error(ErrorCode::kInvalidArgument, "probe needs >= 1e5 samples");
  }
  if (options.n_bins == 0) {
    throw Error(ErrorCode::kInvalidArgument, "probe needs >= 1 bin");
  }
  if (!differ_by_at_most_one(d, d_adjacent)) {
    throw Error(ErrorCode::kNotAdjacent, "datasets differ in more than one record");
  }

  const std::size_t n = options.n_samples;
  std::vector<double> draws_d(n);
  std::vector<double> draws_adj(n);
  for (auto& x : draws_d) x = mechanism(d, rng);
  for (auto& x : draws_adj) x = mechanism(d_adjacent, rng);

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* draws : {&draws_d, &draws_adj}) {
    for (double x : *draws) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const std::size_t bins = hi > lo ? options.n_bins : 1;
  const double width = (hi - lo) / static_cast<double>(bins);
  auto bin_of = [&](double x) {
    if (bins == 1) return std::size_t{0};
    const auto k = static_cast<std::size_t>((x - lo) / width);
    return std::min(k, bins - 1);
  };

  std::vector<std::size_t> count_d(bins, 0);
  std::vector<std::size_t> count_adj(bins, 0);
  for (double x : draws_d) ++count_d[bin_of(x)];
  for (double x : draws_adj) ++count_adj[bin_of(x)];

  const double floor = params.delta / static_cast<double>(bins);
  const double bound = std::exp(params.epsilon);
  const double total = static_cast<double>(n);
  ProbeReport report;
  for (std::size_t k = 0; k < bins; ++k) {
    const double p = static_cast<double>(count_d[k]) / total;
    const double q = static_cast<double>(count_adj[k]) / total;
    bool resolved = false;
    double violated = 0.0;
    auto direction = [&](std::size_t num_count, double num, double den) {
      if (num > options.slack * bound * den + floor) {
        violated = std::max(violated, num);
      }
      if (num_count < options.min_count) return;
      resolved = true;
      const double denom = den + floor;
      const double ratio = denom > 0.0
                               ? num / denom
                               : std::numeric_limits<double>::infinity();
      report.max_ratio = std::max(report.max_ratio, ratio);
    };
    direction(count_d[k], p, q);
    direction(count_adj[k], q, p);
    report.violated_mass += violated;
    if (resolved) ++report.resolved_bins;
  }
  return report;
}

}  // namespace fedpriv
