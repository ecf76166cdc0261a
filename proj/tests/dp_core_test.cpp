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

#include "fedpriv/dp_core.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <vector>

namespace fedpriv {
namespace {

TEST(ClampTest, Examples) {
  const ClampBounds b{0, 3};
  EXPECT_EQ(clamp(5, b), 3);
  EXPECT_EQ(clamp(-1, b), 0);
  EXPECT_EQ(clamp(2, b), 2);
}

TEST(ClampTest, NaNIsRejected) {
  try {
    clamp(std::nan(""), {0, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidValue);
  }
}

TEST(ClampTest, InvalidBounds) {
  EXPECT_THROW(clamp(1, {2, 2}), Error);
  EXPECT_THROW(clamp(1, {0, std::numeric_limits<double>::infinity()}), Error);
}

TEST(ClampTest, Idempotent) {
  RandomSource rng(3);
  const ClampBounds b{-2.5, 4.0};
  for (int i = 0; i < 1000; ++i) {
    const double x = 20.0 * (rng.uniform() - 0.5);
    const double once = clamp(x, b);
    EXPECT_EQ(clamp(once, b), once);
    EXPECT_GE(once, b.lower);
    EXPECT_LE(once, b.upper);
  }
}

TEST(MeanSensitivityTest, Examples) {
  EXPECT_DOUBLE_EQ(mean_sensitivity({0, 100}, 10).value, 10.0);
  EXPECT_DOUBLE_EQ(mean_sensitivity({0, 1}, 1).value, 1.0);
  EXPECT_DOUBLE_EQ(mean_sensitivity({-5, 5}, 1000).value, 0.01);
  EXPECT_DOUBLE_EQ(mean_sensitivity({-5, 5}, 1000, Adjacency::kReplace).value, 0.01);
}

TEST(MeanSensitivityTest, EmptyDataset) {
  try {
    mean_sensitivity({0, 1}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDataset);
  }
}

TEST(MeanSensitivityTest, ScalesAsOneOverN) {
  for (std::size_t k = 1; k < 200; ++k) {
    EXPECT_DOUBLE_EQ(mean_sensitivity({-1, 7}, 2 * k).value,
                     mean_sensitivity({-1, 7}, k).value / 2);
  }
}

TEST(LaplaceTest, InverseCdfFixedPoints) {
  EXPECT_EQ(RandomSource::laplace_from_uniform(0.5, 1.0), 0.0);
  // -b sgn(u - 1/2) ln(1 - 2|u - 1/2|) at b = 2, u = 0.75 is 2 ln 2.
  EXPECT_NEAR(RandomSource::laplace_from_uniform(0.75, 2.0), 1.3862943611198906, 1e-15);
  EXPECT_NEAR(RandomSource::laplace_from_uniform(0.25, 2.0), -1.3862943611198906, 1e-15);
}

TEST(LaplaceTest, InvalidScale) {
  RandomSource rng(1);
  for (double s : {0.0, -1.0, std::numeric_limits<double>::infinity()}) {
    try {
      laplace_sample(s, rng);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidScale);
    }
  }
}

TEST(LaplaceTest, EmpiricalVariance) {
  RandomSource rng(2024);
  const int n = 1'000'000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = laplace_sample(1.0, rng);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  EXPECT_NEAR(sum2 / n - mean * mean, 2.0, 0.05);
}

TEST(GaussianTest, EmpiricalMoments) {
  RandomSource rng(99);
  const int n = 400'000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = gaussian_sample(0.098, rng);
    sum += x;
    sum2 += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 5 * 0.098 / std::sqrt(n));
  EXPECT_NEAR(std::sqrt(sum2 / n), 0.098, 0.001);
}

TEST(RandomSourceTest, EqualSeedsGiveIdenticalStreams) {
  RandomSource a(77), b(77);
  for (int i = 0; i < 10000; ++i) {
    const double la = laplace_sample(1.5, a), lb = laplace_sample(1.5, b);
    const double ga = gaussian_sample(2.0, a), gb = gaussian_sample(2.0, b);
    ASSERT_EQ(std::memcmp(&la, &lb, sizeof la), 0);
    ASSERT_EQ(std::memcmp(&ga, &gb, sizeof ga), 0);
  }
}

TEST(RandomSourceTest, Mt19937StreamIsStandard) {
  // The 10000th output of a default-seeded mt19937_64 is fixed by the standard.
  std::mt19937_64 ref;
  for (int i = 0; i < 9999; ++i) ref();
  EXPECT_EQ(ref(), 9981545732273789042ull);
  RandomSource rng(5489u);
  for (int i = 0; i < 9999; ++i) rng.next_u64();
  EXPECT_EQ(rng.next_u64(), 9981545732273789042ull);
}

TEST(GaussianSigmaTest, ClassicCalibration) {
  const PrivacyParams p{100, 1e-6};
  // sqrt(2 ln(1.25e6)) / 100
  const double closed_form = 0.05298802526850474;
  EXPECT_NEAR(gaussian_sigma({1.0}, p), closed_form, 1e-12);
  EXPECT_NEAR(gaussian_sigma({1.0}, p), 0.052992, 1e-5);
  EXPECT_NEAR(gaussian_sigma({2.0}, p), 0.105984, 1e-5);
}

TEST(GaussianSigmaTest, LinearInSensitivityInverseInEpsilon) {
  for (double d : {0.1, 1.0, 3.5}) {
    for (double eps : {0.25, 1.0, 100.0}) {
      const PrivacyParams p{eps, 1e-5};
      const double s = gaussian_sigma({d}, p);
      EXPECT_DOUBLE_EQ(gaussian_sigma({2 * d}, p), 2 * s);
      EXPECT_DOUBLE_EQ(gaussian_sigma({d}, {2 * eps, 1e-5}), s / 2);
    }
  }
}

TEST(GaussianSigmaTest, RequiresDelta) {
  try {
    gaussian_sigma({1.0}, {1.0, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGaussianRequiresDelta);
  }
}

TEST(DpMeanTest, HugeEpsilonIsClampedMean) {
  RandomSource rng(1);
  const std::vector<double> v{0, 1, 2, 3};
  EXPECT_NEAR(dp_mean(v, {0, 3}, 1e12, rng), 1.5, 1e-9);
}

TEST(DpMeanTest, ClampingForcesBounds) {
  const std::vector<double> v{10, -10};
  EXPECT_DOUBLE_EQ(clamped_mean(v, {0, 3}), 1.5);
}

TEST(DpMeanTest, NoiseScaleMatchesFormula) {
  EXPECT_EQ(dp_mean_noise_scale({0, 100}, 10, 1.0), 10.0);
}

TEST(DpMeanTest, ZeroScaleIsExactClampedMean) {
  RandomSource rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + rng.uniform_index(30));
    for (auto& x : v) x = 10 * (rng.uniform() - 0.3);
    EXPECT_EQ(dp_mean_with_scale(v, {-1, 4}, 0.0, rng), clamped_mean(v, {-1, 4}));
  }
}

TEST(DpMeanTest, Errors) {
  RandomSource rng(1);
  const std::vector<double> empty;
  EXPECT_THROW(dp_mean(empty, {0, 1}, 1.0, rng), Error);
  const std::vector<double> bad{1.0, std::numeric_limits<double>::infinity()};
  try {
    dp_mean(bad, {0, 1}, 1.0, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidValue);
  }
}

TEST(ExactSumTest, OrderIndependent) {
  RandomSource rng(8);
  std::vector<double> v(500);
  for (auto& x : v) x = std::ldexp(rng.uniform() - 0.5, static_cast<int>(rng.uniform_index(80)) - 40);
  ExactSum fwd, rev;
  for (double x : v) fwd.add(x);
  for (auto it = v.rbegin(); it != v.rend(); ++it) rev.add(*it);
  EXPECT_EQ(fwd.value(), rev.value());
}

TEST(ComposeTest, LinearComposition) {
  AccountLedger ledger({10, 1e-5});
  ledger = compose(ledger, "a", {1, 1e-6});
  ledger = compose(ledger, "b", {1, 1e-6});
  EXPECT_EQ(ledger.spent().epsilon, 2.0);
  EXPECT_EQ(ledger.spent().delta, 2e-6);
  ASSERT_EQ(ledger.entries().size(), 2u);
  EXPECT_EQ(ledger.entries()[1].label, "b");
}

TEST(ComposeTest, BoundaryAcceptedThenExceeded) {
  AccountLedger ledger({1, 0});
  ledger = compose(ledger, "full", {1, 0});
  EXPECT_EQ(ledger.spent(), (PrivacyParams{1, 0}));
  try {
    compose(ledger, "over", {0.1, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBudgetExceeded);
  }
}

TEST(ComposeTest, FailedSpendLeavesLedgerUnchanged) {
  AccountLedger ledger({1, 1e-6});
  ledger.spend("a", {0.5, 5e-7});
  const auto before = ledger.spent();
  EXPECT_THROW(ledger.spend("b", {0.6, 0}), Error);
  EXPECT_THROW(ledger.spend("c", {0.1, 6e-7}), Error);
  EXPECT_EQ(ledger.spent(), before);
  EXPECT_EQ(ledger.entries().size(), 1u);
}

TEST(ComposeTest, AssociativeOverGroupings) {
  RandomSource rng(12);
  std::vector<PrivacyParams> steps(64);
  for (auto& s : steps) s = {0.01 + rng.uniform(), 1e-9 * (1 + rng.uniform())};
  AccountLedger forward({1e6, 0.5}), backward({1e6, 0.5}), halves({1e6, 0.5});
  for (const auto& s : steps) forward.spend("s", s);
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) backward.spend("s", *it);
  for (std::size_t i = 0; i < 32; ++i) {
    halves.spend("s", steps[i + 32]);
    halves.spend("s", steps[i]);
  }
  EXPECT_EQ(forward.spent(), backward.spent());
  EXPECT_EQ(forward.spent(), halves.spent());
}

TEST(ComposeTest, ReportHasOneLinePerEntry) {
  AccountLedger ledger({10, 1e-5});
  ledger.spend("step-0", {1, 1e-6});
  ledger.spend("step-1", {1, 1e-6});
  const std::string report = ledger.report();
  EXPECT_NE(report.find("step-0\t1\t9.9999999999999995e-07\t1\t9.9999999999999995e-07\n"),
            std::string::npos);
  EXPECT_NE(report.find("step-1\t1\t9.9999999999999995e-07\t2\t1.9999999999999999e-06\n"),
            std::string::npos);
}

TEST(ProbeTest, AdjacencyCheck) {
  const std::vector<double> d{1, 2, 3};
  EXPECT_TRUE(differ_by_at_most_one(d, std::vector<double>{1, 2}));
  EXPECT_TRUE(differ_by_at_most_one(d, std::vector<double>{1, 2, 9}));
  EXPECT_TRUE(differ_by_at_most_one(d, std::vector<double>{3, 2, 1}));
  EXPECT_FALSE(differ_by_at_most_one(d, std::vector<double>{1, 8, 9}));
  EXPECT_FALSE(differ_by_at_most_one(d, std::vector<double>{1}));
}

TEST(ProbeTest, NotAdjacentRejected) {
  RandomSource rng(1);
  const std::vector<double> d{1, 2, 3}, far{7, 8, 9};
  auto mech = [](std::span<const double> x, RandomSource& r) { return dp_mean(x, {0, 10}, 1.0, r); };
  try {
    distinguishability_probe(mech, d, far, {1.0, 0.0}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotAdjacent);
  }
}

std::vector<double> ZeroToNine() {
  std::vector<double> d(10);
  std::iota(d.begin(), d.end(), 0.0);
  return d;
}

TEST(ProbeTest, RemovalNeighbourWithinSlack) {
  RandomSource rng(314);
  const auto d = ZeroToNine();
  const std::vector<double> adj(d.begin() + 1, d.end());
  auto mech = [](std::span<const double> x, RandomSource& r) { return dp_mean(x, {0, 9}, 1.0, r); };
  const auto report = distinguishability_probe(mech, d, adj, {1.0, 0.0}, rng);
  EXPECT_LE(report.max_ratio, std::exp(1.0) * 1.15);
  EXPECT_GT(report.resolved_bins, 3u);
}

TEST(ProbeTest, IdenticalDatasetsGiveRatioNearOne) {
  RandomSource rng(2);
  const auto d = ZeroToNine();
  auto mech = [](std::span<const double> x, RandomSource& r) { return dp_mean(x, {0, 9}, 1.0, r); };
  ProbeOptions opts;
  opts.n_samples = 200'000;
  const auto report = distinguishability_probe(mech, d, d, {1.0, 0.0}, rng, opts);
  EXPECT_LT(report.max_ratio, 1.15);
  EXPECT_GE(report.max_ratio, 1.0);
}

TEST(ProbeTest, StrongerMechanismWellBelowWeakerBound) {
  RandomSource rng(3);
  const auto d = ZeroToNine();
  auto adj = d;
  adj[0] = 9;
  auto mech = [](std::span<const double> x, RandomSource& r) { return dp_mean(x, {0, 9}, 0.1, r); };
  ProbeOptions opts;
  opts.n_samples = 200'000;
  const auto report = distinguishability_probe(mech, d, adj, {1.0, 0.0}, rng, opts);
  EXPECT_LT(report.max_ratio, std::exp(0.5));
  EXPECT_EQ(report.violated_mass, 0.0);
}

TEST(ProbeTest, DetectsBrokenMechanism) {
  // Noise ten times too small for eps = 1 must be caught.
  RandomSource rng(4);
  const auto d = ZeroToNine();
  auto adj = d;
  adj[0] = 9;
  auto mech = [](std::span<const double> x, RandomSource& r) {
    return dp_mean_with_scale(x, {0, 9}, 0.09, r);
  };
  ProbeOptions opts;
  opts.n_samples = 200'000;
  const auto report = distinguishability_probe(mech, d, adj, {1.0, 0.0}, rng, opts);
  EXPECT_GT(report.max_ratio, std::exp(1.0) * 1.15);
  EXPECT_GT(report.violated_mass, 0.1);
}

TEST(ProbeTest, RequiresEnoughSamples) {
  RandomSource rng(1);
  const auto d = ZeroToNine();
  ProbeOptions opts;
  opts.n_samples = 1000;
  auto mech = [](std::span<const double> x, RandomSource& r) { return dp_mean(x, {0, 9}, 1.0, r); };
  EXPECT_THROW(distinguishability_probe(mech, d, d, {1.0, 0.0}, rng, opts), Error);
}

}  // namespace
}  // namespace fedpriv
