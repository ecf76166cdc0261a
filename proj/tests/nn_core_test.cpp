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

#include "fedpriv/nn_core.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <vector>

#include "test_support.hpp"

namespace fedpriv {
namespace {

using testing::max_abs_diff;
using testing::max_relative_error;
using testing::random_network;
using testing::random_sequence;

TEST(NetworkDimsTest, ParameterCount) {
  EXPECT_EQ((NetworkDims{13, 200, 9096}).parameter_count(), 1'999'496u);
  EXPECT_EQ((NetworkDims{1, 1, 1}).parameter_count(), 14u);
  EXPECT_EQ(Network(NetworkDims{13, 16, 32}).parameter_count(), 2464u);
}

TEST(NetworkTest, ZeroDimsRejected) {
  EXPECT_THROW(Network(NetworkDims{0, 1, 1}), Error);
}

TEST(NetworkTest, SegmentsTileTheFlatVector) {
  Network net(NetworkDims{3, 4, 5});
  EXPECT_EQ(net.wx().size(), 16u * 3);
  EXPECT_EQ(net.wh().size(), 16u * 4);
  EXPECT_EQ(net.bias().size(), 16u);
  EXPECT_EQ(net.wo().size(), 5u * 4);
  EXPECT_EQ(net.bo().size(), 5u);
  EXPECT_EQ(net.wx().size() + net.wh().size() + net.bias().size() + net.wo().size() + net.bo().size(),
            net.parameter_count());
  EXPECT_EQ(net.bo_offset() + 5, net.parameter_count());
}

TEST(NetworkTest, FlattenRoundTripIsBitIdentical) {
  RandomSource rng(4);
  const Network net = random_network({4, 3, 6}, rng);
  const auto p = net.parameters();
  const Network copy = Network::FromParameters(net.dims(), {p.begin(), p.end()});
  EXPECT_EQ(copy, net);
  EXPECT_EQ(parameter_hash(copy), parameter_hash(net));
}

TEST(InitTest, DeterministicAndBounded) {
  RandomSource a(42), b(42);
  const Network n1 = init_network({13, 16, 32}, a);
  const Network n2 = init_network({13, 16, 32}, b);
  EXPECT_EQ(n1, n2);
  const double lim_x = 1 / std::sqrt(13.0), lim_h = 1 / std::sqrt(16.0);
  for (double w : n1.wx()) EXPECT_LE(std::fabs(w), lim_x);
  for (double w : n1.wh()) EXPECT_LE(std::fabs(w), lim_h);
  for (double w : n1.wo()) EXPECT_LE(std::fabs(w), lim_h);
  const auto bias = n1.bias();
  for (std::size_t k = 0; k < 64; ++k) EXPECT_EQ(bias[k], (k >= 16 && k < 32) ? 1.0 : 0.0);
  for (double w : n1.bo()) EXPECT_EQ(w, 0.0);
}

TEST(ForwardTest, ZeroNetworkGivesZeroLogits) {
  Network net(NetworkDims{3, 4, 5});
  RandomSource rng(1);
  const auto seq = random_sequence(3, 7, 5, rng);
  const auto cache = forward(net, seq.frames);
  ASSERT_EQ(cache.logits.size(), 7u * 5);
  for (double y : cache.logits) EXPECT_EQ(y, 0.0);
  for (double p : cache.probs) EXPECT_DOUBLE_EQ(p, 0.2);
}

double Sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar two-unit LSTM written out gate by gate, independent of forward().
TEST(ForwardTest, MatchesScalarOracle) {
  using M2 = std::array<std::array<double, 2>, 2>;
  const M2 xi{{{0.1, -0.2}, {0.3, 0.05}}}, xf{{{-0.4, 0.2}, {0.1, 0.6}}},
      xg{{{0.7, -0.3}, {-0.2, 0.4}}}, xo{{{0.25, 0.15}, {-0.35, 0.45}}};
  const M2 hi{{{0.2, 0.1}, {-0.1, 0.3}}}, hf{{{0.05, -0.25}, {0.4, 0.1}}},
      hg{{{-0.3, 0.2}, {0.1, -0.1}}}, ho{{{0.15, 0.35}, {-0.2, 0.05}}};
  const std::array<double, 2> bi{0.01, -0.02}, bf{1.0, 0.9}, bg{0.05, -0.1}, bo_gate{0.2, 0.0};
  const M2 wout{{{0.8, -0.6}, {-0.3, 0.9}}};
  const std::array<double, 2> bout{0.1, -0.2};

  Network net(NetworkDims{2, 2, 2});
  auto wx = net.wx(), wh = net.wh(), b = net.bias(), wo = net.wo(), bo = net.bo();
  const M2* xs[4] = {&xi, &xf, &xg, &xo};
  const M2* hs[4] = {&hi, &hf, &hg, &ho};
  const std::array<double, 2>* bs[4] = {&bi, &bf, &bg, &bo_gate};
  for (int g = 0; g < 4; ++g) {
    for (int r = 0; r < 2; ++r) {
      for (int j = 0; j < 2; ++j) {
        wx[(2 * g + r) * 2 + j] = (*xs[g])[r][j];
        wh[(2 * g + r) * 2 + j] = (*hs[g])[r][j];
      }
      b[2 * g + r] = (*bs[g])[r];
    }
  }
  for (int k = 0; k < 2; ++k) {
    for (int j = 0; j < 2; ++j) wo[k * 2 + j] = wout[k][j];
    bo[k] = bout[k];
  }

  const std::vector<double> frames{0.5, -1.0, 1.5, 0.25, -0.75, 2.0};
  const auto cache = forward(net, frames);

  double h[2] = {0, 0}, c[2] = {0, 0};
  for (int t = 0; t < 3; ++t) {
    const double x0 = frames[2 * t], x1 = frames[2 * t + 1];
    double hn[2], cn[2];
    for (int r = 0; r < 2; ++r) {
      auto pre = [&](const M2& wx_, const M2& wh_, const std::array<double, 2>& b_) {
        return wx_[r][0] * x0 + wx_[r][1] * x1 + wh_[r][0] * h[0] + wh_[r][1] * h[1] + b_[r];
      };
      const double i = Sig(pre(xi, hi, bi));
      const double f = Sig(pre(xf, hf, bf));
      const double g = std::tanh(pre(xg, hg, bg));
      const double o = Sig(pre(xo, ho, bo_gate));
      cn[r] = f * c[r] + i * g;
      hn[r] = o * std::tanh(cn[r]);
    }
    for (int r = 0; r < 2; ++r) {
      h[r] = hn[r];
      c[r] = cn[r];
    }
    for (int k = 0; k < 2; ++k) {
      const double y = wout[k][0] * h[0] + wout[k][1] * h[1] + bout[k];
      EXPECT_NEAR(cache.logits[2 * t + k], y, 1e-12);
    }
  }
}

TEST(ForwardTest, ShapeContractAndErrors) {
  RandomSource rng(2);
  const Network net = random_network({3, 4, 5}, rng);
  const auto seq = random_sequence(3, 9, 5, rng);
  const auto cache = forward(net, seq.frames);
  EXPECT_EQ(cache.n_frames, 9u);
  EXPECT_EQ(cache.logits.size(), 9u * 5);
  EXPECT_EQ(cache.hidden.size(), 9u * 4);
  const std::vector<double> bad(7, 0.0);
  try {
    forward(net, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeError);
  }
  EXPECT_THROW(forward(net, std::vector<double>{}), Error);
}

TEST(ForwardTest, DeterministicAndNormalized) {
  RandomSource rng(3);
  const Network net = random_network({5, 6, 7}, rng);
  const auto seq = random_sequence(5, 10, 7, rng);
  const auto a = forward(net, seq.frames);
  const auto b = forward(net, seq.frames);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.probs, b.probs);
  for (std::size_t t = 0; t < 10; ++t) {
    double sum = 0;
    for (std::size_t k = 0; k < 7; ++k) sum += a.probs[t * 7 + k];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_GE(loss(a.logits, 7, seq.labels), 0.0);
}

TEST(LossTest, UniformLogitsGiveLogClasses) {
  const std::vector<double> logits(4 * 6, 0.0);
  const std::vector<std::uint32_t> labels{0, 5, 2, 3};
  EXPECT_DOUBLE_EQ(loss(logits, 6, labels), std::log(6.0));
}

TEST(LossTest, SaturatedCorrectClassGivesZero) {
  std::vector<double> logits(3 * 4, 0.0);
  const std::vector<std::uint32_t> labels{1, 3, 0};
  for (std::size_t t = 0; t < 3; ++t) logits[t * 4 + labels[t]] = 1000.0;
  EXPECT_NEAR(loss(logits, 4, labels), 0.0, 1e-300);
}

TEST(LossTest, MatchesDirectSoftmax) {
  RandomSource rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t o = 2 + rng.uniform_index(6), T = 1 + rng.uniform_index(5);
    std::vector<double> logits(T * o);
    for (auto& y : logits) y = 3 * rng.gaussian();
    std::vector<std::uint32_t> labels(T);
    for (auto& l : labels) l = static_cast<std::uint32_t>(rng.uniform_index(o));
    double expect = 0;
    for (std::size_t t = 0; t < T; ++t) {
      double z = 0;
      for (std::size_t k = 0; k < o; ++k) z += std::exp(logits[t * o + k]);
      expect += -std::log(std::exp(logits[t * o + labels[t]]) / z);
    }
    EXPECT_NEAR(loss(logits, o, labels), expect / T, 1e-12);
  }
}

TEST(LossTest, LabelOutOfRange) {
  const std::vector<double> logits(2 * 3, 0.0);
  try {
    loss(logits, 3, std::vector<std::uint32_t>{0, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLabelError);
  }
}

TEST(BackwardTest, MatchesFiniteDifferences) {
  RandomSource rng(11);
  const Network net = random_network({3, 4, 5}, rng);
  const auto seq = random_sequence(3, 6, 5, rng);
  const auto analytic = sequence_gradient(net, seq);
  const auto numeric = finite_difference_gradient(net, seq, 1e-6);
  EXPECT_LT(max_relative_error(analytic.values, numeric.values), 1e-5);
}

TEST(BackwardTest, RandomGradientCheck) {
  RandomSource rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkDims dims{static_cast<std::uint32_t>(1 + rng.uniform_index(8)),
                           static_cast<std::uint32_t>(1 + rng.uniform_index(8)),
                           static_cast<std::uint32_t>(1 + rng.uniform_index(8))};
    const Network net = random_network(dims, rng);
    const auto seq = random_sequence(dims.input_dim, 1 + rng.uniform_index(10), dims.output_dim, rng);
    const auto analytic = sequence_gradient(net, seq);
    const auto numeric = finite_difference_gradient(net, seq, 1e-6);
    EXPECT_LT(max_relative_error(analytic.values, numeric.values), 1e-5) << "trial " << trial;
  }
}

// With one hidden unit and one frame the output layer is softmax regression
// on the scalar feature h: dL/dbo = p - y and dL/dWo = (p - y) h.
TEST(BackwardTest, OutputLayerIsLogisticRegression) {
  RandomSource rng(13);
  const Network net = random_network({2, 1, 2}, rng);
  FeatureSequence seq;
  seq.frames = {0.7, -1.2};
  seq.labels = {1};
  const auto cache = forward(net, seq.frames);
  const double h = cache.hidden[0];
  const double p1 = Sig(cache.logits[1] - cache.logits[0]);
  const auto g = backward(net, cache, seq.labels);
  EXPECT_NEAR(g.values[net.bo_offset() + 1], p1 - 1.0, 1e-14);
  EXPECT_NEAR(g.values[net.bo_offset() + 0], (1 - p1) - 0.0, 1e-14);
  EXPECT_NEAR(g.values[net.wo_offset() + 1], (p1 - 1.0) * h, 1e-14);
  EXPECT_NEAR(g.values[net.wo_offset() + 0], (1 - p1) * h, 1e-14);
}

TEST(BackwardTest, StaleCacheRejected) {
  RandomSource rng(14);
  Network net = random_network({2, 3, 4}, rng);
  const auto seq = random_sequence(2, 3, 4, rng);
  const auto cache = forward(net, seq.frames);
  net.mutable_parameters()[0] += 1e-3;
  try {
    backward(net, cache, seq.labels);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCacheError);
  }
  const Network other = random_network({2, 3, 5}, rng);
  EXPECT_THROW(backward(other, cache, seq.labels), Error);
}

TEST(PerExampleTest, SingletonAndOrder) {
  RandomSource rng(15);
  const Network net = random_network({3, 4, 5}, rng);
  std::vector<FeatureSequence> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_sequence(3, 2 + i, 5, rng));
  const auto single = per_example_gradients(net, std::vector<FeatureSequence>{batch[2]});
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0], sequence_gradient(net, batch[2]));

  const auto grads = per_example_gradients(net, batch);
  std::vector<FeatureSequence> permuted{batch[3], batch[1], batch[0], batch[2]};
  const auto pg = per_example_gradients(net, permuted);
  EXPECT_EQ(pg[0], grads[3]);
  EXPECT_EQ(pg[1], grads[1]);
  EXPECT_EQ(pg[2], grads[0]);
  EXPECT_EQ(pg[3], grads[2]);
}

TEST(PerExampleTest, MeanMatchesGradientOfMeanObjective) {
  RandomSource rng(16);
  const Network net = random_network({3, 3, 4}, rng);
  std::vector<FeatureSequence> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_sequence(3, 3 + i, 4, rng));
  const auto grads = per_example_gradients(net, batch);
  std::vector<double> mean(net.parameter_count(), 0.0);
  for (auto it = grads.rbegin(); it != grads.rend(); ++it) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += it->values[i] / 3.0;
  }
  // Central differences of (1/B) sum_i loss_i.
  Network probe = net;
  auto p = probe.mutable_parameters();
  std::vector<double> fd(p.size());
  auto objective = [&] {
    double total = 0;
    for (const auto& s : batch) total += sequence_loss(probe, s);
    return total / 3.0;
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + 1e-6;
    const double up = objective();
    p[i] = saved - 1e-6;
    const double down = objective();
    p[i] = saved;
    fd[i] = (up - down) / 2e-6;
  }
  EXPECT_LT(max_relative_error(mean, fd), 1e-5);
}

TEST(PerExampleTest, DuplicatedSequenceLeavesMeanGradientUnchanged) {
  RandomSource rng(17);
  const Network net = random_network({2, 3, 3}, rng);
  const auto seq = random_sequence(2, 5, 3, rng);
  const auto grads = per_example_gradients(net, std::vector<FeatureSequence>{seq, seq});
  const auto one = sequence_gradient(net, seq);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ((grads[0].values[i] + grads[1].values[i]) / 2.0, one.values[i]);
  }
}

TEST(ApplyUpdateTest, ZeroStepsAreBitwiseNoOps) {
  RandomSource rng(18);
  const Network net = random_network({3, 4, 5}, rng);
  FlatGradient g{std::vector<double>(net.parameter_count())};
  for (auto& x : g.values) x = rng.gaussian();
  Network a = net;
  apply_update(a, g, 0.0);
  EXPECT_EQ(a, net);
  Network b = net;
  apply_update(b, FlatGradient{std::vector<double>(net.parameter_count(), 0.0)}, 0.3);
  EXPECT_EQ(b, net);
}

TEST(ApplyUpdateTest, StepsAreAdditive) {
  RandomSource rng(19);
  const Network net = random_network({3, 4, 5}, rng);
  FlatGradient g1{std::vector<double>(net.parameter_count())}, g2 = g1, sum = g1;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    g1.values[i] = rng.gaussian();
    g2.values[i] = rng.gaussian();
    sum.values[i] = g1.values[i] + g2.values[i];
  }
  Network seq = net, once = net;
  apply_update(seq, g1, 0.01);
  apply_update(seq, g2, 0.01);
  apply_update(once, sum, 0.01);
  EXPECT_LT(max_abs_diff(seq.parameters(), once.parameters()), 1e-12);
}

TEST(ApplyUpdateTest, LengthMismatch) {
  Network net(NetworkDims{1, 1, 1});
  try {
    apply_update(net, FlatGradient{std::vector<double>(13)}, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeError);
  }
}

TEST(FiniteDifferenceTest, ZeroOutputLayerMakesRecurrentGradientZero) {
  RandomSource rng(20);
  Network net = random_network({2, 3, 4}, rng);
  for (auto& w : net.wo()) w = 0.0;
  const auto seq = random_sequence(2, 4, 4, rng);
  const auto fd = finite_difference_gradient(net, seq, 1e-6);
  for (std::size_t i = 0; i < net.wo_offset(); ++i) EXPECT_EQ(fd.values[i], 0.0);
  EXPECT_THROW(finite_difference_gradient(net, seq, 1e-2), Error);
}

TEST(NetworkFormatTest, LayoutAndRoundTrip) {
  RandomSource rng(21);
  const Network net = random_network({3, 2, 4}, rng);
  const auto bytes = encode_network(net);
  ASSERT_EQ(bytes.size(), 8 + 12 + 8 * net.parameter_count());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "FDPNET01");
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 2);
  EXPECT_EQ(bytes[16], 4);
  EXPECT_EQ(decode_network(bytes), net);
  EXPECT_EQ(encode_network(decode_network(bytes)), bytes);
}

TEST(NetworkFormatTest, CorruptInputsRejected) {
  const auto bytes = encode_network(Network(NetworkDims{1, 1, 1}));
  auto truncated = bytes;
  truncated.pop_back();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  for (const auto& b : {truncated, bad_magic}) {
    try {
      decode_network(b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kFormatError);
    }
  }
}

}  // namespace
}  // namespace fedpriv
