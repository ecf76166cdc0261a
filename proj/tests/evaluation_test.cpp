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

#include "fedpriv/evaluation.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace fedpriv {
namespace {

// Two speakers, three classes, hand-chosen labels: speaker 1 has 2 of 5
// frames labelled 2, speaker 4 has 1 of 3.
Dataset Hand() {
  Dataset d{2, 3, {}, "hand"};
  d.sequences.push_back({1, std::vector<double>(2 * 5, 0.5), {2, 0, 2, 1, 1}});
  d.sequences.push_back({4, std::vector<double>(2 * 3, -0.5), {0, 2, 1}});
  return d;
}

// Wo = 0 and a one-hot bo: the network predicts `cls` on every frame.
Network Constant(std::uint32_t cls) {
  Network net(NetworkDims{2, 3, 3});
  net.bo()[cls] = 1.0;
  return net;
}

TEST(ArgmaxTest, TiesGoLow) {
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{0, 0, 0}), 0u);
  EXPECT_EQ(argmax(std::vector<double>{-1, -5, 2}), 2u);
}

TEST(AccuracyTest, ConstantPredictorOracle) {
  const auto r = accuracy(Constant(2), Hand());
  EXPECT_EQ(r.n_frames_total, 8u);
  EXPECT_EQ(r.n_correct_total, 3u);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 3.0 / 8.0);
  ASSERT_EQ(r.per_speaker.size(), 2u);
  EXPECT_EQ(r.per_speaker.at(1), (SpeakerAccuracy{5, 2}));
  EXPECT_EQ(r.per_speaker.at(4), (SpeakerAccuracy{3, 1}));
  EXPECT_DOUBLE_EQ(r.per_speaker.at(1).accuracy(), 0.4);
}

TEST(AccuracyTest, ZeroNetworkPredictsClassZero) {
  const auto r = accuracy(Network(NetworkDims{2, 3, 3}), Hand());
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 2.0 / 8.0);
}

TEST(AccuracyTest, InvariantUnderPositiveAffineLogits) {
  SynthSpec spec;
  spec.feature_dim = 4;
  spec.num_classes = 6;
  spec.n_speakers = 3;
  spec.sequences_per_speaker = 3;
  spec.frames_per_sequence = 12;
  RandomSource rng(3);
  const Dataset d = synth_generate(spec, rng);
  const Network net = testing::random_network({4, 5, 6}, rng);
  Network scaled = net;
  for (auto& w : scaled.wo()) w *= 7;
  for (auto& b : scaled.bo()) b = 7 * b + 3;
  EXPECT_EQ(accuracy(net, d), accuracy(scaled, d));
}

TEST(AccuracyTest, ShapeChecks) {
  EXPECT_EQ(accuracy(Constant(0), Hand()).n_frames_total, 8u);
  EXPECT_THROW(accuracy(Network(NetworkDims{3, 3, 3}), Hand()), Error);
  EXPECT_THROW(accuracy(Network(NetworkDims{2, 3, 2}), Hand()), Error);
  try {
    accuracy(Constant(0), Dataset{2, 3, {}, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDataset);
  }
}

TEST(GapTest, SelfGapIsZero) {
  const Network net = Constant(1);
  const auto g = membership_gap(net, net, Hand());
  EXPECT_EQ(g.gap, 0.0);
  EXPECT_FALSE(is_leak(g));
}

TEST(GapTest, ThresholdIsStrict) {
  const auto g = membership_gap(Constant(2), Constant(0), Hand());
  EXPECT_DOUBLE_EQ(g.candidate_acc, 3.0 / 8.0);
  EXPECT_DOUBLE_EQ(g.baseline_acc, 2.0 / 8.0);
  EXPECT_DOUBLE_EQ(g.gap_points(), 12.5);
  EXPECT_TRUE(is_leak(g));
  EXPECT_FALSE(is_leak(GapProbe{0.5, 0.55, 0.05}));
  EXPECT_TRUE(is_leak(GapProbe{0.5, 0.5501, 0.0501}));
}

TEST(ReportTest, ModelMajorRows) {
  const Network a = Constant(0), b = Constant(2);
  const Dataset d1 = Hand();
  Dataset d2 = Hand();
  d2.sequences.pop_back();
  const auto rows = experiment_report({{"A", &a}, {"B", &b}}, {{"x", &d1}, {"y", &d2}});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (ReportRow{"A", "x", 0.25}));
  EXPECT_EQ(rows[1], (ReportRow{"A", "y", 0.2}));
  EXPECT_EQ(rows[2], (ReportRow{"B", "x", 0.375}));
  EXPECT_EQ(rows[3], (ReportRow{"B", "y", 0.4}));
  EXPECT_THROW(experiment_report({}, {{"x", &d1}}), Error);
}

TEST(ReportTest, TextTable) {
  const std::vector<ReportRow> rows{{"Public", "In", 0.5}, {"Public", "Outlier", 0.046},
                                    {"Open", "In", 0.853}};
  const std::string expect =
      "Training Set  Test Set  Accuracy\n"
      "------------  --------  --------\n"
      "Public        In            50.0\n"
      "              Outlier        4.6\n"
      "Open          In            85.3\n";
  EXPECT_EQ(render_text(rows), expect);
}

TEST(ReportTest, TsvRoundTrip) {
  const std::vector<ReportRow> rows{{"m1", "t1", 0.1}, {"m 2", "t2", 2.0 / 3.0}, {"m3", "t3", 0.0}};
  const std::string tsv = render_tsv(rows);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "model\ttestset\taccuracy");
  EXPECT_EQ(parse_tsv(tsv), rows);
  EXPECT_THROW(parse_tsv("nope\n"), Error);
  EXPECT_THROW(parse_tsv("model\ttestset\taccuracy\na\tb\tzz\n"), Error);
}

}  // namespace
}  // namespace fedpriv
