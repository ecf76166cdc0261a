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

#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedpriv/datastore.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/nn_core.hpp"

namespace fedpriv {

struct SpeakerAccuracy {
  std::size_t n_frames = 0;
  std::size_t n_correct = 0;
  double accuracy() const {
    return n_frames == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_frames);
  }
  friend bool operator==(const SpeakerAccuracy&, const SpeakerAccuracy&) = default;
};

struct EvalReport {
  double overall_accuracy = 0.0;
  std::size_t n_frames_total = 0;
  std::size_t n_correct_total = 0;
  std::map<std::uint32_t, SpeakerAccuracy> per_speaker;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// First index of the maximum, so ties go to the lowest class.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

// Frame-level accuracy of argmax(logits) against labels.
inline EvalReport accuracy(const Network& net, const Dataset& data) {
  require_training_data(data);
  if (data.feature_dim != net.dims().input_dim || data.num_classes > net.dims().output_dim) {
    throw Error(ErrorCode::kShapeError, "dataset shape does not fit the network");
  }
  const std::size_t o = net.dims().output_dim;
  EvalReport report;
  for (const auto& seq : data.sequences) {
    const auto cache = forward(net, seq.frames);
    auto& sp = report.per_speaker[seq.speaker_id];
    for (std::size_t t = 0; t < seq.n_frames(); ++t) {
      const auto row = std::span<const double>(cache.logits).subspan(t * o, o);
      const bool hit = argmax(row) == seq.labels[t];
      ++sp.n_frames;
      sp.n_correct += hit ? 1 : 0;
    }
  }
  for (const auto& [id, sp] : report.per_speaker) {
    report.n_frames_total += sp.n_frames;
    report.n_correct_total += sp.n_correct;
  }
  report.overall_accuracy = static_cast<double>(report.n_correct_total) /
                            static_cast<double>(report.n_frames_total);
  return report;
}

// Accuracy gap on an outlier contributor's held-out data: how much better the
// candidate model does than a baseline that never saw them. Fractions in
// [-1, 1]; multiply by 100 for points.
struct GapProbe {
  double baseline_acc = 0.0;
  double candidate_acc = 0.0;
  double gap = 0.0;

  double gap_points() const { return 100.0 * gap; }
};

// A gap above this many points on the outlier test set flags membership.
inline constexpr double kLeakThresholdPoints = 5.0;

inline bool is_leak(const GapProbe& probe) { return probe.gap_points() > kLeakThresholdPoints; }

inline GapProbe membership_gap(const Network& candidate, const Network& baseline,
                               const Dataset& outlier_test) {
  if (candidate.dims() != baseline.dims()) {
    throw Error(ErrorCode::kShapeError, "candidate and baseline dims differ");
  }
  GapProbe probe;
  probe.candidate_acc = accuracy(candidate, outlier_test).overall_accuracy;
  probe.baseline_acc = accuracy(baseline, outlier_test).overall_accuracy;
  probe.gap = probe.candidate_acc - probe.baseline_acc;
  return probe;
}

struct ReportRow {
  std::string model;
  std::string testset;
  double accuracy = 0.0;
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct LabeledNetwork {
  std::string label;
  const Network* network;
};

struct LabeledDataset {
  std::string label;
  const Dataset* dataset;
};

// Model-major cross product of accuracies.
inline std::vector<ReportRow> experiment_report(const std::vector<LabeledNetwork>& models,
                                                const std::vector<LabeledDataset>& testsets) {
  if (models.empty() || testsets.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "report needs at least one model and one test set");
  }
  std::vector<ReportRow> rows;
  for (const auto& m : models) {
    for (const auto& t : testsets) {
      rows.push_back({m.label, t.label, accuracy(*m.network, *t.dataset).overall_accuracy});
    }
  }
  return rows;
}

inline std::string render_text(const std::vector<ReportRow>& rows) {
  std::size_t wm = std::string("Training Set").size();
  std::size_t wt = std::string("Test Set").size();
  for (const auto& r : rows) {
    wm = std::max(wm, r.model.size());
    wt = std::max(wt, r.testset.size());
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  std::ostringstream out;
  out << pad("Training Set", wm) << "  " << pad("Test Set", wt) << "  Accuracy\n";
  out << std::string(wm, '-') << "  " << std::string(wt, '-') << "  --------\n";
  std::string last_model;
  for (const auto& r : rows) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%8.1f", 100.0 * r.accuracy);
    out << pad(r.model == last_model ? "" : r.model, wm) << "  " << pad(r.testset, wt) << "  "
        << acc << '\n';
    last_model = r.model;
  }
  return out.str();
}

// Header line, then model<TAB>testset<TAB>accuracy with the accuracy as a
// round-trippable fraction.
inline std::string render_tsv(const std::vector<ReportRow>& rows) {
  std::string out = "model\ttestset\taccuracy\n";
  for (const auto& r : rows) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.17g", r.accuracy);
    out += r.model + '\t' + r.testset + '\t' + acc + '\n';
  }
  return out;
}

inline std::vector<ReportRow> parse_tsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "model\ttestset\taccuracy") {
    throw Error(ErrorCode::kFormatError, "missing report header");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos) throw Error(ErrorCode::kFormatError, "bad report row: " + line);
    ReportRow r{line.substr(0, a), line.substr(a + 1, b - a - 1), 0.0};
    try {
      std::size_t used = 0;
      const std::string num = line.substr(b + 1);
      r.accuracy = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorCode::kFormatError, "bad accuracy in row: " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fedpriv
