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
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedpriv/byte_io.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/random.hpp"

namespace fedpriv {

// One utterance. frames is row-major, n_frames() x feature_dim.
struct FeatureSequence {
  std::uint32_t speaker_id = 0;
  std::vector<double> frames;
  std::vector<std::uint32_t> labels;

  std::size_t n_frames() const { return labels.size(); }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

struct Dataset {
  std::uint32_t feature_dim = 0;
  std::uint32_t num_classes = 0;
  std::vector<FeatureSequence> sequences;
  std::string provenance;

  std::size_t n_frames() const {
    std::size_t total = 0;
    for (const auto& s : sequences) total += s.n_frames();
    return total;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Checks every structural invariant of a dataset; `code` selects the error
// reported (FormatError when loading a file, ShapeError elsewhere).
inline void validate_dataset(const Dataset& d, ErrorCode code = ErrorCode::kShapeError) {
  if (d.feature_dim == 0 || d.num_classes == 0) {
    throw Error(code, "feature_dim and num_classes must be >= 1");
  }
  for (const auto& s : d.sequences) {
    if (s.labels.empty()) throw Error(code, "sequence with zero frames");
    if (s.frames.size() != s.labels.size() * d.feature_dim) {
      throw Error(code, "frame data does not match feature_dim");
    }
    for (double v : s.frames) {
      if (!std::isfinite(v)) throw Error(code, "non-finite feature value");
    }
    for (auto l : s.labels) {
      if (l >= d.num_classes) throw Error(code, "label >= num_classes");
    }
  }
}

inline void require_training_data(const Dataset& d) {
  if (d.sequences.empty()) {
    throw Error(ErrorCode::kEmptyDataset, "dataset '" + d.provenance + "' is empty");
  }
}

// ---------------------------------------------------------------------------
// Synthetic speaker data.
//
// A frame of class c spoken by speaker s is
//   center[c] + offset[s] + noise_scale * N(0, I)
// with offset[s] = speaker_offset_scale * N(0, I), multiplied by the outlier
// multiplier for the outlier speaker. Class centers come from center_seed so
// several datasets (public, private, outlier) share one classification task.

struct OutlierSpeaker {
  std::uint32_t index = 0;
  double offset_multiplier = 1.0;
};

struct SynthSpec {
  std::uint32_t feature_dim = 13;
  std::uint32_t num_classes = 32;
  std::uint32_t n_speakers = 6;
  std::uint32_t sequences_per_speaker = 10;
  std::uint32_t frames_per_sequence = 50;
  std::uint32_t speaker_id_base = 0;
  std::uint64_t center_seed = 1;
  double speaker_offset_scale = 0.5;
  std::optional<OutlierSpeaker> outlier;
  double noise_scale = 0.6;
  std::string provenance = "synthetic";
};

inline void validate_synth_spec(const SynthSpec& s) {
  if (s.feature_dim == 0 || s.num_classes == 0 || s.n_speakers == 0 ||
      s.sequences_per_speaker == 0 || s.frames_per_sequence == 0) {
    throw Error(ErrorCode::kInvalidArgument, "synth counts must be >= 1");
  }
  if (!std::isfinite(s.speaker_offset_scale) || s.speaker_offset_scale < 0 ||
      !std::isfinite(s.noise_scale) || s.noise_scale < 0) {
    throw Error(ErrorCode::kInvalidArgument, "synth scales must be finite and >= 0");
  }
  if (s.outlier) {
    if (s.outlier->index >= s.n_speakers) {
      throw Error(ErrorCode::kInvalidArgument, "outlier index out of range");
    }
    if (!std::isfinite(s.outlier->offset_multiplier) ||
        s.outlier->offset_multiplier < 1.0) {
      throw Error(ErrorCode::kInvalidArgument, "outlier multiplier must be >= 1");
    }
  }
}

// num_classes x feature_dim, row-major.
inline std::vector<double> synth_class_centers(const SynthSpec& spec) {
  RandomSource centers_rng(spec.center_seed);
  std::vector<double> centers(std::size_t{spec.num_classes} * spec.feature_dim);
  for (auto& c : centers) c = centers_rng.gaussian();
  return centers;
}

// n_speakers x feature_dim speaker offsets drawn from rng (outlier scaled).
inline std::vector<double> synth_speaker_offsets(const SynthSpec& spec,
                                                 RandomSource& rng) {
  const std::size_t dim = spec.feature_dim;
  std::vector<double> offsets(std::size_t{spec.n_speakers} * dim);
  for (std::uint32_t s = 0; s < spec.n_speakers; ++s) {
    double scale = spec.speaker_offset_scale;
    if (spec.outlier && spec.outlier->index == s) {
      scale *= spec.outlier->offset_multiplier;
    }
    for (std::size_t k = 0; k < dim; ++k) offsets[s * dim + k] = scale * rng.gaussian();
  }
  return offsets;
}

// Labels of each sequence walk a per-sequence random permutation of the
// classes, cycling when the sequence is longer than num_classes, so the
// label order carries no information shared across sequences.
inline Dataset synth_generate(const SynthSpec& spec, RandomSource& rng) {
  validate_synth_spec(spec);
  const std::size_t dim = spec.feature_dim;
  const auto centers = synth_class_centers(spec);
  const auto offsets = synth_speaker_offsets(spec, rng);

  Dataset out;
  out.feature_dim = spec.feature_dim;
  out.num_classes = spec.num_classes;
  out.provenance = spec.provenance;
  out.sequences.reserve(std::size_t{spec.n_speakers} * spec.sequences_per_speaker);

  std::vector<std::uint32_t> order(spec.num_classes);
  for (std::uint32_t s = 0; s < spec.n_speakers; ++s) {
    for (std::uint32_t q = 0; q < spec.sequences_per_speaker; ++q) {
      std::iota(order.begin(), order.end(), 0u);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
      }
      FeatureSequence seq;
      seq.speaker_id = spec.speaker_id_base + s;
      seq.labels.resize(spec.frames_per_sequence);
      seq.frames.resize(std::size_t{spec.frames_per_sequence} * dim);
      for (std::uint32_t t = 0; t < spec.frames_per_sequence; ++t) {
        const std::uint32_t c = order[t % spec.num_classes];
        seq.labels[t] = c;
        for (std::size_t k = 0; k < dim; ++k) {
          seq.frames[t * dim + k] = centers[c * dim + k] + offsets[s * dim + k] +
                                    spec.noise_scale * rng.gaussian();
        }
      }
      out.sequences.push_back(std::move(seq));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SENO0001 binary format:
//   "SENO0001" | u32 feature_dim | u32 num_classes | u32 n_sequences
//   per sequence: u32 speaker_id | u32 T | T*dim f32 frames | T u32 labels
// All integers and floats little-endian.

inline constexpr std::string_view kDatasetMagic = "SENO0001";

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  validate_dataset(d);
  bytes::Writer w;
  w.raw(kDatasetMagic);
  w.u32(d.feature_dim);
  w.u32(d.num_classes);
  w.u32(static_cast<std::uint32_t>(d.sequences.size()));
  for (const auto& s : d.sequences) {
    w.u32(s.speaker_id);
    w.u32(static_cast<std::uint32_t>(s.n_frames()));
    for (double v : s.frames) w.f32(static_cast<float>(v));
    for (auto l : s.labels) w.u32(l);
  }
  return w.take();
}

inline Dataset decode_dataset(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, ErrorCode::kFormatError);
  if (r.raw(kDatasetMagic.size()) != kDatasetMagic) {
    throw Error(ErrorCode::kFormatError, "bad dataset magic");
  }
  Dataset d;
  d.feature_dim = r.u32();
  d.num_classes = r.u32();
  const std::uint32_t n = r.u32();
  if (d.feature_dim == 0 || d.num_classes == 0) {
    throw Error(ErrorCode::kFormatError, "zero feature_dim or num_classes");
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    FeatureSequence s;
    s.speaker_id = r.u32();
    const std::uint32_t t = r.u32();
    if (t == 0) throw Error(ErrorCode::kFormatError, "sequence with zero frames");
    const std::size_t n_values = std::size_t{t} * d.feature_dim;
    r.need(n_values * 4 + std::size_t{t} * 4);
    s.frames.resize(n_values);
    for (auto& v : s.frames) v = r.f32();
    s.labels.resize(t);
    for (auto& l : s.labels) l = r.u32();
    d.sequences.push_back(std::move(s));
  }
  if (!r.done()) throw Error(ErrorCode::kFormatError, "trailing bytes after dataset");
  validate_dataset(d, ErrorCode::kFormatError);
  return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  bytes::write_file(path, encode_dataset(d));
}

inline Dataset read_dataset(const std::string& path) {
  Dataset d = decode_dataset(bytes::read_file(path));
  d.provenance = path;
  return d;
}

// ---------------------------------------------------------------------------
// Held-out splitting at sequence level, stratified by speaker.

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// The test set gets ceil(fraction * N) sequences (kept within [1, N-1]),
// apportioned across speakers by largest remainder, and chosen at random
// within each speaker. Index lists are ascending.
inline SplitIndices split_indices(const Dataset& dataset, double test_fraction,
                                  RandomSource& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidFraction, "test fraction must be in (0, 1)");
  }
  const std::size_t n = dataset.sequences.size();
  if (n < 2) throw Error(ErrorCode::kEmptyDataset, "split needs >= 2 sequences");

  const double target = test_fraction * static_cast<double>(n);
  std::size_t n_test = static_cast<std::size_t>(std::ceil(target - 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);

  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    groups[dataset.sequences[i].speaker_id].push_back(i);
  }

  struct Quota {
    std::vector<std::size_t>* members;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (auto& [speaker, members] : groups) {
    const double exact = static_cast<double>(n_test) *
                         static_cast<double>(members.size()) /
                         static_cast<double>(n);
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({&members, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> by_remainder(quotas.size());
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) {
                     return quotas[a].remainder > quotas[b].remainder;
                   });
  for (std::size_t k = 0; assigned < n_test; k = (k + 1) % quotas.size()) {
    auto& q = quotas[by_remainder[k]];
    if (q.take < q.members->size()) {
      ++q.take;
      ++assigned;
    }
  }

  SplitIndices out;
  for (auto& q : quotas) {
    auto& m = *q.members;
    for (std::size_t i = m.size(); i > 1; --i) {
      std::swap(m[i - 1], m[rng.uniform_index(i)]);
    }
    out.test.insert(out.test.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(q.take));
    out.train.insert(out.train.end(), m.begin() + static_cast<std::ptrdiff_t>(q.take), m.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> indices,
                      std::string provenance) {
  Dataset out{d.feature_dim, d.num_classes, {}, std::move(provenance)};
  out.sequences.reserve(indices.size());
  for (auto i : indices) out.sequences.push_back(d.sequences.at(i));
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& dataset,
                                         double test_fraction,
                                         RandomSource& rng) {
  const auto idx = split_indices(dataset, test_fraction, rng);
  return {subset(dataset, idx.train, dataset.provenance + "/train"),
          subset(dataset, idx.test, dataset.provenance + "/test")};
}

}  // namespace fedpriv
