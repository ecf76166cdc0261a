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

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedpriv/byte_io.hpp"
#include "fedpriv/datastore.hpp"
#include "fedpriv/dpsgd.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/nn_core.hpp"

// Flat key=value run configuration. One setting per line, '#' starts a
// comment, whitespace around keys and values is ignored. Unknown and
// repeated keys are rejected. Command-line flags are applied on top through
// the same setter, so both paths share one set of validation rules.
namespace fedpriv {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfigError, "line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::kConfigError, "line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw Error(ErrorCode::kConfigError, "duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

namespace config_detail {

inline double to_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) {
    throw Error(ErrorCode::kConfigError, key + ": not a finite number: '" + v + "'");
  }
  return x;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  if (v.empty() || v[0] == '-' || v[0] == '+') {
    throw Error(ErrorCode::kConfigError, key + ": not a non-negative integer: '" + v + "'");
  }
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) {
    throw Error(ErrorCode::kConfigError, key + ": not a non-negative integer: '" + v + "'");
  }
  return x;
}

inline std::uint32_t to_u32(const std::string& key, const std::string& v) {
  const auto x = to_u64(key, v);
  if (x > 0xffffffffull) throw Error(ErrorCode::kConfigError, key + ": value too large");
  return static_cast<std::uint32_t>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::kConfigError, key + ": expected true or false, got '" + v + "'");
}

}  // namespace config_detail

struct RunConfig {
  DpSgdConfig dp;
  std::uint32_t epochs = 51;
  std::string addr = "127.0.0.1:7070";
  std::uint32_t workers = 1;
  std::uint32_t steps = 0;
  NetworkDims dims{13, 16, 32};
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data;
  std::optional<double> budget_epsilon;
  std::optional<double> budget_delta;
  std::uint32_t worker_id = 0;

  // Budget defaults to steps x step cost when not given.
  PrivacyParams budget() const {
    return {budget_epsilon.value_or(dp.step_params.epsilon * steps),
            budget_delta.value_or(dp.step_params.delta * steps)};
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys{
      "dp.epsilon_step", "dp.delta_step", "dp.clip",    "dp.noise_override", "dp.noisy",
      "dp.adjacency",    "train.lr",      "train.batch", "train.epochs",     "fed.addr",
      "fed.workers",     "fed.steps",     "model.input_dim", "model.hidden", "model.classes",
      "seed",            "data",          "budget.epsilon",  "budget.delta", "worker.id"};
  return keys;
}

inline void set_run_config(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace config_detail;
  if (key == "dp.epsilon_step") c.dp.step_params.epsilon = to_double(key, v);
  else if (key == "dp.delta_step") c.dp.step_params.delta = to_double(key, v);
  else if (key == "dp.clip") c.dp.clip_bound = to_double(key, v);
  else if (key == "dp.noise_override") {
    if (v == "none" || v.empty()) c.dp.noise_override.reset();
    else c.dp.noise_override = to_double(key, v);
  } else if (key == "dp.noisy") c.dp.noisy = to_bool(key, v);
  else if (key == "dp.adjacency") {
    if (v == "add_remove") c.dp.adjacency = Adjacency::kAddRemove;
    else if (v == "replace") c.dp.adjacency = Adjacency::kReplace;
    else throw Error(ErrorCode::kConfigError, key + ": expected add_remove or replace");
  } else if (key == "train.lr") c.dp.learning_rate = to_double(key, v);
  else if (key == "train.batch") c.dp.batch_size = to_u32(key, v);
  else if (key == "train.epochs") c.epochs = to_u32(key, v);
  else if (key == "fed.addr") c.addr = v;
  else if (key == "fed.workers") c.workers = to_u32(key, v);
  else if (key == "fed.steps") c.steps = to_u32(key, v);
  else if (key == "model.input_dim") c.dims.input_dim = to_u32(key, v);
  else if (key == "model.hidden") c.dims.hidden_dim = to_u32(key, v);
  else if (key == "model.classes") c.dims.output_dim = to_u32(key, v);
  else if (key == "seed") c.seed = to_u64(key, v);
  else if (key == "data") c.data = v;
  else if (key == "budget.epsilon") c.budget_epsilon = to_double(key, v);
  else if (key == "budget.delta") c.budget_delta = to_double(key, v);
  else if (key == "worker.id") c.worker_id = to_u32(key, v);
  else throw Error(ErrorCode::kConfigError, "unknown config key '" + key + "'");
}

// Checks every field against the owning module's rules. Errors surface as
// ConfigError so callers can map them to a usage failure.
inline void validate_run_config(const RunConfig& c) {
  try {
    validate_config(c.dp);
    validate_dims(c.dims);
    if (c.workers == 0) throw Error(ErrorCode::kInvalidArgument, "fed.workers must be >= 1");
    if (c.budget_epsilon || c.budget_delta) AccountLedger check(c.budget());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    throw Error(ErrorCode::kConfigError, e.what());
  }
}

inline RunConfig parse_run_config(const std::string& text, RunConfig base = {}) {
  for (const auto& [k, v] : parse_key_values(text)) set_run_config(base, k, v);
  return base;
}

inline RunConfig load_run_config(const std::string& path) {
  const auto raw = bytes::read_file(path);
  return parse_run_config(std::string(raw.begin(), raw.end()));
}

// Renders every key; parse_run_config(render_run_config(c)) == c.
inline std::string render_run_config(const RunConfig& c) {
  auto num = [](double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "dp.epsilon_step = " << num(c.dp.step_params.epsilon) << '\n'
      << "dp.delta_step = " << num(c.dp.step_params.delta) << '\n'
      << "dp.clip = " << num(c.dp.clip_bound) << '\n'
      << "dp.noise_override = " << (c.dp.noise_override ? num(*c.dp.noise_override) : "none") << '\n'
      << "dp.noisy = " << (c.dp.noisy ? "true" : "false") << '\n'
      << "dp.adjacency = " << (c.dp.adjacency == Adjacency::kReplace ? "replace" : "add_remove") << '\n'
      << "train.lr = " << num(c.dp.learning_rate) << '\n'
      << "train.batch = " << c.dp.batch_size << '\n'
      << "train.epochs = " << c.epochs << '\n'
      << "fed.addr = " << c.addr << '\n'
      << "fed.workers = " << c.workers << '\n'
      << "fed.steps = " << c.steps << '\n'
      << "model.input_dim = " << c.dims.input_dim << '\n'
      << "model.hidden = " << c.dims.hidden_dim << '\n'
      << "model.classes = " << c.dims.output_dim << '\n';
  if (c.seed) out << "seed = " << *c.seed << '\n';
  if (c.data) out << "data = " << *c.data << '\n';
  if (c.budget_epsilon) out << "budget.epsilon = " << num(*c.budget_epsilon) << '\n';
  if (c.budget_delta) out << "budget.delta = " << num(*c.budget_delta) << '\n';
  out << "worker.id = " << c.worker_id << '\n';
  return out.str();
}

// SynthSpec in the same key=value form. Keys are the field names, plus
// outlier.index / outlier.multiplier (both or neither).
inline SynthSpec parse_synth_spec(const std::string& text) {
  using namespace config_detail;
  SynthSpec s;
  std::optional<std::uint32_t> index;
  std::optional<double> multiplier;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "feature_dim") s.feature_dim = to_u32(k, v);
    else if (k == "num_classes") s.num_classes = to_u32(k, v);
    else if (k == "n_speakers") s.n_speakers = to_u32(k, v);
    else if (k == "sequences_per_speaker") s.sequences_per_speaker = to_u32(k, v);
    else if (k == "frames_per_sequence") s.frames_per_sequence = to_u32(k, v);
    else if (k == "speaker_id_base") s.speaker_id_base = to_u32(k, v);
    else if (k == "center_seed") s.center_seed = to_u64(k, v);
    else if (k == "speaker_offset_scale") s.speaker_offset_scale = to_double(k, v);
    else if (k == "noise_scale") s.noise_scale = to_double(k, v);
    else if (k == "outlier.index") index = to_u32(k, v);
    else if (k == "outlier.multiplier") multiplier = to_double(k, v);
    else if (k == "provenance") s.provenance = v;
    else throw Error(ErrorCode::kConfigError, "unknown synth key '" + k + "'");
  }
  if (index.has_value() != multiplier.has_value()) {
    throw Error(ErrorCode::kConfigError, "outlier.index and outlier.multiplier go together");
  }
  if (index) s.outlier = OutlierSpeaker{*index, *multiplier};
  try {
    validate_synth_spec(s);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  return s;
}

}  // namespace fedpriv
