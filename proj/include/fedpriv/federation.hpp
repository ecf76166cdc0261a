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
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedpriv/datastore.hpp"
#include "fedpriv/dp_core.hpp"
#include "fedpriv/dpsgd.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/nn_core.hpp"
#include "fedpriv/random.hpp"
#include "fedpriv/wire.hpp"

// Synchronous gradient federation. Workers release privatized gradients, the
// coordinator averages one release per worker per step and broadcasts the
// average, and every replica applies the identical update. The coordinator
// holds no data and no replica; only GradientRelease contents derived from
// private data ever cross the wire.
//
// Both sides are written as transport-agnostic state machines. The in-process
// simulator and the TCP transport drive the same machines, so the two produce
// bit-identical models for identical seeds.
namespace fedpriv {

// Coordinate-wise unweighted mean, accumulated in ascending worker order.
// `releases` must already be in that order.
inline FlatGradient average_releases(std::span<const GradientRelease> releases) {
  if (releases.empty()) throw Error(ErrorCode::kProtocolError, "no releases to average");
  const std::size_t n = releases.front().vector.size();
  const std::uint32_t step = releases.front().step_id;
  FlatGradient avg;
  avg.values.assign(n, 0.0);
  for (const auto& r : releases) {
    if (r.vector.size() != n) throw Error(ErrorCode::kProtocolError, "release length mismatch");
    if (r.step_id != step) throw Error(ErrorCode::kProtocolError, "release step mismatch");
    for (std::size_t i = 0; i < n; ++i) avg.values[i] += r.vector.values[i];
  }
  const double k = static_cast<double>(releases.size());
  for (auto& x : avg.values) x /= k;
  return avg;
}

// One line of the coordinator transcript. direction is "recv" or "send".
struct TranscriptEntry {
  std::string direction;
  std::uint32_t worker_id = 0;
  wire::MessageType type = wire::MessageType::kHello;
  std::uint32_t step_id = 0;
  std::size_t payload_bytes = 0;
};

// Tab-separated: direction, worker_id, type, step_id, payload byte length.
inline std::string format_transcript(std::span<const TranscriptEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.direction + '\t' + std::to_string(e.worker_id) + '\t' +
           std::string(wire::type_name(e.type)) + '\t' + std::to_string(e.step_id) +
           '\t' + std::to_string(e.payload_bytes) + '\n';
  }
  return out;
}

struct SessionConfig {
  std::uint32_t n_workers = 1;
  std::uint32_t total_steps = 0;
  double lr = 1e-4;
  NetworkDims dims{13, 16, 32};
  // Replicas are seeded from init_seed unless init_model is given.
  std::uint64_t init_seed = 0;
  std::optional<Network> init_model;
};

struct WorkerSpend {
  ExactSum epsilon;
  ExactSum delta;
  std::size_t releases = 0;
  std::size_t noisy_releases = 0;
};

struct CoordinatorSummary {
  std::uint32_t steps_completed = 0;
  std::size_t grads_received = 0;
  std::vector<WorkerSpend> spend;
  bool aborted = false;
  std::optional<wire::AbortReason> abort_reason;
  std::string abort_text;
};

struct Outgoing {
  std::uint32_t worker_id;
  wire::Message message;
};

class CoordinatorMachine {
 public:
  enum class Phase { kAwaitHello, kRunning, kDone, kAborted };

  explicit CoordinatorMachine(SessionConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.n_workers == 0) throw Error(ErrorCode::kInvalidArgument, "need >= 1 worker");
    validate_dims(cfg_.dims);
    if (cfg_.init_model && cfg_.init_model->dims() != cfg_.dims) {
      throw Error(ErrorCode::kShapeError, "init model dims differ from session dims");
    }
    hello_seen_.assign(cfg_.n_workers, false);
    pending_.resize(cfg_.n_workers);
    summary_.spend.resize(cfg_.n_workers);
  }

  Phase phase() const { return phase_; }
  bool finished() const { return phase_ == Phase::kDone || phase_ == Phase::kAborted; }
  const CoordinatorSummary& summary() const { return summary_; }
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }
  const SessionConfig& config() const { return cfg_; }

  // Whether a message from worker_id is needed to make progress.
  bool expecting(std::uint32_t worker_id) const {
    if (worker_id >= cfg_.n_workers) return false;
    if (phase_ == Phase::kAwaitHello) return !hello_seen_[worker_id];
    if (phase_ == Phase::kRunning) return !pending_[worker_id].has_value();
    return false;
  }

  // Feeds one decoded message from worker_id. Protocol violations abort the
  // session; the returned messages must be delivered in order.
  std::vector<Outgoing> handle(std::uint32_t worker_id, const wire::Message& msg,
                               std::size_t payload_bytes) {
    transcript_.push_back({"recv", worker_id, wire::type_of(msg), wire::step_of(msg), payload_bytes});
    if (finished()) return {};
    if (const auto* a = std::get_if<wire::Abort>(&msg)) {
      return abort(a->reason, "worker " + std::to_string(worker_id) + ": " + a->text, worker_id);
    }
    if (worker_id >= cfg_.n_workers) {
      return abort(wire::AbortReason::kProtocolError, "worker id out of range");
    }
    if (phase_ == Phase::kAwaitHello) return on_hello(worker_id, msg);
    return on_grad(worker_id, msg);
  }

  // Broadcasts ABORT to every worker except `skip` (if any).
  std::vector<Outgoing> abort(wire::AbortReason reason, std::string text,
                              std::optional<std::uint32_t> skip = std::nullopt) {
    if (finished()) return {};
    phase_ = Phase::kAborted;
    summary_.aborted = true;
    summary_.abort_reason = reason;
    summary_.abort_text = text;
    std::vector<Outgoing> out;
    for (std::uint32_t w = 0; w < cfg_.n_workers; ++w) {
      if (skip && *skip == w) continue;
      out.push_back({w, wire::Abort{reason, text}});
    }
    return record(std::move(out));
  }

 private:
  std::vector<Outgoing> on_hello(std::uint32_t worker_id, const wire::Message& msg) {
    const auto* hello = std::get_if<wire::Hello>(&msg);
    if (!hello) return abort(wire::AbortReason::kProtocolError, "expected HELLO");
    if (hello->protocol_version != wire::kProtocolVersion) {
      return abort(wire::AbortReason::kProtocolError, "protocol version mismatch");
    }
    if (hello_seen_[worker_id]) {
      return abort(wire::AbortReason::kProtocolError, "duplicate worker id");
    }
    hello_seen_[worker_id] = true;
    if (++hellos_ < cfg_.n_workers) return {};

    wire::Init init;
    init.dims = cfg_.dims;
    init.total_steps = cfg_.total_steps;
    init.lr = cfg_.lr;
    if (cfg_.init_model) {
      const auto p = cfg_.init_model->parameters();
      init.init_parameters.emplace(p.begin(), p.end());
    } else {
      init.init_seed = cfg_.init_seed;
    }
    std::vector<Outgoing> out;
    for (std::uint32_t w = 0; w < cfg_.n_workers; ++w) out.push_back({w, init});
    phase_ = Phase::kRunning;
    if (cfg_.total_steps == 0) append_done(out);
    return record(std::move(out));
  }

  std::vector<Outgoing> on_grad(std::uint32_t worker_id, const wire::Message& msg) {
    const auto* grad = std::get_if<wire::Grad>(&msg);
    if (!grad) return abort(wire::AbortReason::kProtocolError, "expected GRAD");
    const auto& rel = grad->release;
    if (rel.step_id != step_) {
      return abort(wire::AbortReason::kProtocolError, "GRAD for wrong step");
    }
    if (pending_[worker_id]) {
      return abort(wire::AbortReason::kProtocolError, "duplicate GRAD in round");
    }
    if (rel.vector.size() != cfg_.dims.parameter_count()) {
      return abort(wire::AbortReason::kProtocolError, "GRAD length does not match INIT dims");
    }
    pending_[worker_id] = rel;
    ++summary_.grads_received;
    auto& spend = summary_.spend[worker_id];
    spend.epsilon.add(rel.spent.epsilon);
    spend.delta.add(rel.spent.delta);
    ++spend.releases;
    if (rel.noisy) ++spend.noisy_releases;
    if (++received_ < cfg_.n_workers) return {};

    // Barrier reached: every worker has reported for this step.
    std::vector<GradientRelease> ordered;
    ordered.reserve(cfg_.n_workers);
    for (auto& p : pending_) ordered.push_back(std::move(*p));
    wire::Avg avg{step_, average_releases(ordered)};
    std::vector<Outgoing> out;
    for (std::uint32_t w = 0; w < cfg_.n_workers; ++w) out.push_back({w, avg});
    for (auto& p : pending_) p.reset();
    received_ = 0;
    ++step_;
    summary_.steps_completed = step_;
    if (step_ == cfg_.total_steps) append_done(out);
    return record(std::move(out));
  }

  void append_done(std::vector<Outgoing>& out) {
    for (std::uint32_t w = 0; w < cfg_.n_workers; ++w) out.push_back({w, wire::Done{step_}});
    phase_ = Phase::kDone;
  }

  std::vector<Outgoing> record(std::vector<Outgoing> out) {
    for (const auto& o : out) {
      transcript_.push_back({"send", o.worker_id, wire::type_of(o.message),
                             wire::step_of(o.message),
                             wire::encode(o.message).size() - wire::kHeaderSize});
    }
    return out;
  }

  SessionConfig cfg_;
  Phase phase_ = Phase::kAwaitHello;
  std::vector<bool> hello_seen_;
  std::uint32_t hellos_ = 0;
  std::uint32_t step_ = 0;
  std::uint32_t received_ = 0;
  std::vector<std::optional<GradientRelease>> pending_;
  CoordinatorSummary summary_;
  std::vector<TranscriptEntry> transcript_;
};

struct WorkerSetup {
  std::uint32_t worker_id = 0;
  DpSgdConfig dp;
  std::shared_ptr<const Dataset> data;
  PrivacyParams budget{0.0, 0.0};
  std::uint64_t seed = 0;
};

enum class WorkerStatus { kRunning, kCompleted, kAborted };

struct WorkerResult {
  WorkerStatus status = WorkerStatus::kRunning;
  std::optional<Network> network;
  AccountLedger ledger{PrivacyParams{}};
  std::uint32_t steps_applied = 0;
  // parameter_hash after INIT, then after every applied AVG.
  std::vector<std::uint64_t> round_hashes;
  std::optional<wire::AbortReason> abort_reason;
  bool abort_was_local = false;
  std::string abort_text;
};

class WorkerMachine {
 public:
  explicit WorkerMachine(WorkerSetup setup)
      : setup_(std::move(setup)), rng_(setup_.seed) {
    if (!setup_.data) throw Error(ErrorCode::kInvalidArgument, "worker has no dataset");
    validate_config(setup_.dp);
    require_training_data(*setup_.data);
    validate_dataset(*setup_.data);
    result_.ledger = AccountLedger(setup_.budget);
    sampler_.emplace(setup_.data->sequences.size(), setup_.dp.batch_size);
  }

  std::uint32_t worker_id() const { return setup_.worker_id; }
  bool finished() const { return result_.status != WorkerStatus::kRunning; }
  const WorkerResult& result() const { return result_; }
  WorkerResult take_result() { return std::move(result_); }

  wire::Message start() const { return wire::Hello{setup_.worker_id, wire::kProtocolVersion}; }

  std::vector<wire::Message> handle(const wire::Message& msg) {
    if (finished()) return {};
    return std::visit([this](const auto& m) { return on(m); }, msg);
  }

  // Transport failure: stop, keeping the ledger of releases already sent.
  void fail(wire::AbortReason reason, std::string text) {
    if (finished()) return;
    result_.status = WorkerStatus::kAborted;
    result_.abort_reason = reason;
    result_.abort_was_local = true;
    result_.abort_text = std::move(text);
    if (net_) result_.network = *net_;
  }

 private:
  std::vector<wire::Message> on(const wire::Init& init) {
    if (net_) return local_abort(wire::AbortReason::kProtocolError, "second INIT");
    if (init.dims.input_dim != setup_.data->feature_dim ||
        init.dims.output_dim < setup_.data->num_classes) {
      return local_abort(wire::AbortReason::kProtocolError,
                         "model dims incompatible with local dataset");
    }
    try {
      if (init.init_parameters) {
        net_ = Network::FromParameters(init.dims, *init.init_parameters);
      } else {
        RandomSource init_rng(init.init_seed.value_or(0));
        net_ = init_network(init.dims, init_rng);
      }
    } catch (const Error& e) {
      return local_abort(wire::AbortReason::kProtocolError, e.what());
    }
    total_steps_ = init.total_steps;
    lr_ = init.lr;
    result_.round_hashes.push_back(parameter_hash(*net_));
    if (total_steps_ == 0) return {};
    return compute_grad();
  }

  std::vector<wire::Message> on(const wire::Avg& avg) {
    if (!net_ || avg.step_id != step_ || !awaiting_avg_) {
      return local_abort(wire::AbortReason::kProtocolError, "unexpected AVG");
    }
    if (avg.average.size() != net_->parameter_count()) {
      return local_abort(wire::AbortReason::kProtocolError, "AVG length mismatch");
    }
    apply_update(*net_, avg.average, lr_);
    awaiting_avg_ = false;
    ++step_;
    result_.steps_applied = step_;
    result_.round_hashes.push_back(parameter_hash(*net_));
    if (step_ < total_steps_) return compute_grad();
    return {};
  }

  std::vector<wire::Message> on(const wire::Done& done) {
    if (!net_ || done.step_id != step_ || step_ != total_steps_) {
      return local_abort(wire::AbortReason::kProtocolError, "unexpected DONE");
    }
    result_.status = WorkerStatus::kCompleted;
    result_.network = *net_;
    return {};
  }

  std::vector<wire::Message> on(const wire::Abort& abort) {
    result_.status = WorkerStatus::kAborted;
    result_.abort_reason = abort.reason;
    result_.abort_text = abort.text;
    if (net_) result_.network = *net_;
    return {};
  }

  template <typename Other>
  std::vector<wire::Message> on(const Other&) {
    return local_abort(wire::AbortReason::kProtocolError,
                       "unexpected message from coordinator");
  }

  std::vector<wire::Message> compute_grad() {
    const auto idx = sampler_->next(rng_);
    try {
      GradientRelease rel = train_step(*net_, gather(*setup_.data, idx), setup_.dp,
                                        result_.ledger, rng_, step_);
      awaiting_avg_ = true;
      return {wire::Grad{std::move(rel)}};
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kBudgetExceeded) {
        return local_abort(wire::AbortReason::kBudgetExceeded, e.what());
      }
      return local_abort(wire::AbortReason::kWorkerFailure, e.what());
    }
  }

  std::vector<wire::Message> local_abort(wire::AbortReason reason, std::string text) {
    result_.status = WorkerStatus::kAborted;
    result_.abort_reason = reason;
    result_.abort_was_local = true;
    result_.abort_text = text;
    if (net_) result_.network = *net_;
    return {wire::Abort{reason, std::move(text)}};
  }

  WorkerSetup setup_;
  RandomSource rng_;
  std::optional<BatchSampler> sampler_;
  std::optional<Network> net_;
  std::uint32_t total_steps_ = 0;
  double lr_ = 0.0;
  std::uint32_t step_ = 0;
  bool awaiting_avg_ = false;
  WorkerResult result_;
};

struct SessionResult {
  std::vector<WorkerResult> workers;
  CoordinatorSummary summary;
  std::vector<TranscriptEntry> transcript;
};

// Runs the protocol over an in-memory FIFO bus. Every message is encoded and
// decoded on the way, exactly as on a socket; delivery is strictly ordered
// and single-threaded, so the run is fully deterministic.
inline SessionResult inproc_session(const SessionConfig& cfg, std::vector<WorkerSetup> setups) {
  if (setups.size() != cfg.n_workers) {
    throw Error(ErrorCode::kInvalidArgument, "one WorkerSetup per worker is required");
  }
  CoordinatorMachine coordinator(cfg);
  std::vector<WorkerMachine> workers;
  workers.reserve(setups.size());
  for (auto& s : setups) workers.emplace_back(std::move(s));

  struct Envelope {
    bool to_coordinator;
    std::uint32_t worker_id;
    std::vector<std::uint8_t> frame;
  };
  std::deque<Envelope> bus;
  std::vector<std::size_t> slot_of(cfg.n_workers, SIZE_MAX);
  for (std::size_t i = 0; i < workers.size(); ++i) {
    const auto id = workers[i].worker_id();
    if (id >= cfg.n_workers || slot_of[id] != SIZE_MAX) {
      throw Error(ErrorCode::kInvalidArgument, "worker ids must be a permutation of 0..n-1");
    }
    slot_of[id] = i;
  }
  for (auto& w : workers) bus.push_back({true, w.worker_id(), wire::encode(w.start())});

  while (!bus.empty()) {
    Envelope env = std::move(bus.front());
    bus.pop_front();
    const wire::Message msg = wire::decode(env.frame);
    if (env.to_coordinator) {
      auto out = coordinator.handle(env.worker_id, msg, env.frame.size() - wire::kHeaderSize);
      for (auto& o : out) bus.push_back({false, o.worker_id, wire::encode(o.message)});
    } else {
      auto& w = workers[slot_of[env.worker_id]];
      for (auto& reply : w.handle(msg)) bus.push_back({true, env.worker_id, wire::encode(reply)});
    }
  }

  SessionResult result;
  for (std::uint32_t id = 0; id < cfg.n_workers; ++id) {
    result.workers.push_back(workers[slot_of[id]].take_result());
  }
  result.summary = coordinator.summary();
  result.transcript = coordinator.transcript();
  return result;
}

}  // namespace fedpriv
