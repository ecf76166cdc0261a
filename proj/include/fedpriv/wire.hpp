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
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "fedpriv/byte_io.hpp"
#include "fedpriv/dpsgd.hpp"
#include "fedpriv/error.hpp"
#include "fedpriv/nn_core.hpp"

// Wire messages of the federation protocol and their frame codec.
//
// Frame: "FDP1" | u8 type tag | u32 payload length | payload
// Integers are u32 little-endian, reals IEEE-754 f64 little-endian.
//
//   HELLO (1)  u32 worker_id | u32 protocol_version
//   INIT  (2)  u32 input_dim | u32 hidden_dim | u32 output_dim |
//              u32 total_steps | f64 lr | u32 init_kind
//              kind 0: u32 seed_lo | u32 seed_hi
//              kind 1: u32 count | count x f64 parameters
//   GRAD  (3)  u32 step_id | u32 noisy | f64 spent_eps | f64 spent_delta |
//              f64 clip_bound | u32 batch_size | u32 count | count x f64
//   AVG   (4)  u32 step_id | u32 count | count x f64
//   DONE  (5)  u32 step_id
//   ABORT (6)  u32 reason | u32 text_length | text bytes
namespace fedpriv::wire {

inline constexpr std::string_view kFrameMagic = "FDP1";
inline constexpr std::size_t kHeaderSize = 9;
inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class MessageType : std::uint8_t {
  kHello = 1,
  kInit = 2,
  kGrad = 3,
  kAvg = 4,
  kDone = 5,
  kAbort = 6,
};

inline std::string_view type_name(MessageType t) {
  switch (t) {
    case MessageType::kHello: return "HELLO";
    case MessageType::kInit: return "INIT";
    case MessageType::kGrad: return "GRAD";
    case MessageType::kAvg: return "AVG";
    case MessageType::kDone: return "DONE";
    case MessageType::kAbort: return "ABORT";
  }
  return "?";
}

enum class AbortReason : std::uint32_t {
  kBudgetExceeded = 1,
  kTimedOut = 2,
  kProtocolError = 3,
  kDecodeError = 4,
  kTransportError = 5,
  kWorkerFailure = 6,
};

inline std::string_view reason_name(AbortReason r) {
  switch (r) {
    case AbortReason::kBudgetExceeded: return "BudgetExceeded";
    case AbortReason::kTimedOut: return "TimedOut";
    case AbortReason::kProtocolError: return "ProtocolError";
    case AbortReason::kDecodeError: return "DecodeError";
    case AbortReason::kTransportError: return "TransportError";
    case AbortReason::kWorkerFailure: return "WorkerFailure";
  }
  return "Unknown";
}

struct Hello {
  std::uint32_t worker_id = 0;
  std::uint32_t protocol_version = kProtocolVersion;
  friend bool operator==(const Hello&, const Hello&) = default;
};

// Replicas derive their weights from init_seed, or copy init_parameters
// verbatim (warm-started models). Exactly one is set.
struct Init {
  NetworkDims dims;
  std::uint32_t total_steps = 0;
  double lr = 0.0;
  std::optional<std::uint64_t> init_seed;
  std::optional<std::vector<double>> init_parameters;
  friend bool operator==(const Init&, const Init&) = default;
};

struct Grad {
  GradientRelease release;
  friend bool operator==(const Grad&, const Grad&) = default;
};

struct Avg {
  std::uint32_t step_id = 0;
  FlatGradient average;
  friend bool operator==(const Avg&, const Avg&) = default;
};

struct Done {
  std::uint32_t step_id = 0;
  friend bool operator==(const Done&, const Done&) = default;
};

struct Abort {
  AbortReason reason = AbortReason::kProtocolError;
  std::string text;
  friend bool operator==(const Abort&, const Abort&) = default;
};

using Message = std::variant<Hello, Init, Grad, Avg, Done, Abort>;

inline MessageType type_of(const Message& m) {
  return static_cast<MessageType>(m.index() + 1);
}

inline std::uint32_t step_of(const Message& m) {
  return std::visit(
      [](const auto& v) -> std::uint32_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Grad>) return v.release.step_id;
        else if constexpr (std::is_same_v<T, Avg> || std::is_same_v<T, Done>) return v.step_id;
        else return 0;
      },
      m);
}

namespace detail {

inline void put_vector(bytes::Writer& w, std::span<const double> v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.f64(x);
}

inline std::vector<double> get_vector(bytes::Reader& r) {
  const std::uint32_t n = r.u32();
  r.need(std::size_t{n} * 8);
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return v;
}

inline void encode_payload(bytes::Writer& w, const Hello& m) {
  w.u32(m.worker_id);
  w.u32(m.protocol_version);
}

inline void encode_payload(bytes::Writer& w, const Init& m) {
  w.u32(m.dims.input_dim);
  w.u32(m.dims.hidden_dim);
  w.u32(m.dims.output_dim);
  w.u32(m.total_steps);
  w.f64(m.lr);
  if (m.init_parameters) {
    w.u32(1);
    put_vector(w, *m.init_parameters);
  } else {
    const std::uint64_t seed = m.init_seed.value_or(0);
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(seed));
    w.u32(static_cast<std::uint32_t>(seed >> 32));
  }
}

inline void encode_payload(bytes::Writer& w, const Grad& m) {
  const auto& r = m.release;
  w.u32(r.step_id);
  w.u32(r.noisy ? 1 : 0);
  w.f64(r.spent.epsilon);
  w.f64(r.spent.delta);
  w.f64(r.clip_bound);
  w.u32(r.batch_size);
  put_vector(w, r.vector.values);
}

inline void encode_payload(bytes::Writer& w, const Avg& m) {
  w.u32(m.step_id);
  put_vector(w, m.average.values);
}

inline void encode_payload(bytes::Writer& w, const Done& m) { w.u32(m.step_id); }

inline void encode_payload(bytes::Writer& w, const Abort& m) {
  w.u32(static_cast<std::uint32_t>(m.reason));
  w.u32(static_cast<std::uint32_t>(m.text.size()));
  w.raw(m.text);
}

inline Message decode_payload(MessageType type, bytes::Reader& r) {
  switch (type) {
    case MessageType::kHello: {
      Hello m;
      m.worker_id = r.u32();
      m.protocol_version = r.u32();
      return m;
    }
    case MessageType::kInit: {
      Init m;
      m.dims.input_dim = r.u32();
      m.dims.hidden_dim = r.u32();
      m.dims.output_dim = r.u32();
      m.total_steps = r.u32();
      m.lr = r.f64();
      const std::uint32_t kind = r.u32();
      if (kind == 0) {
        const std::uint64_t lo = r.u32();
        const std::uint64_t hi = r.u32();
        m.init_seed = lo | (hi << 32);
      } else if (kind == 1) {
        m.init_parameters = get_vector(r);
      } else {
        throw Error(ErrorCode::kDecodeError, "unknown INIT kind");
      }
      return m;
    }
    case MessageType::kGrad: {
      Grad m;
      auto& rel = m.release;
      rel.step_id = r.u32();
      const std::uint32_t noisy = r.u32();
      if (noisy > 1) throw Error(ErrorCode::kDecodeError, "bad noisy flag");
      rel.noisy = noisy == 1;
      rel.spent.epsilon = r.f64();
      rel.spent.delta = r.f64();
      rel.clip_bound = r.f64();
      rel.batch_size = r.u32();
      rel.vector.values = get_vector(r);
      return m;
    }
    case MessageType::kAvg: {
      Avg m;
      m.step_id = r.u32();
      m.average.values = get_vector(r);
      return m;
    }
    case MessageType::kDone:
      return Done{r.u32()};
    case MessageType::kAbort: {
      Abort m;
      const std::uint32_t reason = r.u32();
      if (reason < 1 || reason > 6) throw Error(ErrorCode::kDecodeError, "unknown abort reason");
      m.reason = static_cast<AbortReason>(reason);
      m.text = r.raw(r.u32());
      return m;
    }
  }
  throw Error(ErrorCode::kDecodeError, "unknown message type");
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Message& msg) {
  bytes::Writer w;
  w.raw(kFrameMagic);
  w.u8(static_cast<std::uint8_t>(type_of(msg)));
  w.u32(0);  // patched below
  std::visit([&w](const auto& m) { detail::encode_payload(w, m); }, msg);
  auto& buf = w.buffer();
  const auto len = static_cast<std::uint32_t>(buf.size() - kHeaderSize);
  for (int i = 0; i < 4; ++i) buf[5 + i] = static_cast<std::uint8_t>(len >> (8 * i));
  return w.take();
}

struct FrameHeader {
  MessageType type;
  std::uint32_t payload_length;
};

inline FrameHeader decode_header(std::span<const std::uint8_t> header) {
  bytes::Reader r(header.first(std::min(header.size(), kHeaderSize)), ErrorCode::kDecodeError);
  if (r.raw(kFrameMagic.size()) != kFrameMagic) {
    throw Error(ErrorCode::kDecodeError, "bad frame magic");
  }
  const std::uint8_t tag = r.u8();
  if (tag < 1 || tag > 6) throw Error(ErrorCode::kDecodeError, "unknown message tag");
  const std::uint32_t len = r.u32();
  if (len > kMaxPayload) throw Error(ErrorCode::kDecodeError, "payload too large");
  return {static_cast<MessageType>(tag), len};
}

inline Message decode_payload(MessageType type, std::span<const std::uint8_t> payload) {
  bytes::Reader r(payload, ErrorCode::kDecodeError);
  Message m = detail::decode_payload(type, r);
  if (!r.done()) throw Error(ErrorCode::kDecodeError, "payload length mismatch");
  return m;
}

// Decodes exactly one frame occupying all of `frame`.
inline Message decode(std::span<const std::uint8_t> frame) {
  const FrameHeader h = decode_header(frame);
  if (frame.size() != kHeaderSize + h.payload_length) {
    throw Error(ErrorCode::kDecodeError, "payload length field does not match frame size");
  }
  return decode_payload(h.type, frame.subspan(kHeaderSize));
}

}  // namespace fedpriv::wire
