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
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>

namespace fedpriv {

// Seeded random stream shared by every mechanism and trainer.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard, so raw 64-bit draws agree across platforms. The standard library
// distributions are NOT portable, so all transforms below are spelled out:
//
//   uniform()      (x >> 11) * 2^-53                 in [0, 1)
//   uniform_open() ((x >> 11) + 0.5) * 2^-53         in (0, 1)
//   gaussian()     Box-Muller on two uniform_open() draws; both outputs are
//                  used (cosine branch first, then the cached sine branch)
//   laplace(b)     inverse CDF  -b * sgn(u - 1/2) * ln(1 - 2|u - 1/2|)
//                  with u = uniform_open()
//
// Bitwise reproducibility of gaussian/laplace also depends on the platform
// libm (log, cos, sin); within one toolchain the streams are bit-identical.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform integer in [0, n) by rejection, so no modulo bias.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  double gaussian() {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    const double u1 = uniform_open();
    const double u2 = uniform_open();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  // Standard Laplace transform of a given uniform draw; exposed so the
  // inverse-CDF mapping can be checked at fixed points.
  static double laplace_from_uniform(double u, double scale) {
    const double centered = u - 0.5;
    const double sign = centered < 0 ? -1.0 : (centered > 0 ? 1.0 : 0.0);
    return -scale * sign * std::log(1.0 - 2.0 * std::fabs(centered));
  }

  double laplace(double scale) {
    return laplace_from_uniform(uniform_open(), scale);
  }

  // Derives an independent child stream; used to give subsystems their own
  // sources from one user-supplied seed.
  RandomSource fork() { return RandomSource(engine_()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace fedpriv
