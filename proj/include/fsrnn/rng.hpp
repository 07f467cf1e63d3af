// Copyright 2026 The fsrnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace fsrnn {

// Independent sub-streams derived from one root seed.
enum class RngStream : std::uint64_t {
  init = 1,
  dropout = 2,
  zoneout = 3,
  shuffle = 4,
  probe = 5,
  corpus = 6,
};

/// Seeded generator with a platform-independent output sequence.
///
/// The engine is std::mt19937_64, whose output is fixed by the standard. The
/// stream seed is splitmix64(root ^ splitmix64(stream)). Uniform and normal
/// variates are derived here rather than with <random> distributions, whose
/// algorithms vary between standard libraries: uniform() takes the top 53
/// bits, normal() is Box-Muller without caching.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, RngStream stream = RngStream::init);

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform();
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  // [0, n)
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_;
  }

 private:
  Rng() = default;
  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fsrnn
