// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace tsse {

/// Seeded random stream. Distributions are instantiated per draw so the
/// engine state is the complete state (serializable, resumable).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }

  /// Independent child stream keyed by a tag; does not advance this stream.
  Rng fork(uint64_t tag) const;
  Rng fork(std::string_view tag) const;

  double uniform(double lo = 0.0, double hi = 1.0);
  int64_t integer(int64_t lo, int64_t hi);  // inclusive
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  uint64_t next_u64() { return engine_(); }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

uint64_t mix64(uint64_t x);
uint64_t hash_tag(std::string_view tag);

}  // namespace tsse
