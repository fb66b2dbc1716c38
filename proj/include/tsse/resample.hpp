// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tsse/audio.hpp"

namespace tsse {

double bessel_i0(double x);
double kaiser_beta(double attenuation_db);

/// Odd-length linear-phase Kaiser-windowed sinc lowpass, unit DC gain.
std::vector<double> design_lowpass(double cutoff_hz, double fs, int num_taps,
                                   double attenuation_db = 80.0);

/// Polyphase windowed-sinc resampler for an exact rational ratio to/from.
/// The stopband starts at the lower Nyquist frequency, the passband ends at
/// `passband` times it.
class Resampler {
 public:
  Resampler(int from_fs, int to_fs, double passband = 0.85, double attenuation_db = 90.0);

  int from_fs() const { return from_; }
  int to_fs() const { return to_; }
  int up() const { return up_; }
  int down() const { return down_; }

  /// round(len * to / from), in exact integer arithmetic.
  int64_t output_length(int64_t input_length) const;
  std::vector<double> process(std::span<const double> x) const;

 private:
  int from_;
  int to_;
  int up_;
  int down_;
  int64_t half_;
  std::vector<double> taps_;  // h[m + half_], m in [-half_, half_]
};

std::vector<double> resample(std::span<const double> x, int from_fs, int to_fs);
Waveform resample(const Waveform& wav, int target_fs);

}  // namespace tsse
