// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "tsse/audio.hpp"

namespace tsse {

/// Hann-windowed STFT settings. The default derivation is a 32 ms window,
/// 16 ms hop and an FFT as long as the window, at the signal's own rate.
struct StftConfig {
  int win_length = 512;
  int hop_length = 256;
  int n_fft = 512;

  static StftConfig for_rate(int fs, double win_ms = 32.0, double hop_ms = 16.0);
  /// Arbitrary window/hop pair (FFT size = window); used by small analyses and tests.
  static StftConfig custom(int win_length, int hop_length);

  int num_bins() const { return n_fft / 2 + 1; }
  /// Frames produced for a signal of `length` samples: ceil(length / hop).
  int64_t num_frames(int64_t length) const;
  void validate() const;

  bool operator==(const StftConfig&) const = default;
};

struct ComplexSpectrogram {
  torch::Tensor data;  // complex, [..., T, F]
  StftConfig cfg;
  int fs = 16000;

  int64_t frames() const { return data.size(-2); }
  int64_t bins() const { return data.size(-1); }
  void validate() const;
};

torch::Tensor hann_window(int length, torch::Dtype dtype = torch::kFloat64);

/// Differentiable STFT of real signals [..., N] -> complex [..., T, F].
/// Centered frames with reflection padding, T = ceil(N / hop).
torch::Tensor stft(const torch::Tensor& x, const StftConfig& cfg);

/// Weighted overlap-add inverse of `stft`; output is [..., length].
torch::Tensor istft(const torch::Tensor& spec, const StftConfig& cfg, int64_t length);

ComplexSpectrogram stft(const Waveform& wav);
ComplexSpectrogram stft(const Waveform& wav, const StftConfig& cfg);
Waveform istft(const ComplexSpectrogram& spec, int64_t length);

/// complex [..., T, F] <-> real [..., 2, T, F] (real, imag channels).
torch::Tensor complex_to_channels(const torch::Tensor& spec);
torch::Tensor channels_to_complex(const torch::Tensor& ri);

}  // namespace tsse
