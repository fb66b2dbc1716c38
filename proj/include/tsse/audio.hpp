// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "tsse/error.hpp"

namespace tsse {

/// Sampling frequencies accepted anywhere in the library.
inline constexpr std::array<int, 7> kSupportedRates = {8000,  16000, 22050, 24000,
                                                       32000, 44100, 48000};

bool is_supported_rate(int fs);
void require_supported_rate(int fs);

/// Mono audio buffer with its sampling frequency. Plain doubles; the neural
/// stages convert to tensors at their boundary.
struct Waveform {
  std::vector<double> samples;
  int fs = 16000;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate);

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const { return static_cast<double>(samples.size()) / fs; }

  /// Throws unless samples are finite and fs is supported.
  void validate() const;
};

double energy(std::span<const double> x);
double power(std::span<const double> x);
double peak(std::span<const double> x);

/// 1-D tensor copy of the samples (float64 unless another dtype is given).
torch::Tensor to_tensor(const Waveform& w, torch::Dtype dtype = torch::kFloat64);
std::vector<double> to_vector(const torch::Tensor& t);
Waveform from_tensor(const torch::Tensor& t, int fs);

}  // namespace tsse
