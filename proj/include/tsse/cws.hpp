// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <cstdint>

#include <torch/torch.h>

#include "tsse/stft.hpp"

namespace tsse {

inline constexpr int kCwsRate = 48000;
inline constexpr int kCwsBands = 3;

/// Three contiguous frequency slices of a 48 kHz spectrogram: equal-width
/// thirds of the bins below Nyquist, with the Nyquist bin in the top band.
struct SubbandStack {
  std::array<torch::Tensor, kCwsBands> bands;  // complex [..., T, F_b]
  std::array<int64_t, kCwsBands + 1> band_edges{};  // bin boundaries
  StftConfig cfg;

  int64_t max_band_bins() const;

  /// Bands zero-padded to a common width and stacked on a channel axis:
  /// complex [..., 3, T, F_max].
  torch::Tensor to_channels() const;
  static SubbandStack from_channels(const torch::Tensor& stacked,
                                    const std::array<int64_t, kCwsBands + 1>& edges,
                                    const StftConfig& cfg);
};

std::array<int64_t, kCwsBands + 1> cws_band_edges(int64_t num_bins);

SubbandStack cws_split(const ComplexSpectrogram& spec);
/// Tensor form; `spec` is complex [..., T, F] with F = 769 at the default config.
SubbandStack cws_split(const torch::Tensor& spec, const StftConfig& cfg);
ComplexSpectrogram cws_merge(const SubbandStack& stack);
torch::Tensor cws_merge_tensor(const SubbandStack& stack);

}  // namespace tsse
