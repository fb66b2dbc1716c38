// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/cws.hpp"

namespace F = torch::nn::functional;

namespace tsse {

std::array<int64_t, kCwsBands + 1> cws_band_edges(int64_t num_bins) {
  TSSE_CHECK(num_bins >= 2 * kCwsBands, ErrorKind::kShapeMismatch, "too few bins for a subband split");
  const int64_t below_nyquist = num_bins - 1;
  const int64_t width = below_nyquist / kCwsBands;
  return {0, width, 2 * width, num_bins};
}

int64_t SubbandStack::max_band_bins() const {
  int64_t m = 0;
  for (int b = 0; b < kCwsBands; ++b) m = std::max(m, band_edges[b + 1] - band_edges[b]);
  return m;
}

torch::Tensor SubbandStack::to_channels() const {
  const int64_t width = max_band_bins();
  std::vector<torch::Tensor> padded;
  for (const auto& band : bands) {
    const int64_t missing = width - band.size(-1);
    if (missing == 0) {
      padded.push_back(band);
    } else {
      auto ri = torch::view_as_real(band);  // [..., T, F_b, 2]
      ri = F::pad(ri, F::PadFuncOptions({0, 0, 0, missing}));
      padded.push_back(torch::view_as_complex(ri.contiguous()));
    }
  }
  return torch::stack(padded, -3);
}

SubbandStack SubbandStack::from_channels(const torch::Tensor& stacked,
                                         const std::array<int64_t, kCwsBands + 1>& edges,
                                         const StftConfig& cfg) {
  TSSE_CHECK(stacked.dim() >= 3 && stacked.size(-3) == kCwsBands, ErrorKind::kShapeMismatch,
             "expected " + std::to_string(kCwsBands) + " stacked subbands");
  SubbandStack s;
  s.band_edges = edges;
  s.cfg = cfg;
  for (int b = 0; b < kCwsBands; ++b) {
    const int64_t width = edges[b + 1] - edges[b];
    TSSE_CHECK(stacked.size(-1) >= width, ErrorKind::kShapeMismatch, "subband channel too narrow");
    s.bands[b] = stacked.select(-3, b).narrow(-1, 0, width);
  }
  return s;
}

SubbandStack cws_split(const torch::Tensor& spec, const StftConfig& cfg) {
  TSSE_CHECK(spec.is_complex() && spec.dim() >= 2, ErrorKind::kShapeMismatch,
             "cws_split expects a complex [..., T, F] tensor");
  TSSE_CHECK(spec.size(-1) == cfg.num_bins(), ErrorKind::kShapeMismatch,
             "spectrogram bins do not match the STFT configuration");
  SubbandStack s;
  s.cfg = cfg;
  s.band_edges = cws_band_edges(spec.size(-1));
  for (int b = 0; b < kCwsBands; ++b) {
    s.bands[b] = spec.narrow(-1, s.band_edges[b], s.band_edges[b + 1] - s.band_edges[b]);
  }
  return s;
}

SubbandStack cws_split(const ComplexSpectrogram& spec) {
  TSSE_CHECK(spec.fs == kCwsRate, ErrorKind::kUnsupportedRate,
             "channel-wise subband split requires 48 kHz input, got " + std::to_string(spec.fs));
  return cws_split(spec.data, spec.cfg);
}

torch::Tensor cws_merge_tensor(const SubbandStack& stack) {
  for (int b = 0; b < kCwsBands; ++b) {
    TSSE_CHECK(stack.bands[b].defined(), ErrorKind::kShapeMismatch, "missing subband");
    TSSE_CHECK(stack.bands[b].size(-1) == stack.band_edges[b + 1] - stack.band_edges[b],
               ErrorKind::kShapeMismatch, "subband width disagrees with band edges");
  }
  return torch::cat({stack.bands[0], stack.bands[1], stack.bands[2]}, -1);
}

ComplexSpectrogram cws_merge(const SubbandStack& stack) {
  return {cws_merge_tensor(stack), stack.cfg, kCwsRate};
}

}  // namespace tsse
