// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/stft.hpp"

#include <cmath>
#include <numbers>

namespace tsse {

namespace F = torch::nn::functional;

StftConfig StftConfig::for_rate(int fs, double win_ms, double hop_ms) {
  require_supported_rate(fs);
  StftConfig c;
  c.win_length = static_cast<int>(std::lround(fs * win_ms / 1000.0));
  c.hop_length = static_cast<int>(std::lround(fs * hop_ms / 1000.0));
  c.n_fft = c.win_length;
  return c;
}

StftConfig StftConfig::custom(int win_length, int hop_length) {
  StftConfig c{win_length, hop_length, win_length};
  c.validate();
  return c;
}

int64_t StftConfig::num_frames(int64_t length) const {
  return (length + hop_length - 1) / hop_length;
}

void StftConfig::validate() const {
  TSSE_CHECK(win_length >= 2 && hop_length >= 1 && n_fft >= win_length, ErrorKind::kInvalidArgument,
             "invalid STFT configuration");
  TSSE_CHECK(hop_length <= (win_length + 1) / 2, ErrorKind::kInvalidArgument,
             "STFT hop must not exceed half the window");
}

void ComplexSpectrogram::validate() const {
  TSSE_CHECK(data.defined() && data.is_complex() && data.dim() >= 2, ErrorKind::kShapeMismatch,
             "spectrogram must be a complex [..., T, F] tensor");
  TSSE_CHECK(bins() == cfg.num_bins(), ErrorKind::kShapeMismatch,
             "spectrogram has " + std::to_string(bins()) + " bins, configuration expects " +
                 std::to_string(cfg.num_bins()));
  TSSE_CHECK(torch::isfinite(torch::view_as_real(data)).all().item<bool>(),
             ErrorKind::kInvalidArgument, "spectrogram contains non-finite values");
}

torch::Tensor hann_window(int length, torch::Dtype dtype) {
  return torch::hann_window(length, /*periodic=*/true, torch::TensorOptions().dtype(dtype));
}

namespace {

struct Padding {
  int64_t left;
  int64_t right;
  int64_t frames;
};

Padding padding_for(int64_t length, const StftConfig& cfg) {
  const int64_t frames = cfg.num_frames(length);
  const int64_t left = cfg.win_length / 2;
  const int64_t total = (frames - 1) * cfg.hop_length + cfg.win_length;
  return {left, total - length - left, frames};
}

}  // namespace

torch::Tensor stft(const torch::Tensor& x, const StftConfig& cfg) {
  cfg.validate();
  TSSE_CHECK(x.defined() && x.dim() >= 1 && x.size(-1) > 0, ErrorKind::kInvalidArgument,
             "stft input must be non-empty");
  const int64_t n = x.size(-1);
  const auto batch_shape = x.sizes().slice(0, x.dim() - 1).vec();
  const auto pad = padding_for(n, cfg);

  auto flat = x.reshape({-1, 1, n});
  const bool reflect = pad.left < n && pad.right < n;
  auto opts = F::PadFuncOptions({pad.left, pad.right});
  if (reflect) opts.mode(torch::kReflect);
  auto padded = F::pad(flat, opts);
  auto frames = padded.squeeze(1).unfold(-1, cfg.win_length, cfg.hop_length);  // [B, T, win]
  auto window = hann_window(cfg.win_length, x.scalar_type()).to(x.device());
  auto spec = torch::fft::rfft(frames * window, cfg.n_fft, -1);

  auto out_shape = batch_shape;
  out_shape.push_back(pad.frames);
  out_shape.push_back(cfg.num_bins());
  return spec.reshape(out_shape);
}

torch::Tensor istft(const torch::Tensor& spec, const StftConfig& cfg, int64_t length) {
  cfg.validate();
  TSSE_CHECK(spec.defined() && spec.is_complex() && spec.dim() >= 2, ErrorKind::kShapeMismatch,
             "istft expects a complex [..., T, F] tensor");
  TSSE_CHECK(spec.size(-1) == cfg.num_bins(), ErrorKind::kShapeMismatch,
             "istft: " + std::to_string(spec.size(-1)) + " bins, configuration expects " +
                 std::to_string(cfg.num_bins()));
  TSSE_CHECK(length >= 0, ErrorKind::kInvalidArgument, "negative output length");
  const int64_t frames = spec.size(-2);
  const auto batch_shape = spec.sizes().slice(0, spec.dim() - 2).vec();
  const auto real_type = torch::real(spec).scalar_type();

  auto flat = spec.reshape({-1, frames, cfg.num_bins()});
  auto window = hann_window(cfg.win_length, real_type).to(spec.device());
  auto time = torch::fft::irfft(flat, cfg.n_fft, -1).narrow(-1, 0, cfg.win_length) * window;

  const int64_t total = (frames - 1) * cfg.hop_length + cfg.win_length;
  auto index = (torch::arange(frames, torch::kLong).unsqueeze(1) * cfg.hop_length +
                torch::arange(cfg.win_length, torch::kLong).unsqueeze(0))
                   .reshape({-1})
                   .to(spec.device());
  const int64_t batch = flat.size(0);
  auto out = torch::zeros({batch, total}, time.options())
                 .index_add(1, index, time.reshape({batch, frames * cfg.win_length}));
  auto envelope = torch::zeros({total}, time.options())
                      .index_add(0, index, (window * window).repeat({frames}));
  auto valid = envelope > 1e-10;
  out = torch::where(valid, out / torch::where(valid, envelope, torch::ones_like(envelope)),
                     torch::zeros_like(out));

  const int64_t left = cfg.win_length / 2;
  const int64_t avail = std::max<int64_t>(0, std::min(length, total - left));
  auto result = out.narrow(1, left, avail);
  if (avail < length) result = F::pad(result, F::PadFuncOptions({0, length - avail}));

  auto out_shape = batch_shape;
  out_shape.push_back(length);
  return result.reshape(out_shape);
}

ComplexSpectrogram stft(const Waveform& wav) { return stft(wav, StftConfig::for_rate(wav.fs)); }

ComplexSpectrogram stft(const Waveform& wav, const StftConfig& cfg) {
  require_supported_rate(wav.fs);
  TSSE_CHECK(!wav.empty(), ErrorKind::kInvalidArgument, "stft of an empty waveform");
  return {stft(to_tensor(wav), cfg), cfg, wav.fs};
}

Waveform istft(const ComplexSpectrogram& spec, int64_t length) {
  return from_tensor(istft(spec.data, spec.cfg, length), spec.fs);
}

torch::Tensor complex_to_channels(const torch::Tensor& spec) {
  return torch::stack({torch::real(spec), torch::imag(spec)}, -3);
}

torch::Tensor channels_to_complex(const torch::Tensor& ri) {
  TSSE_CHECK(ri.dim() >= 3 && ri.size(-3) == 2, ErrorKind::kShapeMismatch,
             "expected a [..., 2, T, F] real/imag tensor");
  return torch::complex(ri.select(-3, 0), ri.select(-3, 1));
}

}  // namespace tsse
