// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/resample.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <numbers>

namespace tsse {

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

double kaiser_beta(double a) {
  if (a > 50.0) return 0.1102 * (a - 8.7);
  if (a >= 21.0) return 0.5842 * std::pow(a - 21.0, 0.4) + 0.07886 * (a - 21.0);
  return 0.0;
}

namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double pos, double beta) {
  // pos in [-1, 1]
  const double r = std::max(0.0, 1.0 - pos * pos);
  return bessel_i0(beta * std::sqrt(r)) / bessel_i0(beta);
}

}  // namespace

std::vector<double> design_lowpass(double cutoff_hz, double fs, int num_taps, double attenuation_db) {
  TSSE_CHECK(num_taps >= 3 && num_taps % 2 == 1, ErrorKind::kInvalidArgument,
             "lowpass needs an odd tap count >= 3");
  TSSE_CHECK(cutoff_hz > 0 && cutoff_hz < fs / 2, ErrorKind::kInvalidArgument,
             "lowpass cutoff must lie in (0, fs/2)");
  const double beta = kaiser_beta(attenuation_db);
  const int half = num_taps / 2;
  const double fc = cutoff_hz / fs;
  std::vector<double> h(num_taps);
  for (int i = 0; i < num_taps; ++i) {
    const double m = i - half;
    h[i] = 2.0 * fc * sinc(2.0 * fc * m) * kaiser(m / half, beta);
  }
  const double dc = std::accumulate(h.begin(), h.end(), 0.0);
  for (double& v : h) v /= dc;
  return h;
}

Resampler::Resampler(int from_fs, int to_fs, double passband, double attenuation_db)
    : from_(from_fs), to_(to_fs) {
  require_supported_rate(from_fs);
  require_supported_rate(to_fs);
  const int g = std::gcd(from_fs, to_fs);
  up_ = to_fs / g;
  down_ = from_fs / g;

  const double fs_up = static_cast<double>(from_fs) * up_;
  const double nyq_low = std::min(from_fs, to_fs) / 2.0;
  const double transition = (1.0 - passband) * nyq_low;
  const double cutoff = nyq_low - transition / 2.0;
  const double taps = (attenuation_db - 7.95) / (14.36 * transition / fs_up) + 1.0;
  half_ = static_cast<int64_t>(std::ceil(taps / 2.0));
  const double beta = kaiser_beta(attenuation_db);
  const double fc = cutoff / fs_up;
  taps_.resize(static_cast<std::size_t>(2 * half_ + 1));
  for (int64_t m = -half_; m <= half_; ++m) {
    taps_[static_cast<std::size_t>(m + half_)] =
        up_ * 2.0 * fc * sinc(2.0 * fc * static_cast<double>(m)) *
        kaiser(static_cast<double>(m) / static_cast<double>(half_ + 1), beta);
  }
}

int64_t Resampler::output_length(int64_t n) const {
  return (2 * n * to_ + from_) / (2 * static_cast<int64_t>(from_));
}

std::vector<double> Resampler::process(std::span<const double> x) const {
  const int64_t n_in = static_cast<int64_t>(x.size());
  const int64_t n_out = output_length(n_in);
  std::vector<double> y(static_cast<std::size_t>(n_out), 0.0);
  for (int64_t n = 0; n < n_out; ++n) {
    const int64_t t = n * down_;  // position on the upsampled grid
    // input k contributes when |t - k*up| <= half
    int64_t k_lo = t - half_ <= 0 ? 0 : (t - half_ + up_ - 1) / up_;
    int64_t k_hi = std::min<int64_t>(n_in - 1, (t + half_) / up_);
    double acc = 0.0;
    for (int64_t k = k_lo; k <= k_hi; ++k) {
      acc += x[static_cast<std::size_t>(k)] * taps_[static_cast<std::size_t>(t - k * up_ + half_)];
    }
    y[static_cast<std::size_t>(n)] = acc;
  }
  return y;
}

namespace {

// Filter tables are deterministic functions of the rate pair; build once.
const Resampler& cached_resampler(int from_fs, int to_fs) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<Resampler>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{from_fs, to_fs}];
  if (!slot) slot = std::make_unique<Resampler>(from_fs, to_fs);
  return *slot;
}

}  // namespace

std::vector<double> resample(std::span<const double> x, int from_fs, int to_fs) {
  require_supported_rate(from_fs);
  require_supported_rate(to_fs);
  if (from_fs == to_fs) return std::vector<double>(x.begin(), x.end());
  return cached_resampler(from_fs, to_fs).process(x);
}

Waveform resample(const Waveform& wav, int target_fs) {
  return Waveform(resample(wav.samples, wav.fs, target_fs), target_fs);
}

}  // namespace tsse
