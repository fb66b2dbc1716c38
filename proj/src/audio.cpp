// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/audio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tsse {

bool is_supported_rate(int fs) {
  return std::find(kSupportedRates.begin(), kSupportedRates.end(), fs) != kSupportedRates.end();
}

void require_supported_rate(int fs) {
  TSSE_CHECK(is_supported_rate(fs), ErrorKind::kUnsupportedRate,
             "sampling frequency " + std::to_string(fs) + " Hz is not supported");
}

Waveform::Waveform(std::vector<double> s, int rate) : samples(std::move(s)), fs(rate) {}

void Waveform::validate() const {
  require_supported_rate(fs);
  for (double v : samples) {
    TSSE_CHECK(std::isfinite(v), ErrorKind::kInvalidArgument, "waveform contains non-finite samples");
  }
}

double energy(std::span<const double> x) {
  return std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
}

double power(std::span<const double> x) {
  return x.empty() ? 0.0 : energy(x) / static_cast<double>(x.size());
}

double peak(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

torch::Tensor to_tensor(const Waveform& w, torch::Dtype dtype) {
  auto t = torch::empty({static_cast<int64_t>(w.samples.size())}, torch::kFloat64);
  std::copy(w.samples.begin(), w.samples.end(), t.data_ptr<double>());
  return dtype == torch::kFloat64 ? t : t.to(dtype);
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous().reshape({-1});
  const double* p = c.data_ptr<double>();
  return std::vector<double>(p, p + c.numel());
}

Waveform from_tensor(const torch::Tensor& t, int fs) { return Waveform(to_vector(t), fs); }

}  // namespace tsse
