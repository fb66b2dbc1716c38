// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "tsse/cws.hpp"
#include "tsse/error.hpp"
#include "tsse/log.hpp"
#include "tsse/resample.hpp"
#include "tsse/stft.hpp"

namespace tsse {

std::string_view to_string(ResRoute route) { return route == ResRoute::kBase ? "base" : "finetuned"; }

namespace {

torch::Dtype dtype_of(StageNetImpl& net) {
  auto params = net.parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

}  // namespace

Waveform run_stage_net(StageNet net, const Waveform& wav, int fs) {
  TSSE_CHECK(net, ErrorKind::kConfiguration, "stage network is not loaded");
  TSSE_CHECK(!wav.empty(), ErrorKind::kDegenerateInput, "empty waveform");
  torch::NoGradGuard no_grad;
  auto x = to_tensor(wav, dtype_of(*net)).unsqueeze(0);
  auto y = net->forward(x, fs).squeeze(0);
  return from_tensor(y, fs);
}

namespace {

/// Resampled copy with the length forced to `length` (rounding in the
/// rational length map can leave it one sample off).
Waveform resample_to_length(const Waveform& wav, int fs, std::size_t length) {
  auto out = resample(wav, fs);
  out.samples.resize(length, 0.0);
  return out;
}

}  // namespace

Waveform run_fill(const Waveform& wav, const ModelBundle& bundle) {
  wav.validate();
  return run_stage_net(bundle.fill, wav, wav.fs);
}

Waveform run_sep(const Waveform& wav, const ModelBundle& bundle) {
  wav.validate();
  return run_stage_net(bundle.sep, wav, wav.fs);
}

Waveform run_res(const Waveform& wav, const ModelBundle& bundle, ResRoute route) {
  wav.validate();
  const StageNet& net = route == ResRoute::kBase ? bundle.res : bundle.res_finetuned;
  TSSE_CHECK(net, ErrorKind::kConfiguration,
             std::string("restoration net for route '") + std::string(to_string(route)) + "' is not loaded");
  if (wav.fs == kCwsRate) return run_stage_net(net, wav, kCwsRate);
  const std::size_t up_len = static_cast<std::size_t>(Resampler(wav.fs, kCwsRate).output_length(wav.size()));
  auto up = resample_to_length(wav, kCwsRate, up_len);
  auto y = run_stage_net(net, up, kCwsRate);
  return resample_to_length(y, wav.fs, wav.size());
}

// ---------------------------------------------------------------------------

void BwaiConfig::validate() const {
  TSSE_CHECK(threshold_db > 0.0 && nyquist_fraction > 0.0 && nyquist_fraction <= 1.0 && band_hz > 0.0 &&
                 min_duration_s > 0.0,
             ErrorKind::kConfiguration, "invalid BWAI detector settings");
}

nlohmann::json to_json(const BwaiConfig& cfg) {
  return {{"threshold_db", cfg.threshold_db},
          {"nyquist_fraction", cfg.nyquist_fraction},
          {"band_hz", cfg.band_hz},
          {"min_duration_s", cfg.min_duration_s}};
}

BwaiConfig bwai_config_from_json(const nlohmann::json& j) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "bwai settings must be an object");
  BwaiConfig cfg;
  for (const auto& [key, v] : j.items()) {
    TSSE_CHECK(v.is_number(), ErrorKind::kConfiguration, "bwai." + key + " must be a number");
    if (key == "threshold_db") cfg.threshold_db = v.get<double>();
    else if (key == "nyquist_fraction") cfg.nyquist_fraction = v.get<double>();
    else if (key == "band_hz") cfg.band_hz = v.get<double>();
    else if (key == "min_duration_s") cfg.min_duration_s = v.get<double>();
    else throw Error(ErrorKind::kConfiguration, "unknown bwai key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const BandwidthEstimate& est) {
  return {{"effective_cutoff_hz", est.effective_cutoff_hz},
          {"is_band_limited", est.is_band_limited},
          {"threshold_db", est.threshold_db}};
}

BandwidthEstimate detect_bandwidth_limited(const Waveform& wav, const BwaiConfig& cfg) {
  cfg.validate();
  wav.validate();
  TSSE_CHECK(wav.duration_s() >= cfg.min_duration_s, ErrorKind::kInvalidArgument,
             "bandwidth detection needs at least " + std::to_string(cfg.min_duration_s) + " s of audio");
  const double nyquist = wav.fs / 2.0;
  BandwidthEstimate est{nyquist, false, cfg.threshold_db};

  int n_fft = 1;
  while (n_fft < wav.fs * 0.04) n_fft *= 2;
  const auto spec = stft(to_tensor(wav), StftConfig::custom(n_fft, n_fft / 2));
  const auto psd = (torch::real(spec).pow(2) + torch::imag(spec).pow(2)).mean(0);  // [F]
  const auto* p = psd.data_ptr<double>();
  const int64_t bins = psd.size(0);
  const double bin_hz = static_cast<double>(wav.fs) / n_fft;

  auto band_mean = [&](double lo, double hi) {
    double acc = 0.0;
    int count = 0;
    for (int64_t k = static_cast<int64_t>(std::ceil(lo / bin_hz)); k < bins && k * bin_hz < hi; ++k, ++count)
      acc += p[k];
    return count ? acc / count : 0.0;
  };

  const double ref = band_mean(1000.0, 3000.0);
  if (ref <= 0.0) return est;
  const double floor = ref * std::pow(10.0, -cfg.threshold_db / 10.0);
  const int bands = static_cast<int>(std::ceil(nyquist / cfg.band_hz));
  double cutoff = 0.0;
  for (int b = 0; b < bands; ++b) {
    const double lo = b * cfg.band_hz;
    const double hi = b + 1 == bands ? nyquist + bin_hz : (b + 1) * cfg.band_hz;  // last band keeps Nyquist
    if (band_mean(lo, hi) >= floor) cutoff = std::min(nyquist, (b + 1) * cfg.band_hz);
  }
  est.effective_cutoff_hz = std::max(cutoff, cfg.band_hz);
  est.is_band_limited = est.effective_cutoff_hz < cfg.nyquist_fraction * nyquist;
  return est;
}

// ---------------------------------------------------------------------------

EnhanceResult enhance(const EnhanceRequest& req, const ModelBundle& bundle) {
  TSSE_CHECK(!req.stage_mask.empty(), ErrorKind::kConfiguration, "stage mask is empty");
  req.wav.validate();
  const bool with_res = req.stage_mask.count(Stage::kRes) > 0;
  TSSE_CHECK(!(with_res && req.bwai_enabled) || bundle.res_finetuned, ErrorKind::kConfiguration,
             "BWAI needs the fine-tuned restoration net in the bundle");

  EnhanceResult result;
  if (with_res && req.bwai_enabled) {
    if (req.wav.duration_s() >= req.bwai.min_duration_s) {
      result.bandwidth = detect_bandwidth_limited(req.wav, req.bwai);
      if (result.bandwidth->is_band_limited) result.route = ResRoute::kFinetuned;
    } else {
      log::warn() << "input shorter than " << req.bwai.min_duration_s << " s; BWAI falls back to the base route";
    }
  }

  const double pk = peak(req.wav.samples);
  const double gain = pk > 0.0 ? 0.9 / pk : 1.0;
  Waveform x = req.wav;
  for (auto& v : x.samples) v *= gain;

  if (req.stage_mask.count(Stage::kFill)) x = run_fill(x, bundle);
  if (req.stage_mask.count(Stage::kSep)) x = run_sep(x, bundle);
  if (with_res) x = run_res(x, bundle, result.route);

  for (auto& v : x.samples) v /= gain;
  result.wav = std::move(x);
  return result;
}

std::vector<EnhanceOutcome> enhance_batch(const std::vector<EnhanceRequest>& reqs, const ModelBundle& bundle,
                                          int workers) {
  std::vector<EnhanceOutcome> out(reqs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < reqs.size(); i = next++) {
      try {
        out[i].result = enhance(reqs[i], bundle);
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const int n = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(reqs.size(), 1)));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace tsse
