// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/degrade.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

#include <torch/torch.h>

#include "tsse/resample.hpp"
#include "tsse/wav_io.hpp"

namespace tsse {

namespace {

constexpr std::pair<DistortionKind, std::string_view> kKindNames[] = {
    {DistortionKind::kReverb, "reverb"},
    {DistortionKind::kNoise, "noise"},
    {DistortionKind::kWind, "wind"},
    {DistortionKind::kClipping, "clipping"},
    {DistortionKind::kBandwidthLimit, "bandwidth_limit"},
    {DistortionKind::kCodec, "codec"},
    {DistortionKind::kPacketLoss, "packet_loss"},
};

}  // namespace

std::string_view to_string(DistortionKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

DistortionKind distortion_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw Error(ErrorKind::kInvalidArgument, "unknown distortion kind '" + std::string(name) + "'");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kFill: return "fill";
    case Stage::kSep: return "sep";
    case Stage::kRes: return "res";
  }
  return "unknown";
}

Stage stage_from_string(std::string_view name) {
  if (name == "fill") return Stage::kFill;
  if (name == "sep") return Stage::kSep;
  if (name == "res") return Stage::kRes;
  throw Error(ErrorKind::kInvalidArgument, "unknown stage '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Single distortions

Waveform apply_noise(const Waveform& clean, const Waveform& noise, double snr_db) {
  TSSE_CHECK(clean.fs == noise.fs, ErrorKind::kInvalidArgument, "noise and speech rates differ");
  TSSE_CHECK(std::isfinite(snr_db), ErrorKind::kInvalidArgument, "SNR must be finite");
  TSSE_CHECK(!noise.empty(), ErrorKind::kDegenerateInput, "empty noise signal");
  const double p_clean = power(clean.samples);
  TSSE_CHECK(p_clean > 0.0, ErrorKind::kDegenerateInput, "clean signal has zero power");

  std::vector<double> tiled(clean.size());
  for (std::size_t i = 0; i < tiled.size(); ++i) tiled[i] = noise.samples[i % noise.size()];
  const double p_noise = power(tiled);
  TSSE_CHECK(p_noise > 0.0, ErrorKind::kDegenerateInput, "noise signal has zero power");

  const double scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  Waveform out = clean;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += scale * tiled[i];
  return out;
}

Waveform apply_reverb(const Waveform& clean, const Waveform& rir) {
  TSSE_CHECK(clean.fs == rir.fs, ErrorKind::kInvalidArgument, "RIR and speech rates differ");
  TSSE_CHECK(!rir.empty(), ErrorKind::kInvalidArgument, "empty RIR");
  TSSE_CHECK(energy(rir.samples) > 0.0, ErrorKind::kDegenerateInput, "RIR is all zeros");
  if (clean.empty()) return clean;

  const int64_t n = static_cast<int64_t>(clean.size());
  const int64_t m = static_cast<int64_t>(rir.size());
  const int64_t full = n + m - 1;
  auto x = to_tensor(clean);
  auto h = to_tensor(rir);
  auto y = torch::fft::irfft(torch::fft::rfft(x, full) * torch::fft::rfft(h, full), full);
  Waveform out(to_vector(y.narrow(0, 0, n)), clean.fs);

  const double in_peak = peak(clean.samples);
  const double out_peak = peak(out.samples);
  if (out_peak > 0.0) {
    const double g = in_peak / out_peak;
    for (double& v : out.samples) v *= g;
  }
  return out;
}

Waveform apply_clip(const Waveform& wav, double clip_ratio) {
  TSSE_CHECK(clip_ratio > 0.0 && clip_ratio <= 1.0, ErrorKind::kInvalidArgument,
             "clip ratio must lie in (0, 1]");
  const double pk = peak(wav.samples);
  TSSE_CHECK(pk > 0.0, ErrorKind::kDegenerateInput, "cannot clip a silent signal");
  const double theta = clip_ratio * pk;
  Waveform out = wav;
  for (double& v : out.samples) v = std::clamp(v, -theta, theta);
  return out;
}

Waveform apply_bandwidth_limit(const Waveform& wav, int cutoff_fs) {
  TSSE_CHECK(cutoff_fs < wav.fs, ErrorKind::kInvalidArgument,
             "band-limit rate " + std::to_string(cutoff_fs) + " must be below the signal rate " +
                 std::to_string(wav.fs));
  TSSE_CHECK(is_supported_rate(cutoff_fs), ErrorKind::kInvalidArgument,
             "band-limit rate " + std::to_string(cutoff_fs) + " is not a supported rate");
  auto down = resample(wav.samples, wav.fs, cutoff_fs);
  auto back = resample(down, cutoff_fs, wav.fs);
  back.resize(wav.size(), 0.0);
  return Waveform(std::move(back), wav.fs);
}

CodecPreset CodecPreset::named(std::string_view name) {
  CodecPreset p;
  p.name = std::string(name);
  if (name == "pcm16") {
    p.type = Type::kUniform;
    p.bits = 16;
  } else if (name == "mulaw8") {
    p.bits = 8;
  } else if (name == "mulaw6") {
    p.bits = 6;
  } else if (name == "mulaw8_nb") {
    p.bits = 8;
    p.bandwidth_fs = 8000;
  } else if (name == "mulaw6_nb") {
    p.bits = 6;
    p.bandwidth_fs = 8000;
  } else {
    throw Error(ErrorKind::kInvalidArgument, "unknown codec preset '" + std::string(name) + "'");
  }
  return p;
}

CodecPreset CodecPreset::external(std::string command) {
  TSSE_CHECK(!command.empty(), ErrorKind::kInvalidArgument, "empty codec command");
  CodecPreset p;
  p.name = "external";
  p.type = Type::kExternal;
  p.command = std::move(command);
  return p;
}

namespace {

// Runs `command` through the shell with a float32 WAV on stdin and expects a
// WAV on stdout. The result is resampled and trimmed/padded to the input.
Waveform run_external_codec(const Waveform& wav, const std::string& command) {
  namespace fs = std::filesystem;
  static std::atomic<uint64_t> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("tsse_codec_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  const fs::path in = dir / "in.wav", out = dir / "out.wav", err = dir / "err.txt";
  write_wav(in.string(), wav, WavEncoding::kFloat32);
  const std::string full = "(" + command + ") < '" + in.string() + "' > '" + out.string() + "' 2> '" +
                           err.string() + "'";
  const int status = std::system(full.c_str());
  if (status != 0) {
    std::ifstream ef(err);
    std::stringstream ss;
    ss << ef.rdbuf();
    throw Error(ErrorKind::kCodecAdapter,
                "codec command failed (status " + std::to_string(status) + "): " + ss.str());
  }
  Waveform decoded;
  try {
    decoded = read_wav(out.string());
  } catch (const Error& e) {
    throw Error(ErrorKind::kCodecAdapter, std::string("codec output unreadable: ") + e.what());
  }
  TSSE_CHECK(!decoded.empty(), ErrorKind::kCodecAdapter, "codec produced no audio");
  if (decoded.fs != wav.fs) decoded = resample(decoded, wav.fs);
  decoded.samples.resize(wav.size(), 0.0);
  return decoded;
}

double mulaw_expand(double y, double mu) {
  return std::copysign((std::pow(1.0 + mu, std::abs(y)) - 1.0) / mu, y);
}

double mulaw_quantize(double x, int bits) {
  const double levels = std::ldexp(1.0, bits);
  const double mu = levels - 1.0;
  x = std::clamp(x, -1.0, 1.0);
  const double y = std::copysign(std::log1p(mu * std::abs(x)) / std::log1p(mu), x);
  const double idx = std::clamp(std::floor((y + 1.0) / 2.0 * levels), 0.0, levels - 1.0);
  return mulaw_expand((idx + 0.5) * 2.0 / levels - 1.0, mu);
}

}  // namespace

std::vector<double> mulaw_grid(int bits) {
  TSSE_CHECK(bits >= 2 && bits <= 16, ErrorKind::kInvalidArgument, "mu-law bits out of range");
  const double levels = std::ldexp(1.0, bits);
  const double mu = levels - 1.0;
  std::vector<double> grid(static_cast<std::size_t>(levels));
  for (std::size_t i = 0; i < grid.size(); ++i)
    grid[i] = mulaw_expand((static_cast<double>(i) + 0.5) * 2.0 / levels - 1.0, mu);
  return grid;
}

Waveform apply_codec(const Waveform& wav, const CodecPreset& preset) {
  if (preset.type == CodecPreset::Type::kExternal) return run_external_codec(wav, preset.command);
  TSSE_CHECK(preset.bits >= 2 && preset.bits <= 16, ErrorKind::kInvalidArgument,
             "codec bit depth out of range");
  Waveform out = preset.bandwidth_fs > 0 && preset.bandwidth_fs < wav.fs
                     ? apply_bandwidth_limit(wav, preset.bandwidth_fs)
                     : wav;
  if (preset.type == CodecPreset::Type::kUniform) {
    const double scale = std::ldexp(1.0, preset.bits - 1);
    for (double& v : out.samples) v = std::clamp(std::round(v * scale), -scale, scale - 1.0) / scale;
  } else {
    for (double& v : out.samples) v = mulaw_quantize(v, preset.bits);
  }
  return out;
}

int64_t PacketLossMask::lost_samples() const {
  int64_t n = 0;
  for (const auto& [s, e] : lost_segments) n += e - s;
  return n;
}

bool PacketLossMask::contains(int64_t sample) const {
  for (const auto& [s, e] : lost_segments)
    if (sample >= s && sample < e) return true;
  return false;
}

Waveform apply_mask(const Waveform& wav, const PacketLossMask& mask) {
  Waveform out = wav;
  for (const auto& [s, e] : mask.lost_segments) {
    for (int64_t i = s; i < e; ++i) out.samples[static_cast<std::size_t>(i)] = 0.0;
  }
  return out;
}

std::pair<Waveform, PacketLossMask> apply_packet_loss(const Waveform& wav, Rng& rng,
                                                      const PacketLossParams& params) {
  TSSE_CHECK(params.loss_rate > 0.0 && params.loss_rate <= 0.5, ErrorKind::kInvalidArgument,
             "packet loss rate must lie in (0, 0.5]");
  TSSE_CHECK(params.segment_ms.lo > 0.0 && params.segment_ms.lo <= params.segment_ms.hi,
             ErrorKind::kInvalidArgument, "invalid packet loss segment duration range");
  const int64_t n = static_cast<int64_t>(wav.size());
  const int64_t budget = std::llround(params.loss_rate * static_cast<double>(n));

  PacketLossMask mask;
  int64_t lost = 0;
  for (int attempt = 0; attempt < 1000 && lost < budget; ++attempt) {
    const double ms = params.segment_ms.sample(rng);
    int64_t len = std::max<int64_t>(1, std::llround(ms * wav.fs / 1000.0));
    len = std::min({len, budget - lost, n});
    const int64_t start = rng.integer(0, n - len);
    const int64_t end = start + len;
    // keep segments disjoint and non-adjacent
    const bool clash = std::any_of(mask.lost_segments.begin(), mask.lost_segments.end(),
                                   [&](const auto& seg) { return start <= seg.second && seg.first <= end; });
    if (clash) continue;
    mask.lost_segments.emplace_back(start, end);
    lost += len;
  }
  std::sort(mask.lost_segments.begin(), mask.lost_segments.end());
  return {apply_mask(wav, mask), std::move(mask)};
}

namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;
  double z1 = 0.0, z2 = 0.0;

  static Biquad lowpass(double fc, double fs, double q) {
    const double w0 = 2.0 * std::numbers::pi * fc / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double c = std::cos(w0);
    const double a0 = 1.0 + alpha;
    return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0, -2.0 * c / a0,
            (1.0 - alpha) / a0};
  }

  double step(double x) {
    const double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
};

void normalize_rms(std::vector<double>& x, double target) {
  const double p = power(x);
  if (p <= 0.0) return;
  const double g = target / std::sqrt(p);
  for (double& v : x) v *= g;
}

}  // namespace

Waveform synth_wind(double duration_s, int fs, Rng& rng, double intensity) {
  TSSE_CHECK(duration_s > 0.0, ErrorKind::kInvalidArgument, "wind duration must be positive");
  TSSE_CHECK(intensity >= 0.0, ErrorKind::kInvalidArgument, "wind intensity must be non-negative");
  require_supported_rate(fs);
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  std::vector<double> out(n, 0.0);
  if (intensity == 0.0) return Waveform(std::move(out), fs);

  auto lp1 = Biquad::lowpass(150.0, fs, 0.7071);
  auto lp2 = Biquad::lowpass(150.0, fs, 0.7071);
  // Gust envelope: white noise smoothed to ~1 Hz, exponentiated.
  const double a = std::exp(-2.0 * std::numbers::pi * 1.0 / fs);
  double g1 = 0.0, g2 = 0.0;
  std::vector<double> gust(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lp2.step(lp1.step(rng.normal()));
    g1 = a * g1 + (1.0 - a) * rng.normal();
    g2 = a * g2 + (1.0 - a) * g1;
    gust[i] = g2;
  }
  normalize_rms(gust, 1.0);
  for (std::size_t i = 0; i < n; ++i) out[i] *= std::exp(0.8 * gust[i]);
  normalize_rms(out, 0.1 * intensity);
  return Waveform(std::move(out), fs);
}

Waveform synth_rir(double t60_s, int fs, Rng& rng) {
  TSSE_CHECK(t60_s > 0.0, ErrorKind::kInvalidArgument, "T60 must be positive");
  const auto m = static_cast<std::size_t>(std::max<int64_t>(1, std::llround(t60_s * fs)));
  std::vector<double> h(m);
  const double decay = 3.0 * std::log(10.0) / (t60_s * fs);  // -60 dB at t60
  h[0] = 1.0;
  for (std::size_t i = 1; i < m; ++i) h[i] = 0.3 * rng.normal() * std::exp(-decay * static_cast<double>(i));
  return Waveform(std::move(h), fs);
}

Waveform synth_noise(std::size_t length, int fs, Rng& rng) {
  const double tilt = rng.uniform(-0.5, 0.95);
  std::vector<double> x(length);
  double y = 0.0;
  for (auto& v : x) {
    y = tilt * y + rng.normal();
    v = y;
  }
  normalize_rms(x, 0.1);
  return Waveform(std::move(x), fs);
}

// ---------------------------------------------------------------------------
// Recipes

void DistortionSpec::validate() const {
  auto bad = [&](const std::string& why) {
    throw Error(ErrorKind::kInvalidArgument, std::string(to_string(kind)) + ": " + why);
  };
  auto ordered = [](const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; };
  switch (kind) {
    case DistortionKind::kNoise:
      if (!ordered(snr_db)) bad("snr_db range must be finite and ordered");
      break;
    case DistortionKind::kWind:
      if (!ordered(snr_db)) bad("snr_db range must be finite and ordered");
      if (!ordered(wind_intensity) || wind_intensity.lo < 0.0) bad("invalid wind intensity range");
      break;
    case DistortionKind::kReverb:
      if (!ordered(t60_s) || t60_s.lo <= 0.0) bad("t60_s must be positive and ordered");
      break;
    case DistortionKind::kClipping:
      if (!ordered(clip_ratio) || clip_ratio.lo <= 0.0 || clip_ratio.hi > 1.0)
        bad("clip_ratio must lie in (0, 1]");
      break;
    case DistortionKind::kBandwidthLimit:
      if (cutoff_fs.empty()) bad("cutoff_fs must be non-empty");
      for (int c : cutoff_fs)
        if (!is_supported_rate(c)) bad("cutoff rate " + std::to_string(c) + " is not supported");
      break;
    case DistortionKind::kCodec:
      if (codec_command.empty()) {
        if (codec_presets.empty()) bad("codec_presets must be non-empty");
        for (const auto& p : codec_presets) CodecPreset::named(p);
      }
      break;
    case DistortionKind::kPacketLoss:
      if (!ordered(loss_rate) || loss_rate.lo <= 0.0 || loss_rate.hi > 0.5)
        bad("loss_rate must lie in (0, 0.5]");
      if (!ordered(segment_ms) || segment_ms.lo <= 0.0) bad("segment_ms must be positive and ordered");
      break;
  }
}

DistortionRecipe DistortionRecipe::defaults(Stage stage) {
  auto spec = [](DistortionKind k) {
    DistortionSpec s;
    s.kind = k;
    return s;
  };
  DistortionRecipe r;
  r.stage = stage;
  using K = DistortionKind;
  switch (stage) {
    case Stage::kFill:
      r.mandatory = {spec(K::kPacketLoss)};
      for (K k : {K::kReverb, K::kNoise, K::kWind, K::kClipping, K::kBandwidthLimit, K::kCodec})
        r.optional.push_back({spec(k), 0.5});
      r.target_keeps = {K::kReverb, K::kNoise, K::kWind, K::kClipping, K::kBandwidthLimit, K::kCodec};
      break;
    case Stage::kSep:
      r.mandatory = {spec(K::kNoise)};
      for (K k : {K::kReverb, K::kWind, K::kClipping, K::kBandwidthLimit, K::kCodec})
        r.optional.push_back({spec(k), 0.5});
      r.target_keeps = {K::kBandwidthLimit, K::kCodec};
      break;
    case Stage::kRes:
      r.mandatory = {spec(K::kBandwidthLimit)};
      r.optional = {{spec(K::kCodec), 0.5}, {spec(K::kPacketLoss), 0.5}};
      break;
  }
  return r;
}

void DistortionRecipe::validate() const {
  using K = DistortionKind;
  std::set<K> seen;
  auto add = [&](const DistortionSpec& s) {
    s.validate();
    TSSE_CHECK(seen.insert(s.kind).second, ErrorKind::kInvalidArgument,
               "distortion '" + std::string(to_string(s.kind)) + "' listed twice");
  };
  std::set<K> mandatory_kinds;
  for (const auto& s : mandatory) {
    add(s);
    mandatory_kinds.insert(s.kind);
  }
  for (const auto& o : optional) {
    add(o.spec);
    TSSE_CHECK(o.probability >= 0.0 && o.probability <= 1.0, ErrorKind::kInvalidArgument,
               "probability must lie in [0, 1]");
  }
  const std::string where = "recipe for stage '" + std::string(to_string(stage)) + "': ";
  switch (stage) {
    case Stage::kFill: {
      TSSE_CHECK(mandatory_kinds.count(K::kPacketLoss), ErrorKind::kInvalidArgument,
                 where + "packet_loss must be mandatory");
      const std::set<K> expected = {K::kReverb, K::kNoise, K::kWind, K::kClipping, K::kBandwidthLimit, K::kCodec};
      TSSE_CHECK(target_keeps == expected, ErrorKind::kInvalidArgument,
                 where + "target must keep every kind except packet_loss");
      break;
    }
    case Stage::kSep:
      TSSE_CHECK(!seen.count(K::kPacketLoss), ErrorKind::kInvalidArgument,
                 where + "packet_loss is excluded from separation data");
      TSSE_CHECK(target_keeps == std::set<K>({K::kBandwidthLimit, K::kCodec}), ErrorKind::kInvalidArgument,
                 where + "target must keep exactly bandwidth_limit and codec");
      break;
    case Stage::kRes:
      for (K k : seen) {
        TSSE_CHECK(k == K::kBandwidthLimit || k == K::kCodec || k == K::kPacketLoss,
                   ErrorKind::kInvalidArgument,
                   where + "only bandwidth_limit, codec and packet_loss are allowed");
      }
      TSSE_CHECK(target_keeps.empty(), ErrorKind::kInvalidArgument, where + "target must be clean");
      break;
  }
}

int stage_rate(Stage stage) { return stage == Stage::kRes ? 48000 : 16000; }

Waveform conform_to_stage_rate(const Waveform& clean, Stage stage) {
  require_supported_rate(clean.fs);
  if (stage == Stage::kRes) {
    TSSE_CHECK(clean.fs == 48000, ErrorKind::kUnsupportedRate,
               "restoration data must be 48 kHz, got " + std::to_string(clean.fs));
    return clean;
  }
  TSSE_CHECK(clean.fs >= 16000, ErrorKind::kUnsupportedRate,
             "fill/sep data must be at least 16 kHz, got " + std::to_string(clean.fs));
  return resample(clean, 16000);
}

std::vector<DistortionDraw> sample_draws(const DistortionRecipe& recipe, int fs, Rng& rng) {
  const Rng base(rng.next_u64());
  Rng decide = base.fork("decide");
  std::vector<DistortionDraw> draws;
  for (DistortionKind kind : kApplicationOrder) {
    const DistortionSpec* spec = nullptr;
    bool apply = false;
    for (const auto& s : recipe.mandatory)
      if (s.kind == kind) spec = &s, apply = true;
    for (const auto& o : recipe.optional) {
      if (o.spec.kind == kind) {
        spec = &o.spec;
        apply = decide.bernoulli(o.probability);
      }
    }
    if (!apply) continue;

    Rng r = base.fork(to_string(kind));
    DistortionDraw d;
    d.kind = kind;
    switch (kind) {
      case DistortionKind::kReverb:
        d.t60_s = spec->t60_s.sample(r);
        break;
      case DistortionKind::kNoise:
        d.snr_db = spec->snr_db.sample(r);
        break;
      case DistortionKind::kWind:
        d.snr_db = spec->snr_db.sample(r);
        d.intensity = spec->wind_intensity.sample(r);
        break;
      case DistortionKind::kClipping:
        d.clip_ratio = spec->clip_ratio.sample(r);
        break;
      case DistortionKind::kBandwidthLimit: {
        std::vector<int> usable;
        for (int c : spec->cutoff_fs)
          if (c < fs) usable.push_back(c);
        if (usable.empty()) continue;
        d.cutoff_fs = usable[static_cast<std::size_t>(r.integer(0, static_cast<int64_t>(usable.size()) - 1))];
        break;
      }
      case DistortionKind::kCodec:
        if (!spec->codec_command.empty()) {
          d.codec_command = spec->codec_command;
          d.codec_preset = "external";
        } else {
          d.codec_preset = spec->codec_presets[static_cast<std::size_t>(
              r.integer(0, static_cast<int64_t>(spec->codec_presets.size()) - 1))];
        }
        break;
      case DistortionKind::kPacketLoss:
        d.loss_rate = spec->loss_rate.sample(r);
        d.segment_ms = spec->segment_ms;
        break;
    }
    d.seed = r.next_u64();
    d.source_index = -2;  // resolved against the resource bank in simulate_pair
    draws.push_back(d);
  }
  return draws;
}

namespace {

const Waveform& bank_entry(const std::vector<Waveform>& bank, int index, const char* what) {
  TSSE_CHECK(index >= 0 && static_cast<std::size_t>(index) < bank.size(), ErrorKind::kInvalidArgument,
             std::string(what) + " index " + std::to_string(index) + " out of range");
  return bank[static_cast<std::size_t>(index)];
}

}  // namespace

Waveform apply_draws(const Waveform& wav, const std::vector<DistortionDraw>& draws,
                     const std::set<DistortionKind>& kinds, const SimulationResources& res,
                     PacketLossMask* mask) {
  Waveform x = wav;
  for (const auto& d : draws) {
    if (!kinds.count(d.kind)) continue;
    Rng r(d.seed);
    switch (d.kind) {
      case DistortionKind::kReverb: {
        Waveform rir = d.source_index >= 0 ? resample(bank_entry(res.rirs, d.source_index, "RIR"), x.fs)
                                           : synth_rir(d.t60_s, x.fs, r);
        x = apply_reverb(x, rir);
        break;
      }
      case DistortionKind::kNoise: {
        Waveform noise = d.source_index >= 0
                             ? resample(bank_entry(res.noises, d.source_index, "noise"), x.fs)
                             : synth_noise(x.size(), x.fs, r);
        x = apply_noise(x, noise, d.snr_db);
        break;
      }
      case DistortionKind::kWind: {
        auto wind = synth_wind(static_cast<double>(x.size()) / x.fs, x.fs, r, d.intensity);
        wind.samples.resize(x.size(), 0.0);
        if (d.intensity > 0.0) x = apply_noise(x, wind, d.snr_db);
        break;
      }
      case DistortionKind::kClipping:
        x = apply_clip(x, d.clip_ratio);
        break;
      case DistortionKind::kBandwidthLimit:
        x = apply_bandwidth_limit(x, d.cutoff_fs);
        break;
      case DistortionKind::kCodec:
        x = apply_codec(x, d.codec_command.empty() ? CodecPreset::named(d.codec_preset)
                                                   : CodecPreset::external(d.codec_command));
        break;
      case DistortionKind::kPacketLoss: {
        auto [lossy, m] = apply_packet_loss(x, r, {d.loss_rate, d.segment_ms});
        x = std::move(lossy);
        if (mask) *mask = std::move(m);
        break;
      }
    }
  }
  return x;
}

SimulatedPair replay_pair(const Waveform& clean, Stage stage, const std::vector<DistortionDraw>& draws,
                          const std::set<DistortionKind>& target_kinds, const SimulationResources& res) {
  const Waveform base = conform_to_stage_rate(clean, stage);
  SimulatedPair pair;
  pair.draws = draws;
  pair.target_kinds = target_kinds;
  std::set<DistortionKind> all;
  for (const auto& d : draws) all.insert(d.kind);
  PacketLossMask mask;
  pair.input = apply_draws(base, draws, all, res, &mask);
  if (all.count(DistortionKind::kPacketLoss)) pair.mask = std::move(mask);
  pair.target = apply_draws(base, draws, target_kinds, res);
  return pair;
}

SimulatedPair simulate_pair(const Waveform& clean, const DistortionRecipe& recipe, Rng& rng,
                            const SimulationResources& res) {
  recipe.validate();
  const Waveform base = conform_to_stage_rate(clean, recipe.stage);
  auto draws = sample_draws(recipe, base.fs, rng);
  for (auto& d : draws) {
    Rng pick(d.seed ^ 0xA5A5A5A5ULL);
    const std::vector<Waveform>* bank = d.kind == DistortionKind::kNoise    ? &res.noises
                                        : d.kind == DistortionKind::kReverb ? &res.rirs
                                                                            : nullptr;
    d.source_index = bank && !bank->empty()
                         ? static_cast<int>(pick.integer(0, static_cast<int64_t>(bank->size()) - 1))
                         : -1;
  }
  std::set<DistortionKind> keep;
  for (const auto& d : draws)
    if (recipe.target_keeps.count(d.kind)) keep.insert(d.kind);
  return replay_pair(base, recipe.stage, draws, keep, res);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](std::string_view a) { return a == key; });
    TSSE_CHECK(ok, ErrorKind::kConfiguration, where + ": unknown key '" + key + "'");
  }
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j, const std::string& where) {
  TSSE_CHECK(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(),
             ErrorKind::kConfiguration, where + ": expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

json to_json(const DistortionSpec& s) {
  json j = {{"kind", std::string(to_string(s.kind))}};
  switch (s.kind) {
    case DistortionKind::kNoise: j["snr_db"] = range_json(s.snr_db); break;
    case DistortionKind::kWind:
      j["snr_db"] = range_json(s.snr_db);
      j["wind_intensity"] = range_json(s.wind_intensity);
      break;
    case DistortionKind::kReverb: j["t60_s"] = range_json(s.t60_s); break;
    case DistortionKind::kClipping: j["clip_ratio"] = range_json(s.clip_ratio); break;
    case DistortionKind::kBandwidthLimit: j["cutoff_fs"] = s.cutoff_fs; break;
    case DistortionKind::kCodec:
      j["codec_presets"] = s.codec_presets;
      if (!s.codec_command.empty()) j["codec_command"] = s.codec_command;
      break;
    case DistortionKind::kPacketLoss:
      j["loss_rate"] = range_json(s.loss_rate);
      j["segment_ms"] = range_json(s.segment_ms);
      break;
  }
  return j;
}

DistortionSpec spec_from_json(const json& j) {
  reject_unknown(j,
                 {"kind", "probability", "snr_db", "t60_s", "clip_ratio", "cutoff_fs", "codec_presets",
                  "codec_command", "loss_rate", "segment_ms", "wind_intensity"},
                 "distortion");
  TSSE_CHECK(j.contains("kind") && j["kind"].is_string(), ErrorKind::kConfiguration,
             "distortion: missing 'kind'");
  DistortionSpec s;
  try {
    s.kind = distortion_from_string(j["kind"].get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  const std::string where = "distortion '" + j["kind"].get<std::string>() + "'";
  if (j.contains("snr_db")) s.snr_db = range_from(j["snr_db"], where + ".snr_db");
  if (j.contains("t60_s")) s.t60_s = range_from(j["t60_s"], where + ".t60_s");
  if (j.contains("clip_ratio")) s.clip_ratio = range_from(j["clip_ratio"], where + ".clip_ratio");
  if (j.contains("loss_rate")) s.loss_rate = range_from(j["loss_rate"], where + ".loss_rate");
  if (j.contains("segment_ms")) s.segment_ms = range_from(j["segment_ms"], where + ".segment_ms");
  if (j.contains("wind_intensity")) s.wind_intensity = range_from(j["wind_intensity"], where + ".wind_intensity");
  try {
    if (j.contains("cutoff_fs")) s.cutoff_fs = j["cutoff_fs"].get<std::vector<int>>();
    if (j.contains("codec_presets")) s.codec_presets = j["codec_presets"].get<std::vector<std::string>>();
    if (j.contains("codec_command")) s.codec_command = j["codec_command"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfiguration, where + ": " + e.what());
  }
  return s;
}

json to_json(const DistortionRecipe& r) {
  json j;
  j["stage"] = std::string(to_string(r.stage));
  j["mandatory"] = json::array();
  for (const auto& s : r.mandatory) j["mandatory"].push_back(to_json(s));
  j["optional"] = json::array();
  for (const auto& o : r.optional) {
    auto e = to_json(o.spec);
    e["probability"] = o.probability;
    j["optional"].push_back(e);
  }
  j["target_keeps"] = json::array();
  for (auto k : r.target_keeps) j["target_keeps"].push_back(std::string(to_string(k)));
  return j;
}

DistortionRecipe recipe_from_json(const json& j) {
  reject_unknown(j, {"stage", "mandatory", "optional", "target_keeps"}, "recipe");
  TSSE_CHECK(j.contains("stage") && j["stage"].is_string(), ErrorKind::kConfiguration, "recipe: missing 'stage'");
  DistortionRecipe r;
  try {
    r.stage = stage_from_string(j["stage"].get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  if (j.contains("mandatory")) {
    for (const auto& e : j["mandatory"]) {
      TSSE_CHECK(!e.contains("probability"), ErrorKind::kConfiguration,
                 "recipe: mandatory distortions take no probability");
      r.mandatory.push_back(spec_from_json(e));
    }
  }
  if (j.contains("optional")) {
    for (const auto& e : j["optional"]) {
      OptionalDistortion o;
      o.spec = spec_from_json(e);
      if (e.contains("probability")) o.probability = e["probability"].get<double>();
      r.optional.push_back(o);
    }
  }
  if (j.contains("target_keeps")) {
    for (const auto& k : j["target_keeps"]) {
      try {
        r.target_keeps.insert(distortion_from_string(k.get<std::string>()));
      } catch (const Error& e) {
        throw Error(ErrorKind::kConfiguration, e.what());
      }
    }
  }
  try {
    r.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  return r;
}

json to_json(const DistortionDraw& d) {
  json j = {{"kind", std::string(to_string(d.kind))}, {"seed", d.seed}, {"source_index", d.source_index}};
  switch (d.kind) {
    case DistortionKind::kReverb: j["t60_s"] = d.t60_s; break;
    case DistortionKind::kNoise: j["snr_db"] = d.snr_db; break;
    case DistortionKind::kWind:
      j["snr_db"] = d.snr_db;
      j["intensity"] = d.intensity;
      break;
    case DistortionKind::kClipping: j["clip_ratio"] = d.clip_ratio; break;
    case DistortionKind::kBandwidthLimit: j["cutoff_fs"] = d.cutoff_fs; break;
    case DistortionKind::kCodec:
      j["codec_preset"] = d.codec_preset;
      if (!d.codec_command.empty()) j["codec_command"] = d.codec_command;
      break;
    case DistortionKind::kPacketLoss:
      j["loss_rate"] = d.loss_rate;
      j["segment_ms"] = range_json(d.segment_ms);
      break;
  }
  return j;
}

DistortionDraw draw_from_json(const json& j) {
  DistortionDraw d;
  d.kind = distortion_from_string(j.at("kind").get<std::string>());
  d.seed = j.at("seed").get<uint64_t>();
  d.source_index = j.value("source_index", -1);
  d.t60_s = j.value("t60_s", 0.0);
  d.snr_db = j.value("snr_db", 0.0);
  d.intensity = j.value("intensity", 0.0);
  d.clip_ratio = j.value("clip_ratio", 1.0);
  d.cutoff_fs = j.value("cutoff_fs", 0);
  d.codec_preset = j.value("codec_preset", std::string());
  d.codec_command = j.value("codec_command", std::string());
  d.loss_rate = j.value("loss_rate", 0.0);
  if (j.contains("segment_ms")) d.segment_ms = range_from(j["segment_ms"], "draw.segment_ms");
  return d;
}

json to_json(const PacketLossMask& mask) {
  json j = json::array();
  for (const auto& [s, e] : mask.lost_segments) j.push_back({s, e});
  return j;
}

}  // namespace tsse
