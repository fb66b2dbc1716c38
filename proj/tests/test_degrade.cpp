// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "tsse/degrade.hpp"
#include "tsse/error.hpp"
#include "tsse/manifest.hpp"

namespace tsse {
namespace {

using testing::bandlimited;
using testing::energy_fraction_above;
using testing::rel_l2;
using testing::white_noise;

Waveform speechlike(double seconds, int fs, uint64_t seed) {
  const auto n = static_cast<std::size_t>(seconds * fs);
  return Waveform(bandlimited(n, fs, std::min(7000.0, fs / 2.0 - 500.0), seed), fs);
}

double mean_power(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kTraining;
}

// ---------------------------------------------------------------------------
// Noise

TEST(Noise, MeasuredSnrMatchesForRandomDraws) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double snr = rng.uniform(-10.0, 30.0);
    const auto n = static_cast<std::size_t>(rng.integer(800, 4000));
    Waveform clean(white_noise(n, 100 + i, rng.uniform(0.01, 1.0)), 16000);
    Waveform noise(white_noise(static_cast<std::size_t>(rng.integer(300, 5000)), 900 + i), 16000);
    auto mix = apply_noise(clean, noise, snr);
    std::vector<double> residual(n);
    for (std::size_t k = 0; k < n; ++k) residual[k] = mix.samples[k] - clean.samples[k];
    const double measured = 10.0 * std::log10(mean_power(clean.samples) / mean_power(residual));
    EXPECT_NEAR(measured, snr, 0.01) << "draw " << i;
  }
}

TEST(Noise, ZeroDbEqualPower) {
  Waveform clean(white_noise(4000, 1), 16000);
  Waveform noise(white_noise(4000, 2, 0.01), 16000);
  auto mix = apply_noise(clean, noise, 0.0);
  std::vector<double> r(4000);
  for (int i = 0; i < 4000; ++i) r[i] = mix.samples[i] - clean.samples[i];
  EXPECT_NEAR(10.0 * std::log10(mean_power(clean.samples) / mean_power(r)), 0.0, 0.01);
}

TEST(Noise, HighSnrLeavesCleanAlmostUntouched) {
  Waveform clean = speechlike(0.5, 16000, 3);
  Waveform noise(white_noise(8000, 4), 16000);
  auto mix = apply_noise(clean, noise, 60.0);
  EXPECT_LT(20.0 * std::log10(rel_l2(mix.samples, clean.samples)), -59.99);
}

TEST(Noise, Errors) {
  Waveform silent(std::vector<double>(100, 0.0), 16000);
  Waveform noise(white_noise(100, 1), 16000);
  EXPECT_EQ(kind_of([&] { apply_noise(silent, noise, 5.0); }), ErrorKind::kDegenerateInput);
  EXPECT_EQ(kind_of([&] { apply_noise(noise, noise, INFINITY); }), ErrorKind::kInvalidArgument);
  Waveform other(white_noise(100, 2), 48000);
  EXPECT_EQ(kind_of([&] { apply_noise(noise, other, 5.0); }), ErrorKind::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Reverb

TEST(Reverb, UnitImpulseIsIdentity) {
  Waveform x = speechlike(0.2, 16000, 5);
  auto y = apply_reverb(x, Waveform({1.0}, 16000));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i], 1e-12);
}

TEST(Reverb, DelayedImpulseShifts) {
  Waveform x(white_noise(500, 6), 16000);
  const std::size_t d = 37;
  std::vector<double> h(d + 1, 0.0);
  h[d] = 1.0;
  auto y = apply_reverb(x, Waveform(h, 16000));
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(y.samples[i], 0.0, 1e-12);
  // Peak renormalisation rescales when the shifted-out tail held the peak.
  const double pk_in = peak(x.samples);
  double pk_shift = 0.0;
  for (std::size_t i = 0; i + d < x.size(); ++i) pk_shift = std::max(pk_shift, std::abs(x.samples[i]));
  for (std::size_t i = d; i < x.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i - d] * pk_in / pk_shift, 1e-12);
}

TEST(Reverb, MatchesDirectConvolution) {
  Waveform x(white_noise(700, 7), 16000);
  Waveform h(white_noise(90, 8), 16000);
  auto y = apply_reverb(x, h);
  std::vector<double> ref(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n)
    for (std::size_t m = 0; m < h.size() && m <= n; ++m) ref[n] += h.samples[m] * x.samples[n - m];
  const double g = peak(x.samples) / peak(ref);
  for (std::size_t n = 0; n < x.size(); ++n) EXPECT_NEAR(y.samples[n], ref[n] * g, 1e-9);
}

TEST(Reverb, ZeroRirRejected) {
  Waveform x(white_noise(100, 1), 16000);
  EXPECT_EQ(kind_of([&] { apply_reverb(x, Waveform(std::vector<double>(10, 0.0), 16000)); }),
            ErrorKind::kDegenerateInput);
  EXPECT_EQ(kind_of([&] { apply_reverb(x, Waveform({}, 16000)); }), ErrorKind::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Clipping

TEST(Clip, RatioOneIsIdentity) {
  Waveform x(white_noise(1000, 9), 16000);
  EXPECT_EQ(apply_clip(x, 1.0).samples, x.samples);
}

TEST(Clip, RampPlateau) {
  std::vector<double> ramp(101);
  for (int i = 0; i <= 100; ++i) ramp[i] = i / 100.0;
  auto y = apply_clip(Waveform(ramp, 16000), 0.5);
  for (int i = 0; i <= 100; ++i) EXPECT_DOUBLE_EQ(y.samples[i], std::min(ramp[i], 0.5));
}

TEST(Clip, ClippedFractionMatchesThresholdCount) {
  Waveform x(white_noise(5000, 10), 16000);
  for (double ratio : {0.1, 0.3, 0.6, 0.9}) {
    auto y = apply_clip(x, ratio);
    const double theta = ratio * peak(x.samples);
    int expect = 0, changed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(x.samples[i]) > theta) ++expect;
      if (y.samples[i] != x.samples[i]) ++changed;
      else EXPECT_LE(std::abs(x.samples[i]), theta);
    }
    EXPECT_EQ(changed, expect);
  }
}

TEST(Clip, Errors) {
  Waveform x(white_noise(10, 1), 16000);
  EXPECT_EQ(kind_of([&] { apply_clip(x, 0.0); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { apply_clip(x, -0.5); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { apply_clip(x, 1.5); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { apply_clip(Waveform(std::vector<double>(10, 0.0), 16000), 0.5); }),
            ErrorKind::kDegenerateInput);
}

// ---------------------------------------------------------------------------
// Bandwidth limitation

TEST(BandwidthLimit, BandlimitedContentPassesThrough) {
  Waveform x(bandlimited(48000, 48000, 3000.0, 12), 48000);
  auto y = apply_bandwidth_limit(x, 8000);
  ASSERT_EQ(y.size(), x.size());
  EXPECT_EQ(y.fs, 48000);
  EXPECT_LT(rel_l2(y.samples, x.samples), 1e-3);
}

TEST(BandwidthLimit, RemovesEnergyAboveNewNyquist) {
  Waveform x(white_noise(48000, 13), 48000);
  auto y = apply_bandwidth_limit(x, 8000);
  EXPECT_LT(10.0 * std::log10(energy_fraction_above(y.samples, 48000, 4000.0)), -50.0);
}

TEST(BandwidthLimit, PreservesLengthForAllRates) {
  for (int n : {1000, 1001, 4410, 7777}) {
    Waveform x(white_noise(n, n), 48000);
    for (int c : {8000, 16000, 22050, 32000, 44100}) EXPECT_EQ(apply_bandwidth_limit(x, c).size(), x.size());
  }
}

TEST(BandwidthLimit, CutoffAtOrAboveRateRejected) {
  Waveform x(white_noise(100, 1), 16000);
  EXPECT_EQ(kind_of([&] { apply_bandwidth_limit(x, 16000); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { apply_bandwidth_limit(x, 48000); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { apply_bandwidth_limit(x, 12345); }), ErrorKind::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Codec

TEST(Codec, Pcm16PassthroughWithinStep) {
  Waveform x(white_noise(2000, 14, 0.2), 16000);
  auto y = apply_codec(x, CodecPreset::named("pcm16"));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y.samples[i] - x.samples[i]), 0.5 / 32768.0 + 1e-15);
}

TEST(Codec, MuLawOutputsLieOnGrid) {
  for (int bits : {6, 8}) {
    const auto grid = mulaw_grid(bits);
    ASSERT_EQ(grid.size(), std::size_t{1} << bits);
    EXPECT_TRUE(std::is_sorted(grid.begin(), grid.end()));
    Waveform x(white_noise(3000, 15, 0.2), 16000);  // stays inside [-1, 1]
    auto y = apply_codec(x, CodecPreset::named(bits == 8 ? "mulaw8" : "mulaw6"));
    for (double v : y.samples) {
      const auto it = std::lower_bound(grid.begin(), grid.end(), v - 1e-12);
      ASSERT_TRUE(it != grid.end() && std::abs(*it - v) < 1e-12) << v;
    }
    // the quantizer picks the level whose compressed cell contains the sample
    EXPECT_LT(rel_l2(y.samples, x.samples), bits == 8 ? 0.05 : 0.2);
  }
}

TEST(Codec, MuLawGridIsSymmetric) {
  const auto g = mulaw_grid(8);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], -g[g.size() - 1 - i], 1e-12);
}

TEST(Codec, NarrowbandPresetBandLimits) {
  Waveform x(white_noise(16000, 16), 16000);
  auto y = apply_codec(x, CodecPreset::named("mulaw8_nb"));
  // quantization noise floor is broadband, so only a loose bound applies
  EXPECT_LT(energy_fraction_above(y.samples, 16000, 4200.0), 0.01);
}

TEST(Codec, ExternalIdentityRoundTrip) {
  Waveform x(white_noise(1234, 17, 0.3), 16000);
  auto y = apply_codec(x, CodecPreset::external("cat"));
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i], 1e-7);
}

TEST(Codec, ExternalFailureCapturesStderr) {
  Waveform x(white_noise(100, 18), 16000);
  try {
    apply_codec(x, CodecPreset::external("echo broken-encoder >&2; exit 3"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCodecAdapter);
    EXPECT_NE(std::string(e.what()).find("broken-encoder"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { apply_codec(x, CodecPreset::external("echo notawav")); }), ErrorKind::kCodecAdapter);
}

TEST(Codec, UnknownPresetRejected) {
  EXPECT_EQ(kind_of([] { CodecPreset::named("mp3"); }), ErrorKind::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Packet loss

TEST(PacketLoss, MaskMatchesZeroedSamples) {
  Rng rng(19);
  Waveform x(white_noise(32000, 20), 16000);
  for (double v : x.samples) ASSERT_NE(v, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto [y, mask] = apply_packet_loss(x, rng, {rng.uniform(0.05, 0.5), {20.0, 320.0}});
    ASSERT_FALSE(mask.lost_segments.empty());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (mask.contains(static_cast<int64_t>(i))) EXPECT_EQ(y.samples[i], 0.0);
      else EXPECT_EQ(y.samples[i], x.samples[i]);
    }
    for (std::size_t s = 0; s < mask.lost_segments.size(); ++s) {
      const auto [a, b] = mask.lost_segments[s];
      EXPECT_LT(a, b);
      EXPECT_GE(a, 0);
      EXPECT_LE(b, static_cast<int64_t>(x.size()));
      if (s > 0) EXPECT_GT(a, mask.lost_segments[s - 1].second);
    }
  }
}

TEST(PacketLoss, EmpiricalRateWithinTenPercent) {
  Rng rng(21);
  for (double rate : {0.05, 0.1, 0.3}) {
    int64_t lost = 0, total = 0;
    for (int i = 0; i < 1000; ++i) {
      Waveform x(std::vector<double>(48000, 1.0), 16000);
      auto [y, mask] = apply_packet_loss(x, rng, {rate, {20.0, 320.0}});
      lost += std::count(y.samples.begin(), y.samples.end(), 0.0);
      total += static_cast<int64_t>(x.size());
    }
    EXPECT_NEAR(static_cast<double>(lost) / total, rate, 0.1 * rate);
  }
}

TEST(PacketLoss, VanishingRateLosesNothing) {
  Rng rng(22);
  Waveform x(white_noise(16000, 23), 16000);
  auto [y, mask] = apply_packet_loss(x, rng, {1e-6, {20.0, 320.0}});
  EXPECT_TRUE(mask.lost_segments.empty());
  EXPECT_EQ(y.samples, x.samples);
}

TEST(PacketLoss, RateOutOfRangeRejected) {
  Rng rng(1);
  Waveform x(white_noise(100, 1), 16000);
  EXPECT_EQ(kind_of([&] { apply_packet_loss(x, rng, {0.0, {20, 320}}); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { apply_packet_loss(x, rng, {0.6, {20, 320}}); }), ErrorKind::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Wind

double spectral_centroid(const Waveform& w) {
  auto t = to_tensor(w);
  auto p = torch::fft::rfft(t).abs().pow(2);
  auto f = torch::arange(p.size(0), torch::kFloat64) * (static_cast<double>(w.fs) / w.size());
  return ((p * f).sum() / p.sum()).item<double>();
}

TEST(Wind, ZeroIntensityIsSilent) {
  Rng rng(1);
  auto w = synth_wind(0.5, 16000, rng, 0.0);
  EXPECT_EQ(w.size(), 8000u);
  EXPECT_EQ(peak(w.samples), 0.0);
}

TEST(Wind, LowFrequencyDominated) {
  for (int fs : {16000, 48000}) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      auto w = synth_wind(2.0, fs, rng, 1.0);
      EXPECT_LT(spectral_centroid(w), 500.0) << fs << " " << seed;
    }
  }
}

TEST(Wind, DeterministicUnderSeed) {
  Rng a(5), b(5), c(6);
  EXPECT_EQ(synth_wind(0.3, 16000, a, 0.7).samples, synth_wind(0.3, 16000, b, 0.7).samples);
  EXPECT_NE(synth_wind(0.3, 16000, a, 0.7).samples, synth_wind(0.3, 16000, c, 0.7).samples);
}

TEST(Wind, RejectsBadArguments) {
  Rng rng(1);
  EXPECT_EQ(kind_of([&] { synth_wind(0.0, 16000, rng, 1.0); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([&] { synth_wind(1.0, 16000, rng, -1.0); }), ErrorKind::kInvalidArgument);
}

// ---------------------------------------------------------------------------
// Recipes and simulation

DistortionSpec spec_of(DistortionKind k) {
  DistortionSpec s;
  s.kind = k;
  return s;
}

TEST(Recipe, DefaultsValidate) {
  for (Stage s : {Stage::kFill, Stage::kSep, Stage::kRes}) EXPECT_NO_THROW(DistortionRecipe::defaults(s).validate());
}

TEST(Recipe, StageInvariantsEnforced) {
  auto fill = DistortionRecipe::defaults(Stage::kFill);
  fill.mandatory.clear();
  fill.optional.push_back({spec_of(DistortionKind::kPacketLoss), 0.5});
  EXPECT_EQ(kind_of([&] { fill.validate(); }), ErrorKind::kInvalidArgument);

  auto sep = DistortionRecipe::defaults(Stage::kSep);
  sep.optional.push_back({spec_of(DistortionKind::kPacketLoss), 0.1});
  EXPECT_EQ(kind_of([&] { sep.validate(); }), ErrorKind::kInvalidArgument);
  sep = DistortionRecipe::defaults(Stage::kSep);
  sep.target_keeps.insert(DistortionKind::kNoise);
  EXPECT_EQ(kind_of([&] { sep.validate(); }), ErrorKind::kInvalidArgument);

  auto res = DistortionRecipe::defaults(Stage::kRes);
  res.mandatory.push_back(spec_of(DistortionKind::kNoise));
  EXPECT_EQ(kind_of([&] { res.validate(); }), ErrorKind::kInvalidArgument);
  res = DistortionRecipe::defaults(Stage::kRes);
  res.target_keeps.insert(DistortionKind::kCodec);
  EXPECT_EQ(kind_of([&] { res.validate(); }), ErrorKind::kInvalidArgument);
}

TEST(Recipe, ParamRangesValidated) {
  auto s = spec_of(DistortionKind::kClipping);
  s.clip_ratio = {0.0, 0.5};
  EXPECT_THROW(s.validate(), Error);
  s = spec_of(DistortionKind::kNoise);
  s.snr_db = {10.0, 5.0};
  EXPECT_THROW(s.validate(), Error);
  s.snr_db = {0.0, INFINITY};
  EXPECT_THROW(s.validate(), Error);
  s = spec_of(DistortionKind::kBandwidthLimit);
  s.cutoff_fs = {12345};
  EXPECT_THROW(s.validate(), Error);
}

TEST(Recipe, JsonRoundTripAndUnknownKeys) {
  for (Stage st : {Stage::kFill, Stage::kSep, Stage::kRes}) {
    auto r = DistortionRecipe::defaults(st);
    auto j = to_json(r);
    auto back = recipe_from_json(j);
    EXPECT_EQ(to_json(back), j);
  }
  auto j = to_json(DistortionRecipe::defaults(Stage::kSep));
  j["mandatory"][0]["snr"] = 3;
  EXPECT_EQ(kind_of([&] { recipe_from_json(j); }), ErrorKind::kConfiguration);
  j = to_json(DistortionRecipe::defaults(Stage::kSep));
  j["extra"] = 1;
  EXPECT_EQ(kind_of([&] { recipe_from_json(j); }), ErrorKind::kConfiguration);
}

TEST(Recipe, DrawJsonRoundTrip) {
  Rng rng(3);
  auto r = DistortionRecipe::defaults(Stage::kSep);
  for (auto& o : r.optional) o.probability = 1.0;
  auto draws = sample_draws(r, 16000, rng);
  ASSERT_EQ(draws.size(), 6u);
  for (const auto& d : draws) EXPECT_EQ(to_json(draw_from_json(to_json(d))), to_json(d));
}

DistortionRecipe only(Stage stage, std::vector<DistortionKind> mandatory) {
  auto r = DistortionRecipe::defaults(stage);
  r.mandatory.clear();
  r.optional.clear();
  for (auto k : mandatory) r.mandatory.push_back(spec_of(k));
  return r;
}

TEST(Simulate, FillWithOnlyPacketLoss) {
  Waveform clean = speechlike(1.0, 16000, 30);
  Rng rng(31);
  auto pair = simulate_pair(clean, only(Stage::kFill, {DistortionKind::kPacketLoss}), rng);
  EXPECT_EQ(pair.target.samples, clean.samples);
  ASSERT_TRUE(pair.mask.has_value());
  EXPECT_FALSE(pair.mask->lost_segments.empty());
  EXPECT_EQ(pair.input.samples, apply_mask(clean, *pair.mask).samples);
}

TEST(Simulate, FillInputIsGappedTarget) {
  Waveform clean = speechlike(1.0, 16000, 32);
  for (uint64_t seed = 0; seed < 6; ++seed) {
    auto r = DistortionRecipe::defaults(Stage::kFill);
    for (auto& o : r.optional) o.probability = 1.0;
    Rng rng(seed);
    auto pair = simulate_pair(clean, r, rng);
    ASSERT_TRUE(pair.mask.has_value());
    EXPECT_EQ(pair.input.samples, apply_mask(pair.target, *pair.mask).samples);
    EXPECT_FALSE(pair.target_kinds.count(DistortionKind::kPacketLoss));
  }
}

TEST(Simulate, SepNoisePlusBandLimit) {
  Waveform clean = speechlike(1.0, 16000, 33);
  auto recipe = only(Stage::kSep, {DistortionKind::kNoise, DistortionKind::kBandwidthLimit});
  recipe.mandatory[1].cutoff_fs = {8000};
  Rng rng(34);
  auto pair = simulate_pair(clean, recipe, rng);
  ASSERT_EQ(pair.draws.size(), 2u);
  const auto& noise_draw = pair.draws[0];
  const auto& bwl_draw = pair.draws[1];
  EXPECT_EQ(bwl_draw.cutoff_fs, 8000);
  EXPECT_FALSE(pair.mask.has_value());

  // independent reconstruction from the recorded draws
  auto target = apply_bandwidth_limit(clean, bwl_draw.cutoff_fs);
  Rng nrng(noise_draw.seed);
  auto noisy = apply_noise(clean, synth_noise(clean.size(), 16000, nrng), noise_draw.snr_db);
  auto input = apply_bandwidth_limit(noisy, bwl_draw.cutoff_fs);
  EXPECT_EQ(pair.target.samples, target.samples);
  EXPECT_EQ(pair.input.samples, input.samples);
  EXPECT_GT(rel_l2(pair.input.samples, pair.target.samples), 1e-3);
}

TEST(Simulate, ResTargetIsClean48k) {
  Waveform clean = speechlike(0.5, 48000, 35);
  Rng rng(36);
  auto r = DistortionRecipe::defaults(Stage::kRes);
  for (auto& o : r.optional) o.probability = 1.0;
  auto pair = simulate_pair(clean, r, rng);
  EXPECT_EQ(pair.target.samples, clean.samples);
  EXPECT_EQ(pair.input.fs, 48000);
  EXPECT_EQ(pair.input.size(), clean.size());
  EXPECT_TRUE(pair.target_kinds.empty());
}

TEST(Simulate, DeterministicForSeed) {
  Waveform clean = speechlike(0.6, 16000, 37);
  auto r = DistortionRecipe::defaults(Stage::kSep);
  for (auto& o : r.optional) o.probability = 1.0;
  Rng a(38), b(38);
  auto p = simulate_pair(clean, r, a);
  auto q = simulate_pair(clean, r, b);
  EXPECT_EQ(p.input.samples, q.input.samples);
  EXPECT_EQ(p.target.samples, q.target.samples);
  auto p2 = simulate_pair(clean, r, a);
  EXPECT_NE(p.input.samples, p2.input.samples);
}

TEST(Simulate, ReplayReproducesPair) {
  Waveform clean = speechlike(0.6, 16000, 39);
  for (Stage st : {Stage::kFill, Stage::kSep}) {
    Rng rng(40);
    auto pair = simulate_pair(clean, DistortionRecipe::defaults(st), rng);
    std::vector<DistortionDraw> draws;
    for (const auto& d : pair.draws) draws.push_back(draw_from_json(to_json(d)));
    auto again = replay_pair(clean, st, draws, pair.target_kinds);
    EXPECT_EQ(again.input.samples, pair.input.samples);
    EXPECT_EQ(again.target.samples, pair.target.samples);
  }
}

TEST(Simulate, SepTargetKeepsOnlyBandLimitAndCodec) {
  Waveform clean = speechlike(0.6, 16000, 41);
  for (uint64_t seed = 0; seed < 4; ++seed) {
    auto r = DistortionRecipe::defaults(Stage::kSep);
    for (auto& o : r.optional) o.probability = 1.0;
    Rng rng(seed);
    auto pair = simulate_pair(clean, r, rng);
    Waveform expect = clean;
    for (const auto& d : pair.draws) {
      if (d.kind == DistortionKind::kBandwidthLimit) expect = apply_bandwidth_limit(expect, d.cutoff_fs);
      if (d.kind == DistortionKind::kCodec) expect = apply_codec(expect, CodecPreset::named(d.codec_preset));
    }
    EXPECT_EQ(pair.target.samples, expect.samples);
    for (auto k : pair.target_kinds)
      EXPECT_TRUE(k == DistortionKind::kBandwidthLimit || k == DistortionKind::kCodec);
  }
}

TEST(Simulate, PreservesLengthAndRate) {
  Waveform clean = speechlike(0.7, 16000, 42);
  for (uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(seed);
    auto pair = simulate_pair(clean, DistortionRecipe::defaults(Stage::kSep), rng);
    EXPECT_EQ(pair.input.size(), clean.size());
    EXPECT_EQ(pair.target.size(), clean.size());
    EXPECT_EQ(pair.input.fs, 16000);
  }
}

TEST(Simulate, RatePolicy) {
  Rng rng(1);
  Waveform at8k = speechlike(0.2, 8000, 1);
  EXPECT_EQ(kind_of([&] { simulate_pair(at8k, DistortionRecipe::defaults(Stage::kSep), rng); }),
            ErrorKind::kUnsupportedRate);
  Waveform at16k = speechlike(0.2, 16000, 1);
  EXPECT_EQ(kind_of([&] { simulate_pair(at16k, DistortionRecipe::defaults(Stage::kRes), rng); }),
            ErrorKind::kUnsupportedRate);
  Waveform at48k = speechlike(0.2, 48000, 1);
  auto pair = simulate_pair(at48k, DistortionRecipe::defaults(Stage::kFill), rng);
  EXPECT_EQ(pair.input.fs, 16000);
  EXPECT_EQ(pair.target.size(), 3200u);
}

TEST(Simulate, UsesResourceBanks) {
  Waveform clean = speechlike(0.5, 16000, 43);
  SimulationResources res;
  res.noises.push_back(Waveform(white_noise(4000, 44), 16000));
  res.rirs.push_back(Waveform({1.0}, 16000));
  auto r = only(Stage::kSep, {DistortionKind::kReverb, DistortionKind::kNoise});
  Rng rng(45);
  auto pair = simulate_pair(clean, r, rng, res);
  ASSERT_EQ(pair.draws.size(), 2u);
  EXPECT_EQ(pair.draws[1].source_index, 0);
  auto expect = apply_noise(clean, res.noises[0], pair.draws[1].snr_db);
  for (std::size_t i = 0; i < clean.size(); ++i) EXPECT_NEAR(pair.input.samples[i], expect.samples[i], 1e-12);
}

TEST(Manifest, RoundTripAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "tsse_manifest_test";
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries = {{"a", dir / "a.wav", 16000}, {"b", dir / "b.wav", 48000}};
  write_manifest(dir / "m.tsv", entries);
  EXPECT_EQ(read_manifest(dir / "m.tsv"), entries);

  std::ofstream(dir / "rel.tsv") << "# comment\n\nx\tsub/x.wav\t22050\n";
  auto rel = read_manifest(dir / "rel.tsv");
  ASSERT_EQ(rel.size(), 1u);
  EXPECT_EQ(rel[0].path, dir / "sub/x.wav");

  std::ofstream(dir / "bad.tsv") << "x\tx.wav\n";
  EXPECT_EQ(kind_of([&] { read_manifest(dir / "bad.tsv"); }), ErrorKind::kIo);
  std::ofstream(dir / "rate.tsv") << "x\tx.wav\t12345\n";
  EXPECT_EQ(kind_of([&] { read_manifest(dir / "rate.tsv"); }), ErrorKind::kUnsupportedRate);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tsse
