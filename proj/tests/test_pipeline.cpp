// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <functional>

#include "test_util.hpp"
#include "tsse/degrade.hpp"
#include "tsse/error.hpp"
#include "tsse/pipeline.hpp"

namespace tsse {
namespace {

using testing::bandlimited;
using testing::rel_l2;
using testing::white_noise;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kTraining;
}

GridNetConfig tiny() { return {8, 1, 4, 1, 6, 2, 2}; }

ModelBundle tiny_bundle(bool with_finetuned = true) {
  torch::manual_seed(7);
  BundleConfig cfg{tiny(), tiny(), tiny(), with_finetuned};
  auto b = ModelBundle::build(cfg);
  b.to(torch::kFloat64);
  b.eval();
  return b;
}

/// Bundle whose fill / res nets have non-zero outputs, so routes differ.
ModelBundle perturbed_bundle() {
  auto b = tiny_bundle();
  torch::NoGradGuard ng;
  torch::manual_seed(8);
  for (auto* net : {&b.fill, &b.res, &b.res_finetuned})
    for (auto& p : (*net)->parameters()) p.add_(0.05 * torch::randn_like(p));
  return b;
}

Waveform speech_shaped(std::size_t n, int fs, uint64_t seed) {
  auto x = white_noise(n, seed, 0.1);
  // one-pole lowpass around 500 Hz: -6 dB/octave tilt that still reaches Nyquist
  const double a = std::exp(-2.0 * std::numbers::pi * 500.0 / fs);
  double y = 0.0;
  for (auto& v : x) v = y = (1 - a) * v + a * y;
  return {x, fs};
}

TEST(Stages, ZeroInitFillIsIdentity) {
  auto b = tiny_bundle();
  for (int fs : {8000, 16000, 48000}) {
    Waveform x(white_noise(fs / 5, fs, 0.1), fs);
    EXPECT_EQ(run_fill(x, b).samples, x.samples) << fs;
  }
}

TEST(Stages, SepPreservesLengthAndIsFinite) {
  auto b = tiny_bundle();
  for (int fs : {8000, 16000, 48000}) {
    Waveform x(white_noise(fs / 5 + 3, fs, 0.1), fs);
    auto y = run_sep(x, b);
    EXPECT_EQ(y.size(), x.size());
    EXPECT_EQ(y.fs, fs);
  }
  auto clipped = white_noise(4000, 1, 3.0);
  for (auto& v : clipped) v = std::clamp(v, -1.0, 1.0);
  auto y = run_sep(Waveform(clipped, 16000), b);
  for (double v : y.samples) ASSERT_TRUE(std::isfinite(v));
}

TEST(Stages, ZeroInitResIsIdentityUpToResampling) {
  auto b = tiny_bundle();
  Waveform x(bandlimited(16000, 16000, 6000.0, 2), 16000);
  auto y = run_res(x, b);
  EXPECT_EQ(y.fs, 16000);
  ASSERT_EQ(y.size(), x.size());
  EXPECT_LT(rel_l2(y.samples, x.samples), 1e-3);
  Waveform full(white_noise(9600, 3, 0.1), 48000);
  EXPECT_EQ(run_res(full, b).samples, full.samples);
}

TEST(Stages, ResLengthAtOddRates) {
  auto b = perturbed_bundle();
  for (int fs : {8000, 22050, 44100}) {
    Waveform x(white_noise(fs / 7 + 1, 4, 0.1), fs);
    auto y = run_res(x, b, ResRoute::kFinetuned);
    EXPECT_EQ(y.size(), x.size());
    EXPECT_EQ(y.fs, fs);
  }
}

TEST(Stages, MissingFinetunedNet) {
  auto b = tiny_bundle(false);
  Waveform x(white_noise(4800, 5, 0.1), 48000);
  EXPECT_EQ(kind_of([&] { run_res(x, b, ResRoute::kFinetuned); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([&] { enhance({x, true}, b); }), ErrorKind::kConfiguration);
  EXPECT_NO_THROW(enhance({x, false}, b));
}

// ---------------------------------------------------------------------------

TEST(Bwai, FullbandWhiteNoise) {
  auto est = detect_bandwidth_limited(Waveform(white_noise(48000, 10, 0.1), 48000));
  EXPECT_FALSE(est.is_band_limited);
  EXPECT_DOUBLE_EQ(est.effective_cutoff_hz, 24000.0);
  EXPECT_EQ(est.threshold_db, 35.0);
}

TEST(Bwai, LowpassedAtEightKilohertz) {
  Waveform x(white_noise(48000, 11, 0.1), 48000);
  auto est = detect_bandwidth_limited(apply_bandwidth_limit(x, 16000));
  EXPECT_TRUE(est.is_band_limited);
  EXPECT_GE(est.effective_cutoff_hz, 7000.0);
  EXPECT_LE(est.effective_cutoff_hz, 9000.0);
}

TEST(Bwai, NaturalRolloffIsFullband) {
  auto est = detect_bandwidth_limited(speech_shaped(16000, 16000, 12));
  EXPECT_FALSE(est.is_band_limited);
  EXPECT_GE(est.effective_cutoff_hz, 7000.0);
}

TEST(Bwai, TooShortAndSilent) {
  EXPECT_EQ(kind_of([] { detect_bandwidth_limited(Waveform(white_noise(7000, 13), 16000)); }),
            ErrorKind::kInvalidArgument);
  auto est = detect_bandwidth_limited(Waveform(std::vector<double>(16000, 0.0), 16000));
  EXPECT_FALSE(est.is_band_limited);
}

TEST(Bwai, ConfigJson) {
  BwaiConfig c;
  c.threshold_db = 30;
  EXPECT_EQ(bwai_config_from_json(to_json(c)).threshold_db, 30.0);
  EXPECT_EQ(kind_of([] { bwai_config_from_json({{"margin", 3}}); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { bwai_config_from_json({{"nyquist_fraction", 2.0}}); }), ErrorKind::kConfiguration);
}

// ---------------------------------------------------------------------------

TEST(Enhance, SepOnlyMatchesRunSep) {
  auto b = tiny_bundle();
  Waveform x(white_noise(8000, 20, 0.2), 16000);
  EnhanceRequest req{x, true, {Stage::kSep}};
  auto out = enhance(req, b);
  // manual composition with the same level normalisation is bit-exact
  const double g = 0.9 / peak(x.samples);
  Waveform scaled = x;
  for (auto& v : scaled.samples) v *= g;
  auto manual = run_sep(scaled, b);
  for (auto& v : manual.samples) v /= g;
  EXPECT_EQ(out.wav.samples, manual.samples);
  // the stage nets normalise by RMS, so the gain round trip is nearly invisible
  EXPECT_LT(rel_l2(out.wav.samples, run_sep(x, b).samples), 1e-6);
  EXPECT_FALSE(out.bandwidth.has_value());
}

TEST(Enhance, FullMaskEqualsManualComposition) {
  auto b = perturbed_bundle();
  Waveform x(white_noise(16000, 21, 0.2), 16000);
  for (bool bwai : {false, true}) {
    auto out = enhance({x, bwai}, b);
    const double g = 0.9 / peak(x.samples);
    Waveform y = x;
    for (auto& v : y.samples) v *= g;
    y = run_res(run_sep(run_fill(y, b), b), b, out.route);
    for (auto& v : y.samples) v /= g;
    EXPECT_EQ(out.wav.samples, y.samples);
  }
}

TEST(Enhance, ZeroInitResidualStagesAreIdentity) {
  auto b = tiny_bundle();
  for (int fs : kSupportedRates) {
    Waveform x(bandlimited(fs / 2, fs, 0.4 * fs, 22, 12, 0.02), fs);
    auto out = enhance({x, false, {Stage::kFill, Stage::kRes}}, b);
    ASSERT_EQ(out.wav.size(), x.size());
    EXPECT_EQ(out.wav.fs, fs);
    EXPECT_LT(rel_l2(out.wav.samples, x.samples), 1e-3) << fs;
  }
}

TEST(Enhance, LengthAndRatePreservedEverywhere) {
  auto b = perturbed_bundle();
  for (int fs : kSupportedRates) {
    Waveform x(white_noise(fs / 4 + 1, 23, 0.1), fs);
    auto out = enhance({x, false}, b);
    EXPECT_EQ(out.wav.size(), x.size()) << fs;
    EXPECT_EQ(out.wav.fs, fs);
  }
}

TEST(Enhance, BwaiRouting) {
  auto b = perturbed_bundle();
  Waveform full(white_noise(48000, 24, 0.1), 48000);
  Waveform limited = apply_bandwidth_limit(full, 16000);
  EXPECT_EQ(enhance({full, true}, b).route, ResRoute::kBase);
  auto r = enhance({limited, true}, b);
  EXPECT_EQ(r.route, ResRoute::kFinetuned);
  ASSERT_TRUE(r.bandwidth.has_value());
  EXPECT_TRUE(r.bandwidth->is_band_limited);
  EXPECT_EQ(enhance({limited, false}, b).route, ResRoute::kBase);
  // determinism of the route and the output
  auto again = enhance({limited, true}, b);
  EXPECT_EQ(again.route, r.route);
  EXPECT_EQ(again.wav.samples, r.wav.samples);
  // routes really select different nets
  EXPECT_NE(enhance({limited, false}, b).wav.samples, r.wav.samples);
}

TEST(Enhance, ShortInputFallsBackToBase) {
  auto b = perturbed_bundle();
  auto r = enhance({Waveform(white_noise(4000, 25, 0.1), 16000), true}, b);
  EXPECT_EQ(r.route, ResRoute::kBase);
  EXPECT_FALSE(r.bandwidth.has_value());
}

TEST(Enhance, EmptyMaskRejected) {
  auto b = tiny_bundle();
  EnhanceRequest req{Waveform(white_noise(4000, 26, 0.1), 16000), false, {}};
  EXPECT_EQ(kind_of([&] { enhance(req, b); }), ErrorKind::kConfiguration);
}

TEST(Enhance, BatchPreservesOrderAndReportsErrors) {
  auto b = perturbed_bundle();
  std::vector<EnhanceRequest> reqs;
  for (int i = 0; i < 4; ++i) reqs.push_back({Waveform(white_noise(3000 + 100 * i, 30 + i, 0.1), 16000), false});
  reqs.push_back({Waveform(white_noise(3000, 40, 0.1), 16000), false, {}});
  auto out = enhance_batch(reqs, b, 3);
  ASSERT_EQ(out.size(), reqs.size());
  for (int i = 0; i < 4; ++i) {
    ASSERT_TRUE(out[i].result.has_value()) << out[i].error;
    EXPECT_EQ(out[i].result->wav.samples, enhance(reqs[i], b).wav.samples);
  }
  EXPECT_FALSE(out[4].result.has_value());
  EXPECT_NE(out[4].error.find("stage mask"), std::string::npos);
}

}  // namespace
}  // namespace tsse
