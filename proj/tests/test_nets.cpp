// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "test_util.hpp"
#include "tsse/cws.hpp"
#include "tsse/error.hpp"
#include "tsse/nets.hpp"
#include "tsse/stft.hpp"

namespace tsse {
namespace {

GridNetConfig tiny() { return {8, 1, 4, 1, 6, 2, 2}; }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kTraining;
}

TEST(GridNetConfig, Presets) {
  EXPECT_EQ(GridNetConfig::small(), (GridNetConfig{48, 5, 4, 1, 100, 2, 4}));
  EXPECT_EQ(GridNetConfig::large(), (GridNetConfig{96, 10, 4, 1, 200, 4, 8}));
  const auto s = GridNetConfig::small(), l = GridNetConfig::large();
  // unfold geometry is shared, every other size doubles
  EXPECT_EQ(s.I, l.I);
  EXPECT_EQ(s.J, l.J);
  EXPECT_EQ(2 * s.D, l.D);
  EXPECT_EQ(2 * s.B, l.B);
  EXPECT_EQ(2 * s.H, l.H);
  EXPECT_EQ(2 * s.E, l.E);
  EXPECT_EQ(2 * s.L, l.L);
}

TEST(GridNetConfig, Validation) {
  EXPECT_EQ(kind_of([] { GridNetConfig{0, 1, 4, 1, 4, 2, 2}.validate(); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { GridNetConfig{8, 1, 2, 3, 4, 2, 2}.validate(); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { GridNetConfig{9, 1, 4, 1, 4, 2, 2}.validate(); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { TFGridNet(GridNetConfig{8, 1, 2, 3, 4, 2, 2}, 2, 2); }), ErrorKind::kInvalidArgument);
}

TEST(GridNetConfig, JsonRoundTrip) {
  const auto l = GridNetConfig::large();
  EXPECT_EQ(gridnet_config_from_json(to_json(l)), l);
  EXPECT_EQ(gridnet_config_from_json("S"), GridNetConfig::small());
  EXPECT_EQ(kind_of([] { gridnet_config_from_json({{"D", 8}, {"X", 1}}); }), ErrorKind::kConfiguration);
}

TEST(ParamCount, AnalyticMatchesConstruction) {
  const std::vector<GridNetConfig> cfgs = {GridNetConfig::small(), GridNetConfig::large(), tiny(),
                                           {12, 2, 3, 2, 5, 3, 3}, {16, 3, 6, 3, 7, 1, 4}};
  for (const auto& c : cfgs) {
    for (auto [in, out] : {std::pair{2, 2}, std::pair{6, 6}, std::pair{1, 3}}) {
      TFGridNet net(c, in, out);
      EXPECT_EQ(count_parameters(*net), gridnet_param_count(c, in, out)) << to_json(c).dump();
    }
  }
}

TEST(ParamCount, LargeRecurrentWeightsScaleByFour) {
  auto lstm_weights = [](const GridNetConfig& c) {
    TFGridNet net(c, 2, 2);
    int64_t n = 0;
    for (const auto& p : net->named_parameters())
      if (p.key().find("rnn") != std::string::npos && p.key().find("weight") != std::string::npos)
        n += p.value().numel();
    return static_cast<double>(n) / c.B;
  };
  EXPECT_DOUBLE_EQ(lstm_weights(GridNetConfig::large()) / lstm_weights(GridNetConfig::small()), 4.0);
}

TEST(Budget, DefaultPresetsWithinTolerance) {
  const BundleConfig cfg;
  const auto counts = bundle_param_counts(cfg);
  EXPECT_NEAR(counts.total() / 1e6, 30.40, 3.04);
  const double m16 = bundle_macs_per_second(cfg, 16000, 4.0) / 1e9;
  const double m48 = bundle_macs_per_second(cfg, 48000, 4.0) / 1e9;
  EXPECT_NEAR(m16, 493.0, 0.15 * 493.0);
  EXPECT_NEAR(m48, 1360.5, 0.15 * 1360.5);
  const auto report = budget_report(cfg, 4.0);
  EXPECT_NE(report.find("total"), std::string::npos);
}

TEST(Budget, ConstructedBundleMatchesAnalytic) {
  BundleConfig cfg{tiny(), tiny(), tiny(), true};
  auto bundle = ModelBundle::build(cfg);
  const auto a = bundle.parameter_counts(), b = bundle_param_counts(cfg);
  EXPECT_EQ(a.fill, b.fill);
  EXPECT_EQ(a.sep, b.sep);
  EXPECT_EQ(a.res, b.res);
  EXPECT_EQ(a.res_finetuned, b.res_finetuned);
}

TEST(TFGridNet, ShapeContractForAnyBinCount) {
  torch::manual_seed(0);
  TFGridNet net(GridNetConfig::small(), 2, 2);
  net->eval();
  torch::NoGradGuard ng;
  for (int64_t f : {129, 257, 769}) {
    auto x = torch::randn({1, 2, 3, f});
    auto y = net(x);
    EXPECT_EQ(y.sizes(), x.sizes());
    EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
  }
}

TEST(TFGridNet, HandlesSequencesShorterThanKernel) {
  TFGridNet net(tiny(), 2, 2);
  auto x = torch::randn({2, 2, 1, 3});
  EXPECT_EQ(net(x).sizes(), x.sizes());
}

TEST(TFGridNet, StrideGreaterThanOne) {
  GridNetConfig c{8, 1, 4, 2, 5, 2, 2};
  TFGridNet net(c, 2, 2);
  for (int64_t f : {9, 10, 17}) {
    auto x = torch::randn({1, 2, 5, f});
    EXPECT_EQ(net(x).sizes(), x.sizes());
  }
}

TEST(TFGridNet, ZeroInitOutputIsZero) {
  TFGridNet net(tiny(), 2, 2, true);
  auto y = net(torch::randn({1, 2, 6, 17}));
  EXPECT_EQ(y.abs().max().item<float>(), 0.0f);
}

TEST(TFGridNet, RejectsWrongChannels) {
  TFGridNet net(tiny(), 2, 2);
  EXPECT_EQ(kind_of([&] { net(torch::randn({1, 3, 4, 9})); }), ErrorKind::kShapeMismatch);
}

TEST(StageNet, ZeroInitFillAndResAreIdentity) {
  auto fill = build_stage_net(StageNetKind::kFill, tiny());
  auto x = torch::randn({2, 1600}, torch::kFloat64);
  fill->to(torch::kFloat64);
  EXPECT_TRUE(torch::equal(fill(x, 16000), x));
  auto res = build_stage_net(StageNetKind::kRes, tiny());
  res->to(torch::kFloat64);
  auto x48 = torch::randn({1, 4800}, torch::kFloat64);
  EXPECT_TRUE(torch::equal(res(x48, 48000), x48));
}

TEST(StageNet, ResRequires48k) {
  auto res = build_stage_net(StageNetKind::kRes, tiny());
  EXPECT_EQ(kind_of([&] { res(torch::randn({1, 1600}), 16000); }), ErrorKind::kUnsupportedRate);
}

TEST(StageNet, SamplingFrequencyIndependent) {
  torch::manual_seed(1);
  for (auto kind : {StageNetKind::kFill, StageNetKind::kSep}) {
    StageNet net(kind, tiny(), false);
    torch::NoGradGuard ng;
    for (int fs : kSupportedRates) {
      const int64_t n = fs / 20 + 7;
      auto y = net(torch::randn({1, n}), fs);
      EXPECT_EQ(y.size(1), n) << fs;
      EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
    }
  }
}

TEST(StageNet, FiniteForLoudInputs) {
  torch::manual_seed(2);
  for (auto kind : {StageNetKind::kFill, StageNetKind::kSep, StageNetKind::kRes}) {
    StageNet net(kind, tiny(), false);
    torch::NoGradGuard ng;
    const int fs = kind == StageNetKind::kRes ? 48000 : 16000;
    auto y = net(10.0 * torch::randn({1, fs / 10}), fs);
    EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
  }
}

TEST(StageNet, EveryParameterReceivesGradient) {
  torch::manual_seed(3);
  for (auto kind : {StageNetKind::kFill, StageNetKind::kSep, StageNetKind::kRes}) {
    StageNet net(kind, GridNetConfig{8, 2, 4, 1, 6, 2, 2}, false);
    const int fs = kind == StageNetKind::kRes ? 48000 : 16000;
    // long enough for several inter-frame windows (recurrent weights need > 1 step)
    auto x = torch::randn({2, fs / 5});
    auto target = torch::randn({2, fs / 5});
    auto loss = (net(x, fs) - target).pow(2).mean();
    loss.backward();
    for (const auto& p : net->named_parameters()) {
      ASSERT_TRUE(p.value().grad().defined()) << p.key();
      EXPECT_GT(p.value().grad().abs().sum().item<double>(), 0.0) << p.key();
    }
  }
}

TEST(StageNet, CwsGradientReachesAllSubbands) {
  torch::manual_seed(4);
  StageNet res(StageNetKind::kRes, tiny(), false);
  auto x = torch::randn({1, 4800});
  auto w = torch::randn({1, 4800});
  (res(x, 48000) * w).sum().backward();
  auto g = res->net()->named_parameters()["in_conv.weight"].grad();  // [D, 6, 3, 3]
  for (int band = 0; band < kCwsBands; ++band)
    EXPECT_GT(g.narrow(1, 2 * band, 2).abs().sum().item<double>(), 0.0) << band;
}

TEST(StageNet, CwsPathMatchesManualSplit) {
  // the res net reads exactly the channel-stacked CWS subbands
  torch::manual_seed(5);
  StageNet res(StageNetKind::kRes, tiny(), false);
  res->to(torch::kFloat64);
  res->eval();
  auto x = torch::randn({1, 4800}, torch::kFloat64);
  auto rms = (x.pow(2).mean(-1, true) + 1e-8).sqrt();
  const auto cfg = StftConfig::for_rate(48000);
  auto stack = cws_split(stft(x / rms, cfg), cfg);
  auto ch = complex_to_channels(stack.to_channels());
  auto y = res->net()(ch.reshape({1, 6, ch.size(3), ch.size(4)})).reshape(ch.sizes());
  auto spec = cws_merge_tensor(SubbandStack::from_channels(channels_to_complex(y), stack.band_edges, cfg));
  auto expect = x + istft(spec, cfg, 4800) * rms;
  torch::NoGradGuard ng;
  EXPECT_LT(testing::rel_l2(res(x, 48000), expect), 1e-12);
}

// ---------------------------------------------------------------------------

DiscriminatorConfig small_disc() {
  DiscriminatorConfig c;
  c.use_mbd = true;
  c.width = 0.125;
  return c;
}

TEST(Discriminator, EverySubDiscriminatorHasFeatures) {
  Discriminator d(small_disc());
  auto out = d(torch::randn({2, 4096}));
  EXPECT_EQ(out.scores.size(), 5u + 3u + 3u);
  ASSERT_EQ(out.features.size(), out.scores.size());
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    EXPECT_EQ(out.scores[i].size(0), 2);
    EXPECT_FALSE(out.features[i].empty());
  }
  EXPECT_EQ(d->mpd_forward(torch::randn({1, 4096})).scores.size(), 5u);
  EXPECT_EQ(d->mrd_forward(torch::randn({1, 4096})).scores.size(), 3u);
  EXPECT_EQ(d->mbd_forward(torch::randn({1, 4096})).scores.size(), 3u);
}

TEST(Discriminator, DeterministicInEval) {
  torch::manual_seed(6);
  Discriminator d(small_disc());
  d->eval();
  auto x = torch::randn({1, 4096});
  auto a = d(x), b = d(x);
  for (std::size_t i = 0; i < a.scores.size(); ++i) EXPECT_TRUE(torch::equal(a.scores[i], b.scores[i]));
}

TEST(Discriminator, ShortInputRejected) {
  Discriminator d(small_disc());
  EXPECT_EQ(kind_of([&] { d(torch::randn({1, 1000})); }), ErrorKind::kInvalidArgument);
}

TEST(Discriminator, StagePresets) {
  auto fill = DiscriminatorConfig::for_stage(StageNetKind::kFill);
  EXPECT_TRUE(fill.use_mpd && fill.use_mrd && !fill.use_mbd);
  auto res = DiscriminatorConfig::for_stage(StageNetKind::kRes);
  EXPECT_TRUE(!res.use_mpd && res.use_mrd && res.use_mbd);
  EXPECT_EQ(fill.periods, (std::vector<int>{2, 3, 5, 7, 11}));
  EXPECT_EQ(fill.resolutions, (std::vector<std::pair<int, int>>{{512, 128}, {1024, 256}, {2048, 512}}));
  EXPECT_EQ(discriminator_config_from_json(to_json(res)).use_mbd, true);
  EXPECT_EQ(kind_of([] { discriminator_config_from_json({{"use_mpd", false}, {"use_mrd", false}}); }),
            ErrorKind::kConfiguration);
}

TEST(Discriminator, BandFiltersSplitSpectrum) {
  // a low tone excites the first band far more than the last
  DiscriminatorConfig c;
  c.use_mpd = c.use_mrd = false;
  c.use_mbd = true;
  c.width = 0.125;
  Discriminator d(c);
  const int n = 8192;
  auto t = torch::arange(n, torch::kFloat32);
  auto low = torch::sin(2 * M_PI * 0.05 * t);  // 0.1 of Nyquist
  auto f_low = d->mbd_forward(low.unsqueeze(0));
  auto first = f_low.features[0][0].abs().mean().item<double>();
  auto last = f_low.features[2][0].abs().mean().item<double>();
  EXPECT_GT(first, 0.0);
  auto bias_only = d->mbd_forward(torch::zeros({1, n})).features[2][0].abs().mean().item<double>();
  EXPECT_NEAR(last, bias_only, 0.05 * first + 1e-3);
}

double auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double q : neg) wins += p > q ? 1.0 : p == q ? 0.5 : 0.0;
  return wins / (pos.size() * neg.size());
}

TEST(Discriminator, SeparatesRealFromFakeAfterToyTraining) {
  torch::manual_seed(7);
  auto real_batch = [](uint64_t seed) {
    std::vector<torch::Tensor> rows;
    for (int i = 0; i < 4; ++i) {
      auto x = testing::bandlimited(4096, 16000, 3000.0, seed * 10 + i, 8, 0.01);
      rows.push_back(torch::tensor(x, torch::kFloat32));
    }
    return torch::stack(rows);
  };
  auto fake_of = [](const torch::Tensor& real, uint64_t seed) {
    torch::manual_seed(seed);
    return real + 0.05 * torch::randn(real.sizes());
  };
  DiscriminatorConfig c;
  c.use_mpd = false;
  c.width = 0.125;
  c.resolutions = {{256, 64}, {512, 128}};
  Discriminator d(c);
  torch::optim::Adam opt(d->parameters(), torch::optim::AdamOptions(2e-3));
  auto mean_score = [](const DiscriminatorOutput& o) {
    torch::Tensor s = torch::zeros({o.scores[0].size(0)});
    for (const auto& x : o.scores) s = s + x.mean(1);
    return s / static_cast<double>(o.scores.size());
  };
  for (int step = 0; step < 60; ++step) {
    auto real = real_batch(step);
    auto fake = fake_of(real, 1000 + step);
    auto lr = mean_score(d(real)), lf = mean_score(d(fake));
    auto loss = (lr - 1).pow(2).mean() + lf.pow(2).mean();
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  d->eval();
  torch::NoGradGuard ng;
  std::vector<double> pos, neg;
  for (int k = 0; k < 5; ++k) {
    auto real = real_batch(500 + k);
    auto fake = fake_of(real, 9000 + k);
    auto sr = mean_score(d(real)), sf = mean_score(d(fake));
    for (int i = 0; i < 4; ++i) {
      pos.push_back(sr[i].item<double>());
      neg.push_back(sf[i].item<double>());
    }
  }
  EXPECT_GT(auc(pos, neg), 0.9);
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, BundleRoundTrip) {
  torch::manual_seed(8);
  BundleConfig cfg{tiny(), {8, 1, 4, 1, 5, 2, 4}, tiny(), true};
  auto bundle = ModelBundle::build(cfg);
  {
    torch::NoGradGuard ng;
    for (auto& p : bundle.res->parameters()) p.add_(0.01);
  }
  const auto file = std::filesystem::temp_directory_path() / "tsse_nets_ckpt" / "bundle.pt";
  save_bundle(file, bundle);
  auto loaded = load_bundle(file);
  EXPECT_EQ(loaded.cfg.sep, cfg.sep);
  auto a = bundle.res->named_parameters(), b = loaded.res->named_parameters();
  for (const auto& p : a) EXPECT_TRUE(torch::equal(p.value(), b[p.key()])) << p.key();
  ASSERT_TRUE(loaded.res_finetuned);
  EXPECT_EQ(read_checkpoint_meta(file)["kind"], "bundle");
  std::filesystem::remove_all(file.parent_path());
}

TEST(Checkpoint, Errors) {
  EXPECT_EQ(kind_of([] { load_bundle("/nonexistent/bundle.pt"); }), ErrorKind::kConfiguration);
  const auto dir = std::filesystem::temp_directory_path() / "tsse_nets_ckpt2";
  TFGridNet a(tiny(), 2, 2), b(GridNetConfig{8, 2, 4, 1, 6, 2, 2}, 2, 2);
  save_modules(dir / "a.pt", {{"net", a.get()}}, {{"kind", "test"}});
  EXPECT_EQ(kind_of([&] { load_modules(dir / "a.pt", {{"other", a.get()}}); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([&] { load_modules(dir / "a.pt", {{"net", b.get()}}); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([&] { load_bundle(dir / "a.pt"); }), ErrorKind::kConfiguration);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tsse
