// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "loss_oracles.hpp"
#include "test_util.hpp"
#include "tsse/error.hpp"
#include "tsse/evalkit.hpp"
#include "tsse/wav_io.hpp"

namespace tsse {
namespace {

namespace fs = std::filesystem;
using testing::white_noise;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::kIo;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tsse_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Waveform tone(std::size_t n, int fs, int cycles, double amp, bool cosine = false) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = 2.0 * std::numbers::pi * cycles * static_cast<double>(i) / static_cast<double>(n);
    x[i] = amp * (cosine ? std::cos(ph) : std::sin(ph));
  }
  return {x, fs};
}

Waveform add(const Waveform& a, const Waveform& b) {
  Waveform out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.samples[i] += b.samples[i];
  return out;
}

TEST(Metrics, IdentityIsBestPossible) {
  Waveform ref(white_noise(16000, 1, 0.3), 16000);
  EXPECT_GE(eval_sdr(ref, ref), 80.0);
  EXPECT_EQ(eval_lsd(ref, ref), 0.0);
  EXPECT_EQ(eval_mcd(ref, ref), 0.0);
}

TEST(Metrics, OrthogonalNoiseAtTenToOne) {
  // integer-period tones at different frequencies are exactly orthogonal
  const auto s = tone(16000, 16000, 440, 100.0);
  const auto n = tone(16000, 16000, 1250, 100.0 / std::sqrt(10.0), true);
  EXPECT_NEAR(eval_sdr(s, add(s, n)), 10.0, 1e-9);
}

TEST(Metrics, MatchLossModuleAndOracle) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Waveform ref(white_noise(4000, seed, 0.3), 16000);
    Waveform est = add(ref, Waveform(white_noise(4000, 100 + seed, 0.1), 16000));
    const auto r = to_tensor(ref), e = to_tensor(est);
    const auto cfg = StftConfig::for_rate(16000);

    const double sdr = eval_sdr(ref, est);
    EXPECT_NEAR(sdr, -10.0 * sdr_loss(r, e).item<double>(), 1e-9 * std::abs(sdr));
    EXPECT_NEAR(sdr, -10.0 * oracle::sdr(ref.samples, est.samples), 1e-9 * std::abs(sdr));

    const double lsd = eval_lsd(ref, est);
    EXPECT_NEAR(lsd, lsd_loss(stft(r, cfg), stft(e, cfg)).item<double>(), 1e-9 * lsd);
    EXPECT_NEAR(lsd,
                oracle::lsd(oracle::stft(ref.samples, cfg.win_length, cfg.hop_length),
                            oracle::stft(est.samples, cfg.win_length, cfg.hop_length)),
                1e-9 * lsd);

    const double mcd = eval_mcd(ref, est);
    EXPECT_NEAR(mcd, mcd_aware_loss(r, e, 16000, cfg).item<double>(), 1e-9 * mcd);
  }
}

TEST(Metrics, LsdSymmetricSdrNot) {
  Waveform a(white_noise(8000, 3, 0.3), 16000);
  Waveform b = add(a, Waveform(white_noise(8000, 4, 0.2), 16000));
  EXPECT_NEAR(eval_lsd(a, b), eval_lsd(b, a), 1e-12);
  EXPECT_GT(std::abs(eval_sdr(a, b) - eval_sdr(b, a)), 0.1);
}

TEST(Metrics, SettingsChangeLsd) {
  Waveform a(white_noise(8000, 3, 0.3), 16000);
  Waveform b = add(a, Waveform(white_noise(8000, 4, 0.2), 16000));
  EvalSettings s;
  s.win_ms = 20.0;
  s.hop_ms = 10.0;
  EXPECT_NE(eval_lsd(a, b), eval_lsd(a, b, s));
  EXPECT_EQ(to_json(eval_settings_from_json(to_json(s))), to_json(s));
  EXPECT_EQ(kind_of([] { eval_settings_from_json({{"window", 3}}); }), ErrorKind::kConfiguration);
}

TEST(Metrics, MisalignedInputs) {
  Waveform a(white_noise(8000, 3), 16000), b(white_noise(8001, 3), 16000), c(white_noise(8000, 3), 8000);
  EXPECT_EQ(kind_of([&] { eval_sdr(a, b); }), ErrorKind::kShapeMismatch);
  EXPECT_EQ(kind_of([&] { eval_lsd(a, b); }), ErrorKind::kShapeMismatch);
  EXPECT_EQ(kind_of([&] { eval_mcd(a, c); }), ErrorKind::kShapeMismatch);
}

TEST(Metrics, CanonicalOrder) {
  EXPECT_EQ(canonical_metric_order({"lsd", "sdr", "pesq", "dnsmos"}),
            (std::vector<std::string>{"dnsmos", "pesq", "sdr", "lsd"}));
  EXPECT_EQ(kind_of([] { canonical_metric_order({"stoi"}); }), ErrorKind::kConfiguration);
}

// ---------------------------------------------------------------------------

struct Corpus {
  fs::path dir;
  std::vector<ManifestEntry> manifest;
};

/// Three references at two rates; `outputs` gets either copies or noisy copies.
Corpus make_corpus(const std::string& name, bool identity) {
  Corpus c;
  c.dir = scratch(name);
  fs::create_directories(c.dir / "ref");
  fs::create_directories(c.dir / "out");
  fs::create_directories(c.dir / "prov");
  const int rates[] = {16000, 16000, 48000};
  const char* kinds[] = {"noise", "reverb", "noise"};
  for (int i = 0; i < 3; ++i) {
    const std::string id = "u" + std::to_string(i);
    Waveform ref(white_noise(static_cast<std::size_t>(rates[i] / 2), 10 + i, 0.3), rates[i]);
    write_wav(c.dir / "ref" / (id + ".wav"), ref);
    Waveform out = identity ? ref : add(ref, Waveform(white_noise(ref.size(), 20 + i, 0.05 * (i + 1)), ref.fs));
    write_wav(c.dir / "out" / (id + ".wav"), out);
    std::ofstream(c.dir / "prov" / (id + ".json")) << nlohmann::json{{"draws", {{{"kind", kinds[i]}}}}}.dump();
    c.manifest.push_back({id, c.dir / "ref" / (id + ".wav"), rates[i]});
  }
  return c;
}

TEST(Corpus, EmptyManifest) {
  const auto dir = scratch("empty");
  auto r = eval_corpus({}, dir);
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(r.missing.empty());
  for (const auto& a : r.aggregates) {
    EXPECT_EQ(a.count, 0u);
    EXPECT_FALSE(a.mean);
  }
  write_report(r, dir / "report");
  EXPECT_TRUE(fs::exists(dir / "report" / "report.txt"));
}

TEST(Corpus, IdentitySystemScoresBest) {
  auto c = make_corpus("identity", true);
  auto r = eval_corpus(c.manifest, c.dir / "out");
  ASSERT_EQ(r.records.size(), 3u);
  for (const auto& rec : r.records) {
    // written as float32, read back identically
    EXPECT_GE(*rec.values.at("sdr"), 80.0);
    EXPECT_EQ(*rec.values.at("lsd"), 0.0);
    EXPECT_EQ(*rec.values.at("mcd"), 0.0);
  }
}

TEST(Corpus, MissingOutputsListedAndExcluded) {
  auto c = make_corpus("missing", false);
  fs::remove(c.dir / "out" / "u1.wav");
  auto r = eval_corpus(c.manifest, c.dir / "out");
  ASSERT_EQ(r.records.size(), 2u);
  ASSERT_EQ(r.missing.size(), 1u);
  EXPECT_EQ(r.missing[0].utt_id, "u1");
  for (const auto& a : r.aggregates)
    if (a.group == "all") EXPECT_EQ(a.count, 2u);
  EXPECT_NE(report_table(r).find("# missing u1"), std::string::npos);
}

TEST(Corpus, MisalignedOutputIsReported) {
  auto c = make_corpus("misaligned", false);
  write_wav(c.dir / "out" / "u2.wav", Waveform(white_noise(100, 1), 48000));
  auto r = eval_corpus(c.manifest, c.dir / "out");
  ASSERT_EQ(r.missing.size(), 1u);
  EXPECT_NE(r.missing[0].reason.find("lengths differ"), std::string::npos);
}

TEST(Corpus, AggregatesMatchHandComputation) {
  auto c = make_corpus("aggregates", false);
  EvalOptions opts;
  opts.provenance_dir = c.dir / "prov";
  auto r = eval_corpus(c.manifest, c.dir / "out", opts);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[1].tags, (std::vector<std::string>{"fs=16000", "reverb"}));

  // recompute from the files directly
  std::vector<double> sdr;
  for (const auto& e : c.manifest) sdr.push_back(eval_sdr(read_wav(e.path), read_wav(c.dir / "out" / (e.id + ".wav"))));
  auto find = [&](const std::string& metric, const std::string& group) {
    for (const auto& a : r.aggregates)
      if (a.metric == metric && a.group == group) return a;
    ADD_FAILURE() << metric << "/" << group;
    return MetricAggregate{};
  };
  const auto all = find("sdr", "all");
  EXPECT_EQ(all.count, 3u);
  EXPECT_NEAR(*all.mean, (sdr[0] + sdr[1] + sdr[2]) / 3.0, 1e-12);
  std::vector<double> sorted = sdr;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(*all.median, sorted[1]);
  const auto noise = find("sdr", "noise");
  EXPECT_EQ(noise.count, 2u);
  EXPECT_NEAR(*noise.mean, 0.5 * (sdr[0] + sdr[2]), 1e-12);
  EXPECT_EQ(*noise.median, 0.5 * (sdr[0] + sdr[2]));
  EXPECT_EQ(find("sdr", "fs=48000").count, 1u);
  EXPECT_EQ(*find("sdr", "fs=48000").mean, sdr[2]);
}

TEST(Corpus, ExternalScorersAndNotAvailable) {
  auto c = make_corpus("external", false);
  EvalOptions opts;
  opts.metrics = {"sdr", "pesq", "utmos", "dnsmos"};
  opts.scorers["pesq"] = {"test -f {ref} && test -f {est} && echo 'score: 3.25'"};
  opts.scorers["utmos"] = {"echo {fs} 4.0"};
  auto r = eval_corpus(c.manifest, c.dir / "out", opts);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.metrics, (std::vector<std::string>{"dnsmos", "utmos", "pesq", "sdr"}));
  for (const auto& rec : r.records) {
    EXPECT_EQ(*rec.values.at("pesq"), 3.25);
    EXPECT_EQ(*rec.values.at("utmos"), 4.0);
    EXPECT_FALSE(rec.values.at("dnsmos"));
  }
  const auto jsonl = report_jsonl(r);
  EXPECT_NE(jsonl.find("\"dnsmos\":\"n/a\""), std::string::npos);
  EXPECT_NE(report_table(r).find("n/a"), std::string::npos);

  opts.scorers["pesq"] = {"exit 3"};
  auto failed = eval_corpus(c.manifest, c.dir / "out", opts);
  EXPECT_EQ(failed.records.size(), 0u);
  EXPECT_EQ(failed.missing.size(), 3u);
}

TEST(Corpus, ReportIsDeterministic) {
  auto c = make_corpus("determinism", false);
  EvalOptions opts;
  opts.provenance_dir = c.dir / "prov";
  auto a = eval_corpus(c.manifest, c.dir / "out", opts);
  opts.workers = 3;
  auto b = eval_corpus(c.manifest, c.dir / "out", opts);
  EXPECT_EQ(report_jsonl(a), report_jsonl(b));
  EXPECT_EQ(report_table(a), report_table(b));
  write_report(a, c.dir / "r1");
  write_report(b, c.dir / "r2");
  std::ifstream f1(c.dir / "r1" / "report.jsonl"), f2(c.dir / "r2" / "report.jsonl");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(f1), {}), std::string(std::istreambuf_iterator<char>(f2), {}));
}

TEST(Corpus, TableLayout) {
  auto c = make_corpus("table", false);
  auto r = eval_corpus(c.manifest, c.dir / "out");
  const auto t = report_table(r);
  std::istringstream in(t);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# settings: ", 0), 0u);
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 2), "id");
  EXPECT_LT(line.find("sdr_db"), line.find("mcd"));
  EXPECT_LT(line.find("mcd"), line.find("lsd"));
  std::size_t width = 0;
  for (std::string row; std::getline(in, row);) {
    if (row.empty() || row[0] == '-') continue;
    if (!width) width = row.size();
    EXPECT_EQ(row.size(), width) << row;
  }
}

}  // namespace
}  // namespace tsse
