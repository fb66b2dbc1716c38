// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iomanip>
#include <regex>
#include <sstream>
#include <sys/wait.h>

#include "tsse/error.hpp"
#include "tsse/log.hpp"
#include "tsse/stft.hpp"
#include "tsse/wav_io.hpp"

namespace tsse {

namespace fs = std::filesystem;

void EvalSettings::validate() const {
  TSSE_CHECK(win_ms > 0.0 && hop_ms > 0.0 && hop_ms <= win_ms, ErrorKind::kConfiguration,
             "evaluation STFT needs 0 < hop_ms <= win_ms");
  TSSE_CHECK(mfcc.n_mels > 0 && mfcc.n_mfcc > 0 && mfcc.n_mfcc <= mfcc.n_mels, ErrorKind::kConfiguration,
             "evaluation MFCC needs 0 < n_mfcc <= n_mels");
}

nlohmann::json to_json(const EvalSettings& s) {
  return {{"win_ms", s.win_ms}, {"hop_ms", s.hop_ms}, {"n_mels", s.mfcc.n_mels}, {"n_mfcc", s.mfcc.n_mfcc}};
}

EvalSettings eval_settings_from_json(const nlohmann::json& j) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "evaluation settings must be an object");
  EvalSettings s;
  for (const auto& [key, v] : j.items()) {
    TSSE_CHECK(v.is_number(), ErrorKind::kConfiguration, "evaluation." + key + " must be a number");
    if (key == "win_ms") s.win_ms = v.get<double>();
    else if (key == "hop_ms") s.hop_ms = v.get<double>();
    else if (key == "n_mels") s.mfcc.n_mels = v.get<int>();
    else if (key == "n_mfcc") s.mfcc.n_mfcc = v.get<int>();
    else throw Error(ErrorKind::kConfiguration, "unknown evaluation key '" + key + "'");
  }
  s.validate();
  return s;
}

namespace {

void require_aligned(const Waveform& ref, const Waveform& est) {
  TSSE_CHECK(ref.fs == est.fs, ErrorKind::kShapeMismatch,
             "sampling rates differ: " + std::to_string(ref.fs) + " vs " + std::to_string(est.fs));
  TSSE_CHECK(ref.size() == est.size(), ErrorKind::kShapeMismatch,
             "lengths differ: " + std::to_string(ref.size()) + " vs " + std::to_string(est.size()));
}

}  // namespace

double eval_sdr(const Waveform& ref, const Waveform& est) {
  require_aligned(ref, est);
  torch::NoGradGuard ng;
  return -10.0 * sdr_loss(to_tensor(ref), to_tensor(est)).item<double>();
}

double eval_lsd(const Waveform& ref, const Waveform& est, const EvalSettings& s) {
  require_aligned(ref, est);
  torch::NoGradGuard ng;
  const auto cfg = s.stft_for(ref.fs);
  return lsd_loss(stft(to_tensor(ref), cfg), stft(to_tensor(est), cfg)).item<double>();
}

double eval_mcd(const Waveform& ref, const Waveform& est, const EvalSettings& s) {
  require_aligned(ref, est);
  torch::NoGradGuard ng;
  return mcd_aware_loss(to_tensor(ref), to_tensor(est), ref.fs, s.stft_for(ref.fs), s.mfcc).item<double>();
}

const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> m = {"dnsmos", "nisqa", "utmos", "pesq", "polqa", "sdr", "mcd", "lsd"};
  return m;
}

bool is_builtin_metric(const std::string& name) { return name == "sdr" || name == "mcd" || name == "lsd"; }

bool is_reference_free_metric(const std::string& name) {
  return name == "dnsmos" || name == "nisqa" || name == "utmos";
}

std::vector<std::string> canonical_metric_order(const std::vector<std::string>& metrics) {
  for (const auto& m : metrics)
    TSSE_CHECK(std::count(known_metrics().begin(), known_metrics().end(), m), ErrorKind::kConfiguration,
               "unknown metric '" + m + "'");
  std::vector<std::string> out;
  for (const auto& m : known_metrics())
    if (std::count(metrics.begin(), metrics.end(), m)) out.push_back(m);
  return out;
}

double ExternalScorer::operator()(const fs::path& est, const fs::path* ref, int fs) const {
  auto quote = [](const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
  };
  std::string cmd = command;
  auto sub = [&](const std::string& key, const std::string& value) {
    for (std::size_t p; (p = cmd.find(key)) != std::string::npos;) cmd.replace(p, key.size(), value);
  };
  sub("{est}", quote(est.string()));
  if (ref) sub("{ref}", quote(ref->string()));
  sub("{fs}", std::to_string(fs));

  FILE* pipe = popen(cmd.c_str(), "r");
  TSSE_CHECK(pipe, ErrorKind::kIo, "could not start scorer: " + cmd);
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  TSSE_CHECK(status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0, ErrorKind::kIo,
             "scorer failed: " + cmd);
  static const std::regex number(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");
  std::string last;
  for (std::sregex_iterator it(out.begin(), out.end(), number), end; it != end; ++it) last = it->str();
  TSSE_CHECK(!last.empty(), ErrorKind::kIo, "scorer printed no number: " + cmd);
  const double v = std::stod(last);
  TSSE_CHECK(std::isfinite(v), ErrorKind::kIo, "scorer returned a non-finite value: " + cmd);
  return v;
}

std::vector<std::string> condition_tags(const nlohmann::json& sidecar) {
  std::set<std::string> kinds;
  if (sidecar.contains("draws"))
    for (const auto& d : sidecar.at("draws")) kinds.insert(d.at("kind").get<std::string>());
  return {kinds.begin(), kinds.end()};
}

namespace {

struct Scored {
  std::optional<EvalRecord> record;
  std::optional<EvalFailure> failure;
};

Scored score_one(const ManifestEntry& e, const fs::path& output_dir, const EvalOptions& opts,
                 const std::vector<std::string>& metrics) {
  const fs::path est_path = output_dir / (e.id + ".wav");
  if (!fs::exists(est_path)) return {std::nullopt, EvalFailure{e.id, "missing output " + est_path.string()}};
  try {
    const Waveform ref = read_wav(e.path);
    const Waveform est = read_wav(est_path);
    require_aligned(ref, est);
    EvalRecord r;
    r.utt_id = e.id;
    r.fs = ref.fs;
    r.tags.push_back("fs=" + std::to_string(ref.fs));
    if (opts.provenance_dir) {
      const auto side = *opts.provenance_dir / (e.id + ".json");
      if (fs::exists(side)) {
        std::ifstream in(side);
        for (auto& t : condition_tags(nlohmann::json::parse(in))) r.tags.push_back(std::move(t));
      }
    }
    for (const auto& m : metrics) {
      if (m == "sdr") r.values[m] = eval_sdr(ref, est);
      else if (m == "lsd") r.values[m] = eval_lsd(ref, est, opts.settings);
      else if (m == "mcd") r.values[m] = eval_mcd(ref, est, opts.settings);
      else if (auto it = opts.scorers.find(m); it != opts.scorers.end())
        r.values[m] = it->second(est_path, is_reference_free_metric(m) ? nullptr : &e.path, ref.fs);
      else r.values[m] = std::nullopt;
      TSSE_CHECK(!r.values[m] || std::isfinite(*r.values[m]), ErrorKind::kDegenerateInput,
                 m + " is not finite for " + e.id);
    }
    return {std::move(r), std::nullopt};
  } catch (const Error& err) {
    return {std::nullopt, EvalFailure{e.id, err.what()}};
  } catch (const nlohmann::json::exception& err) {
    return {std::nullopt, EvalFailure{e.id, std::string("bad provenance sidecar: ") + err.what()}};
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<MetricAggregate> aggregate(const std::vector<EvalRecord>& records,
                                       const std::vector<std::string>& metrics) {
  std::set<std::string> tags;
  for (const auto& r : records) tags.insert(r.tags.begin(), r.tags.end());
  std::vector<std::string> groups{"all"};
  groups.insert(groups.end(), tags.begin(), tags.end());

  std::vector<MetricAggregate> out;
  for (const auto& g : groups) {
    for (const auto& m : metrics) {
      std::vector<double> v;
      for (const auto& r : records) {
        if (g != "all" && std::find(r.tags.begin(), r.tags.end(), g) == r.tags.end()) continue;
        auto it = r.values.find(m);
        if (it != r.values.end() && it->second) v.push_back(*it->second);
      }
      MetricAggregate a{m, g, v.size(), std::nullopt, std::nullopt};
      if (!v.empty()) {
        double sum = 0.0;
        for (double x : v) sum += x;
        a.mean = sum / static_cast<double>(v.size());
        a.median = median_of(v);
      }
      out.push_back(a);
    }
  }
  return out;
}

EvalReport eval_corpus(const std::vector<ManifestEntry>& manifest, const fs::path& output_dir,
                       const EvalOptions& opts) {
  opts.settings.validate();
  EvalReport rep;
  rep.settings = opts.settings;
  rep.metrics = canonical_metric_order(opts.metrics);
  TSSE_CHECK(!rep.metrics.empty(), ErrorKind::kConfiguration, "no metrics selected");

  std::vector<Scored> scored(manifest.size());
  const std::size_t workers = static_cast<std::size_t>(std::max(1, opts.workers));
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w)
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < manifest.size(); i += workers)
        scored[i] = score_one(manifest[i], output_dir, opts, rep.metrics);
    }));
  for (auto& j : jobs) j.get();

  for (auto& s : scored) {
    if (s.record) rep.records.push_back(std::move(*s.record));
    else rep.missing.push_back(std::move(*s.failure));
  }
  for (const auto& m : rep.missing) log::warn() << "evaluation skipped " << m.utt_id << ": " << m.reason;
  rep.aggregates = aggregate(rep.records, rep.metrics);
  return rep;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("n/a"); }

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << *v;
  return os.str();
}

}  // namespace

std::string report_jsonl(const EvalReport& r) {
  std::ostringstream os;
  os << nlohmann::json{{"type", "settings"}, {"settings", to_json(r.settings)}, {"metrics", r.metrics}}.dump() << "\n";
  for (const auto& rec : r.records) {
    nlohmann::json values = nlohmann::json::object();
    for (const auto& m : r.metrics) values[m] = opt_json(rec.values.at(m));
    os << nlohmann::json{{"type", "utterance"}, {"id", rec.utt_id}, {"fs", rec.fs}, {"tags", rec.tags},
                         {"values", values}}
              .dump()
       << "\n";
  }
  for (const auto& m : r.missing)
    os << nlohmann::json{{"type", "missing"}, {"id", m.utt_id}, {"reason", m.reason}}.dump() << "\n";
  for (const auto& a : r.aggregates)
    os << nlohmann::json{{"type", "aggregate"}, {"metric", a.metric}, {"group", a.group}, {"count", a.count},
                         {"mean", opt_json(a.mean)}, {"median", opt_json(a.median)}}
              .dump()
       << "\n";
  return os.str();
}

std::string report_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"id"};
  for (const auto& m : r.metrics) head.push_back(m == "sdr" ? "sdr_db" : m);
  rows.push_back(head);
  for (const auto& rec : r.records) {
    std::vector<std::string> row{rec.utt_id};
    for (const auto& m : r.metrics) row.push_back(fmt(rec.values.at(m)));
    rows.push_back(row);
  }
  for (const auto& stat : {"mean", "median"}) {
    std::map<std::string, std::vector<std::string>> by_group;
    std::vector<std::string> order;
    for (const auto& a : r.aggregates) {
      if (!by_group.count(a.group)) order.push_back(a.group);
      by_group[a.group].push_back(fmt(std::string(stat) == "mean" ? a.mean : a.median));
    }
    for (const auto& g : order) {
      std::vector<std::string> row{std::string(stat) + "[" + g + "]"};
      row.insert(row.end(), by_group[g].begin(), by_group[g].end());
      rows.push_back(row);
    }
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

  std::ostringstream os;
  os << "# settings: " << to_json(r.settings).dump() << "\n";
  os << "# utterances: " << r.records.size() << " scored, " << r.missing.size() << " missing\n";
  for (const auto& m : r.missing) os << "# missing " << m.utt_id << ": " << m.reason << "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c == 0) os << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
      else os << "  " << std::right << std::setw(static_cast<int>(width[c])) << rows[i][c];
    }
    os << "\n";
    if (i == 0 || i == r.records.size()) {
      std::size_t total = width[0];
      for (std::size_t c = 1; c < width.size(); ++c) total += width[c] + 2;
      os << std::string(total, '-') << "\n";
    }
  }
  return os.str();
}

void write_report(const EvalReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  auto put = [&](const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    TSSE_CHECK(out, ErrorKind::kIo, "cannot write " + file.string());
    out << text;
  };
  put(dir / "report.jsonl", report_jsonl(r));
  put(dir / "report.txt", report_table(r));
}

}  // namespace tsse
