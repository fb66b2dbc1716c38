// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsse/audio.hpp"
#include "tsse/losses.hpp"
#include "tsse/manifest.hpp"

namespace tsse {

/// Analysis settings shared by LSD and MCD. Recorded in every report header.
struct EvalSettings {
  double win_ms = 32.0;
  double hop_ms = 16.0;
  MfccConfig mfcc;

  StftConfig stft_for(int fs) const { return StftConfig::for_rate(fs, win_ms, hop_ms); }
  void validate() const;
};

nlohmann::json to_json(const EvalSettings& s);
EvalSettings eval_settings_from_json(const nlohmann::json& j);

/// 10 * (-sdr_loss), in dB. Asymmetric in its arguments.
double eval_sdr(const Waveform& ref, const Waveform& est);
/// lsd_loss on the settings' STFT. Symmetric.
double eval_lsd(const Waveform& ref, const Waveform& est, const EvalSettings& s = {});
/// mcd_aware_loss (MSE between MFCC matrices).
double eval_mcd(const Waveform& ref, const Waveform& est, const EvalSettings& s = {});

/// Metric columns in report order. Built-in: sdr, mcd, lsd. The rest run
/// through external scorer commands and read "n/a" when none is configured.
const std::vector<std::string>& known_metrics();
bool is_builtin_metric(const std::string& name);
/// Reference-free metrics get only the estimate.
bool is_reference_free_metric(const std::string& name);
/// Orders a metric selection like known_metrics(); unknown names throw kConfiguration.
std::vector<std::string> canonical_metric_order(const std::vector<std::string>& metrics);

/// Shell command template for an external scorer. Placeholders: {est},
/// {ref} (intrusive metrics only) and {fs}. The last number printed on
/// stdout is the score; a non-zero exit status is an error.
struct ExternalScorer {
  std::string command;
  double operator()(const std::filesystem::path& est, const std::filesystem::path* ref, int fs) const;
};

struct EvalOptions {
  std::vector<std::string> metrics{"sdr", "mcd", "lsd"};
  EvalSettings settings;
  std::map<std::string, ExternalScorer> scorers;  // by metric name
  /// Directory of per-utterance provenance sidecars (<id>.json) supplying
  /// distortion tags; optional.
  std::optional<std::filesystem::path> provenance_dir;
  int workers = 1;
};

struct EvalRecord {
  std::string utt_id;
  int fs = 0;
  std::vector<std::string> tags;                          // "fs=<rate>" plus applied distortion kinds
  std::map<std::string, std::optional<double>> values;  // nullopt = n/a
};

struct MetricAggregate {
  std::string metric;
  std::string group;  // "all" or a condition tag
  std::size_t count = 0;
  std::optional<double> mean;
  std::optional<double> median;
};

struct EvalFailure {
  std::string utt_id;
  std::string reason;
};

struct EvalReport {
  EvalSettings settings;
  std::vector<std::string> metrics;
  std::vector<EvalRecord> records;
  std::vector<EvalFailure> missing;  // excluded from aggregates
  std::vector<MetricAggregate> aggregates;
};

/// Scores `<output_dir>/<id>.wav` against every manifest entry.
EvalReport eval_corpus(const std::vector<ManifestEntry>& manifest, const std::filesystem::path& output_dir,
                       const EvalOptions& opts = {});
/// Mean / median per metric over all records and per condition tag.
std::vector<MetricAggregate> aggregate(const std::vector<EvalRecord>& records,
                                       const std::vector<std::string>& metrics);

/// Condition tags from a provenance sidecar (the "draws" array).
std::vector<std::string> condition_tags(const nlohmann::json& sidecar);

/// One JSON object per line: settings header, utterances, missing, aggregates.
std::string report_jsonl(const EvalReport& r);
/// Aligned-column text table with the settings in a header comment.
std::string report_table(const EvalReport& r);
/// Writes report.jsonl and report.txt into `dir`.
void write_report(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace tsse
