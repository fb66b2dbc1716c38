// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsse/audio.hpp"
#include "tsse/degrade.hpp"
#include "tsse/nets.hpp"

namespace tsse {

/// Which restoration net the last stage uses.
enum class ResRoute { kBase, kFinetuned };
std::string_view to_string(ResRoute route);

/// One utterance through a stage net in the net's dtype, without autograd.
Waveform run_stage_net(StageNet net, const Waveform& wav, int fs);

// Stage runners. Each takes and returns a waveform at the caller's rate and
// length; the nets run in their own dtype without autograd.
Waveform run_fill(const Waveform& wav, const ModelBundle& bundle);
Waveform run_sep(const Waveform& wav, const ModelBundle& bundle);
/// Resamples to 48 kHz, applies the restoration net (which carries its own
/// skip connection) and resamples back.
Waveform run_res(const Waveform& wav, const ModelBundle& bundle, ResRoute route = ResRoute::kBase);

struct BwaiConfig {
  double threshold_db = 35.0;      // margin below the 1-3 kHz reference level
  double nyquist_fraction = 0.85;  // band-limited when cutoff < fraction * fs/2
  double band_hz = 250.0;          // analysis band width
  double min_duration_s = 0.5;

  void validate() const;
};

nlohmann::json to_json(const BwaiConfig& cfg);
BwaiConfig bwai_config_from_json(const nlohmann::json& j);

struct BandwidthEstimate {
  double effective_cutoff_hz = 0.0;
  bool is_band_limited = false;
  double threshold_db = 0.0;
};

nlohmann::json to_json(const BandwidthEstimate& est);

/// Long-term spectrum in `band_hz` bands; the cutoff is the upper edge of the
/// highest band whose mean power lies within `threshold_db` of the mean power
/// of the 1-3 kHz reference band. Silent input reports fullband.
BandwidthEstimate detect_bandwidth_limited(const Waveform& wav, const BwaiConfig& cfg = {});

inline const std::set<Stage> kAllStages = {Stage::kFill, Stage::kSep, Stage::kRes};

struct EnhanceRequest {
  Waveform wav;
  bool bwai_enabled = true;
  std::set<Stage> stage_mask = kAllStages;
  BwaiConfig bwai;
};

struct EnhanceResult {
  Waveform wav;
  ResRoute route = ResRoute::kBase;
  std::optional<BandwidthEstimate> bandwidth;  // set when BWAI ran
};

/// fill -> sep -> res over the masked stages, with the input peak-normalised
/// to 0.9 on entry and the original gain restored on exit. With BWAI on, the
/// restoration stage uses the fine-tuned net when the input is detected as
/// band-limited.
EnhanceResult enhance(const EnhanceRequest& req, const ModelBundle& bundle);

struct EnhanceOutcome {
  std::optional<EnhanceResult> result;
  std::string error;  // empty on success
};

/// Runs independent requests on up to `workers` threads; order is preserved.
std::vector<EnhanceOutcome> enhance_batch(const std::vector<EnhanceRequest>& reqs, const ModelBundle& bundle,
                                          int workers = 1);

}  // namespace tsse
