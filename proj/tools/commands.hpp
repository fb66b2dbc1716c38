// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsse/degrade.hpp"
#include "tsse/evalkit.hpp"
#include "tsse/nets.hpp"
#include "tsse/pipeline.hpp"
#include "tsse/trainer.hpp"
#include "tsse/wav_io.hpp"

namespace tsse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Default device, from TSSE_DEVICE. Only "cpu" is available in this build.
inline constexpr const char* kDeviceEnv = "TSSE_DEVICE";

struct Paths {
  std::optional<std::filesystem::path> clean_manifest;
  std::optional<std::filesystem::path> noise_manifest;
  std::optional<std::filesystem::path> rir_manifest;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> base_checkpoint;
  std::map<std::string, std::filesystem::path> checkpoints;  // fill, sep, res, res_finetuned
  std::optional<std::filesystem::path> reference_manifest;
  std::optional<std::filesystem::path> system_output_dir;
  std::optional<std::filesystem::path> provenance_dir;
};

struct SimulateSettings {
  Stage stage = Stage::kSep;
  DistortionRecipe recipe = DistortionRecipe::defaults(Stage::kSep);
  int pairs_per_utterance = 1;
  WavEncoding encoding = WavEncoding::kFloat32;
};

struct EnhanceSettings {
  bool bwai = true;
  std::set<Stage> stages = kAllStages;
  BwaiConfig bwai_config;
  int workers = 1;
  /// Randomly initialised nets of these sizes instead of checkpoints (smoke runs).
  std::optional<BundleConfig> untrained;
};

struct AuditSettings {
  BundleConfig bundle;  // S / L / S presets by default
  double duration_s = 4.0;
};

/// One experiment document: paths, per-command settings, seed and the
/// schedule scale divisor.
struct ExperimentConfig {
  uint64_t seed = 0;
  double scale_divisor = 1.0;
  Paths paths;
  SimulateSettings simulate;
  std::optional<TrainConfig> train;
  EnhanceSettings enhance;
  EvalOptions evaluate;
  AuditSettings audit;
};

/// Reads a JSON document (// and /* */ comments allowed) and applies
/// `key.sub=value` overrides; values parse as JSON, else as strings.
nlohmann::json load_document(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Validates the whole document, reporting every problem in one
/// configuration error.
ExperimentConfig parse_experiment(const nlohmann::json& doc);

/// Requires TSSE_DEVICE to be unset or "cpu".
void check_device();

// ---------------------------------------------------------------------------

struct SimulateSummary {
  std::size_t pairs = 0;
  std::vector<std::string> errors;  // one per unreadable source
};

/// Writes <out>/input/<id>.wav, <out>/target/<id>.wav, a provenance sidecar
/// <out>/provenance/<id>.json per pair and the manifests input.tsv / target.tsv.
SimulateSummary cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Rebuilds a simulated pair from a provenance sidecar and its clean source.
SimulatedPair replay_sidecar(const nlohmann::json& sidecar, const SimulationResources& res = {});

TrainResult cmd_train(const ExperimentConfig& cfg, bool resume = false);
TrainResult cmd_finetune(const ExperimentConfig& cfg);

struct EnhanceSummary {
  std::vector<std::pair<std::string, std::string>> done;  // output file, route
  std::vector<std::string> errors;
};

/// `in` is a WAV file or a directory of WAV files; `out` the matching file or directory.
EnhanceSummary cmd_enhance(const ExperimentConfig& cfg, const std::filesystem::path& in,
                           const std::filesystem::path& out);

EvalReport cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& reference_manifest,
                        const std::filesystem::path& system_output_dir);

/// Parameter counts per stage and MACs per second at 16 and 48 kHz.
nlohmann::json cmd_audit(const ExperimentConfig& cfg);

/// Whole command line; returns the process exit code.
int run(int argc, char** argv);

}  // namespace tsse::cli
