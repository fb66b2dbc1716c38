// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tsse/degrade.hpp"
#include "tsse/losses.hpp"
#include "tsse/nets.hpp"
#include "tsse/rng.hpp"

namespace tsse {

struct TrainSchedule {
  int batch_per_device = 1;
  double utt_len_s = 4.0;
  int64_t total_steps = 1;
  int64_t warmup_steps = 0;
  double min_lr = 1e-6;
  double max_lr = 1e-3;

  /// fill, sep, maft, res, saft_jft
  static TrainSchedule preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
  /// Steps divided by `divisor` (rounded, at least one step, warm-up kept
  /// strictly shorter than the run); batch, length and rates unchanged.
  TrainSchedule scaled(double divisor) const;
  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

nlohmann::json to_json(const TrainSchedule& s);
/// Accepts a preset name or an object (optionally {"preset": name, ...overrides}).
TrainSchedule schedule_from_json(const nlohmann::json& j);

/// Linear warm-up from min_lr to max_lr over [0, warmup], cosine annealing
/// back to min_lr over [warmup, total]. Endpoints are exact.
double lr_at(int64_t step, const TrainSchedule& sched);

enum class Phase { kBase, kMaft, kSaft, kJft };
std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view name);

enum class DataSource { kSimulated, kPreviousStageOutput };
/// saft and jft train on previous-stage outputs; base and maft on simulated pairs.
DataSource data_source(Phase p);

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-2;
  double grad_clip = 5.0;  // global norm, <= 0 disables

  void validate() const;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

struct TrainConfig {
  Stage stage = Stage::kSep;
  Phase phase = Phase::kBase;
  TrainSchedule schedule = TrainSchedule::preset("sep");
  double scale_divisor = 1.0;  // applied to the schedule at run time
  GridNetConfig net = GridNetConfig::large();
  DiscriminatorConfig disc = DiscriminatorConfig::for_stage(StageNetKind::kSep);
  DistortionRecipe recipe = DistortionRecipe::defaults(Stage::kSep);
  LossWeights weights;
  std::set<MetricTerm> metric_terms;  // maft / jft
  OptimizerConfig optimizer;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  int64_t validate_every = 0;    // 0 = every 5% of the run
  int validation_size = 32;
  bool fixed_pairs = false;  // simulate each clean utterance once and reuse it
  torch::Dtype dtype = torch::kFloat32;

  /// Stage-appropriate defaults: schedule preset, net size, discriminators
  /// and recipe (fine-tuning phases pick the maft / saft_jft schedules).
  static TrainConfig defaults(Stage stage, Phase phase = Phase::kBase);
  /// Whether generator steps alternate with discriminator steps.
  bool adversarial() const;
  TrainSchedule effective_schedule() const { return schedule.scaled(scale_divisor); }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Starts from TrainConfig::defaults(stage, phase) and applies the keys
/// present; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

StageNetKind net_kind(Stage stage);

// ---------------------------------------------------------------------------
// Data

struct TrainExample {
  Waveform clean;  // crop at the stage rate
  SimulatedPair pair;
  Waveform input;  // pair.input, or the frozen previous stages' output for saft/jft
};

struct TrainBatch {
  int fs = 16000;
  torch::Tensor input;   // [B, N]
  torch::Tensor target;  // [B, N]
  std::vector<TrainExample> examples;
};

/// Frozen earlier stages used to build saft/jft inputs (fill, then sep).
struct PreviousStages {
  StageNet fill{nullptr};
  StageNet sep{nullptr};
  Waveform apply(const Waveform& wav) const;
  bool empty() const { return !fill && !sep; }
};

/// Crops clean utterances, simulates degradations and, for fine-tuning on
/// previous-stage outputs, runs the frozen earlier stages.
class DataFeed {
 public:
  DataFeed(const TrainConfig& cfg, std::vector<Waveform> clean, SimulationResources resources = {},
           PreviousStages previous = {});

  int fs() const { return fs_; }
  int64_t crop_length() const { return crop_; }
  TrainExample example(const Waveform& clean, Rng& rng) const;
  TrainBatch batch(Rng& rng) const;
  /// Fixed held-out set drawn from an independent stream of `seed`.
  std::vector<TrainExample> validation_set(uint64_t seed, int n) const;
  TrainBatch collate(std::vector<TrainExample> examples) const;

 private:
  Waveform crop(const Waveform& clean, Rng& rng) const;

  TrainConfig cfg_;
  std::vector<Waveform> clean_;
  SimulationResources resources_;
  PreviousStages previous_;
  int fs_;
  int64_t crop_;
  std::vector<TrainExample> fixed_;
};

// ---------------------------------------------------------------------------
// Training

struct StepReport {
  int64_t step = 0;
  double lr = 0.0;
  std::map<std::string, double> values;  // flattened generator / discriminator terms
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  int64_t steps_run = 0;
  std::vector<StepReport> history;       // steps run in this invocation
  std::vector<nlohmann::json> validation;  // validation records of this invocation
};

/// Directory layout written by the trainer (version 1):
///   config.json, metrics.jsonl, checkpoints/step_<8 digits>.pt, checkpoints/final.pt
inline constexpr int kRunLayoutVersion = 1;

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Waveform> clean, SimulationResources resources = {},
          PreviousStages previous = {});

  const TrainConfig& config() const { return cfg_; }
  StageNet& generator() { return gen_; }
  Discriminator& discriminator() { return disc_; }
  DataFeed& feed() { return feed_; }
  Rng& rng() { return rng_; }
  int64_t step() const { return step_; }
  /// Where a non-finite loss dumps its batch (run() uses <out_dir>/nan_dump).
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

  /// Loads generator (and discriminator when present and adversarial)
  /// weights from a stage checkpoint; optimizer state is not touched.
  void init_from(const std::filesystem::path& checkpoint);

  /// Training batch of a given step, drawn from a stream keyed by the step
  /// index (so resumed and prefetched runs see the same data).
  TrainBatch batch_for(int64_t step) const;

  /// One optimisation step at the schedule's lr for the current step.
  StepReport train_step(const TrainBatch& batch);
  /// Discriminator update only; generator output is detached.
  std::map<std::string, double> discriminator_step(const TrainBatch& batch, const torch::Tensor& fake);
  /// Generator objective for the current phase. Discriminator parameters are
  /// frozen while it is built, so its backward pass never reaches them.
  LossReport generator_objective(const TrainBatch& batch, const torch::Tensor& fake);

  /// Mean validation values over a fixed set: "loss", "sdr_db", "input_sdr_db".
  std::map<std::string, double> validate(const std::vector<TrainExample>& set);

  /// Trains until the schedule ends (or `stop_after` total steps), writing the
  /// run directory. With `resume`, continues from the newest checkpoint there.
  TrainResult run(const std::filesystem::path& out_dir, bool resume = false,
                  std::optional<int64_t> stop_after = std::nullopt);

  void save_checkpoint(const std::filesystem::path& file) const;
  void load_checkpoint(const std::filesystem::path& file);

 private:
  /// Non-adversarial objective used for validation.
  torch::Tensor validation_loss(const TrainBatch& batch, const torch::Tensor& fake);
  void set_lr(double lr);
  [[noreturn]] void abort_non_finite(const TrainBatch& batch, const std::map<std::string, double>& values) const;

  TrainConfig cfg_;
  TrainSchedule sched_;
  DataFeed feed_;
  Rng rng_;
  StageNet gen_{nullptr};
  Discriminator disc_{nullptr};
  std::unique_ptr<torch::optim::AdamW> gen_opt_;
  std::unique_ptr<torch::optim::AdamW> disc_opt_;
  int64_t step_ = 0;
  std::filesystem::path dump_dir_ = "nan_dump";
};

/// Base training of one stage on simulated data.
TrainResult train_stage(const TrainConfig& cfg, const std::vector<Waveform>& clean,
                        const std::filesystem::path& out_dir, const SimulationResources& resources = {},
                        bool resume = false);

/// MAFT / SAFT / JFT starting from a base stage checkpoint. For saft/jft the
/// frozen earlier stages are loaded from `previous` (stage checkpoints).
TrainResult finetune(const TrainConfig& cfg, const std::filesystem::path& base_checkpoint,
                     const std::vector<Waveform>& clean, const std::filesystem::path& out_dir,
                     const std::map<Stage, std::filesystem::path>& previous = {},
                     const SimulationResources& resources = {});

/// Builds the stage network recorded in a stage checkpoint and loads it.
StageNet load_stage_net(const std::filesystem::path& checkpoint);
/// Inference bundle from stage checkpoints (keys: fill, sep, res and
/// optionally res_finetuned).
ModelBundle assemble_bundle(const std::map<std::string, std::filesystem::path>& checkpoints);

/// Newest step checkpoint in a run directory, if any.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace tsse
