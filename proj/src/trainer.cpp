// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tsse/trainer.hpp"

#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <regex>
#include <sstream>
#include <thread>

#include "tsse/error.hpp"
#include "tsse/log.hpp"
#include "tsse/pipeline.hpp"
#include "tsse/stft.hpp"
#include "tsse/wav_io.hpp"

namespace tsse {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Schedules

TrainSchedule TrainSchedule::preset(const std::string& name) {
  if (name == "fill") return {6, 2.0, 50000, 5000, 1e-6, 1e-3};
  if (name == "sep") return {1, 4.0, 200000, 20000, 1e-6, 1e-3};
  if (name == "maft") return {1, 4.0, 5000, 1500, 1e-6, 1e-4};
  if (name == "res") return {6, 2.0, 100000, 10000, 1e-6, 5e-4};
  if (name == "saft_jft") return {6, 2.0, 25000, 2500, 1e-6, 1e-4};
  throw Error(ErrorKind::kConfiguration, "unknown schedule preset '" + name + "'");
}

const std::vector<std::string>& TrainSchedule::preset_names() {
  static const std::vector<std::string> names = {"fill", "sep", "maft", "res", "saft_jft"};
  return names;
}

TrainSchedule TrainSchedule::scaled(double divisor) const {
  TSSE_CHECK(divisor > 0.0 && std::isfinite(divisor), ErrorKind::kConfiguration, "scale divisor must be positive");
  TrainSchedule s = *this;
  s.total_steps = std::max<int64_t>(1, std::llround(total_steps / divisor));
  s.warmup_steps = std::min<int64_t>(std::llround(warmup_steps / divisor), s.total_steps - 1);
  return s;
}

void TrainSchedule::validate() const {
  TSSE_CHECK(batch_per_device > 0 && utt_len_s > 0.0, ErrorKind::kConfiguration,
             "batch size and utterance length must be positive");
  TSSE_CHECK(total_steps > 0 && warmup_steps >= 0 && warmup_steps < total_steps, ErrorKind::kConfiguration,
             "schedule needs 0 <= warmup_steps < total_steps");
  TSSE_CHECK(min_lr > 0.0 && min_lr <= max_lr, ErrorKind::kConfiguration, "schedule needs 0 < min_lr <= max_lr");
}

nlohmann::json to_json(const TrainSchedule& s) {
  return {{"batch_per_device", s.batch_per_device}, {"utt_len_s", s.utt_len_s}, {"total_steps", s.total_steps},
          {"warmup_steps", s.warmup_steps},         {"min_lr", s.min_lr},       {"max_lr", s.max_lr}};
}

TrainSchedule schedule_from_json(const nlohmann::json& j) {
  if (j.is_string()) return TrainSchedule::preset(j.get<std::string>());
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "schedule must be a preset name or an object");
  TrainSchedule s;
  if (j.contains("preset")) s = TrainSchedule::preset(j.at("preset").get<std::string>());
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    TSSE_CHECK(v.is_number(), ErrorKind::kConfiguration, "schedule." + key + " must be a number");
    if (key == "batch_per_device") s.batch_per_device = v.get<int>();
    else if (key == "utt_len_s") s.utt_len_s = v.get<double>();
    else if (key == "total_steps") s.total_steps = v.get<int64_t>();
    else if (key == "warmup_steps") s.warmup_steps = v.get<int64_t>();
    else if (key == "min_lr") s.min_lr = v.get<double>();
    else if (key == "max_lr") s.max_lr = v.get<double>();
    else throw Error(ErrorKind::kConfiguration, "unknown schedule key '" + key + "'");
  }
  s.validate();
  return s;
}

double lr_at(int64_t step, const TrainSchedule& s) {
  TSSE_CHECK(step >= 0 && step <= s.total_steps, ErrorKind::kInvalidArgument,
             "step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  if (step < s.warmup_steps)
    return std::lerp(s.min_lr, s.max_lr, static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
  return std::lerp(s.min_lr, s.max_lr, 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

// ---------------------------------------------------------------------------
// Phases and configs

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kBase: return "base";
    case Phase::kMaft: return "maft";
    case Phase::kSaft: return "saft";
    case Phase::kJft: return "jft";
  }
  return "unknown";
}

Phase phase_from_string(std::string_view name) {
  for (Phase p : {Phase::kBase, Phase::kMaft, Phase::kSaft, Phase::kJft})
    if (to_string(p) == name) return p;
  throw Error(ErrorKind::kConfiguration, "unknown training phase '" + std::string(name) + "'");
}

DataSource data_source(Phase p) {
  return p == Phase::kSaft || p == Phase::kJft ? DataSource::kPreviousStageOutput : DataSource::kSimulated;
}

void OptimizerConfig::validate() const {
  TSSE_CHECK(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && weight_decay >= 0.0,
             ErrorKind::kConfiguration, "optimizer betas must be in [0, 1) and weight decay non-negative");
}

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"beta1", c.beta1}, {"beta2", c.beta2}, {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "optimizer settings must be an object");
  OptimizerConfig c;
  for (const auto& [key, v] : j.items()) {
    TSSE_CHECK(v.is_number(), ErrorKind::kConfiguration, "optimizer." + key + " must be a number");
    if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "grad_clip") c.grad_clip = v.get<double>();
    else throw Error(ErrorKind::kConfiguration, "unknown optimizer key '" + key + "'");
  }
  c.validate();
  return c;
}

StageNetKind net_kind(Stage stage) {
  switch (stage) {
    case Stage::kFill: return StageNetKind::kFill;
    case Stage::kSep: return StageNetKind::kSep;
    case Stage::kRes: return StageNetKind::kRes;
  }
  return StageNetKind::kSep;
}

TrainConfig TrainConfig::defaults(Stage stage, Phase phase) {
  TrainConfig c;
  c.stage = stage;
  c.phase = phase;
  switch (phase) {
    case Phase::kBase: c.schedule = TrainSchedule::preset(std::string(to_string(stage))); break;
    case Phase::kMaft: c.schedule = TrainSchedule::preset("maft"); break;
    default: c.schedule = TrainSchedule::preset("saft_jft"); break;
  }
  c.net = stage == Stage::kSep ? GridNetConfig::large() : GridNetConfig::small();
  c.disc = DiscriminatorConfig::for_stage(net_kind(stage));
  if (phase == Phase::kJft && !c.disc.use_mpd && !c.disc.use_mrd && !c.disc.use_mbd)
    c.disc = DiscriminatorConfig::for_stage(StageNetKind::kRes);
  c.recipe = DistortionRecipe::defaults(stage);
  if (phase == Phase::kMaft || phase == Phase::kJft) c.metric_terms = maft_terms(3);
  return c;
}

bool TrainConfig::adversarial() const {
  if (phase == Phase::kJft) return true;
  if (phase == Phase::kMaft) return false;
  return stage != Stage::kSep;
}

void TrainConfig::validate() const {
  schedule.validate();
  effective_schedule().validate();
  try {
    net.validate();
    recipe.validate();
    weights.validate();
    if (adversarial()) disc.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  optimizer.validate();
  TSSE_CHECK(recipe.stage == stage, ErrorKind::kConfiguration, "recipe stage differs from the training stage");
  TSSE_CHECK(!adversarial() || disc.use_mpd || disc.use_mrd || disc.use_mbd, ErrorKind::kConfiguration,
             "adversarial training needs at least one discriminator");
  TSSE_CHECK(!(stage == Stage::kFill && data_source(phase) == DataSource::kPreviousStageOutput),
             ErrorKind::kConfiguration, "the fill stage has no previous stage to fine-tune on");
  TSSE_CHECK(checkpoint_every >= 0 && validate_every >= 0 && validation_size >= 0, ErrorKind::kConfiguration,
             "checkpoint/validation intervals must be non-negative");
  TSSE_CHECK(dtype == torch::kFloat32 || dtype == torch::kFloat64, ErrorKind::kConfiguration,
             "dtype must be float32 or float64");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json terms = nlohmann::json::array();
  for (auto t : c.metric_terms) terms.push_back(to_string(t));
  return {{"stage", std::string(to_string(c.stage))},
          {"phase", std::string(to_string(c.phase))},
          {"schedule", to_json(c.schedule)},
          {"scale_divisor", c.scale_divisor},
          {"net", to_json(c.net)},
          {"disc", to_json(c.disc)},
          {"recipe", to_json(c.recipe)},
          {"weights", to_json(c.weights)},
          {"metric_terms", terms},
          {"optimizer", to_json(c.optimizer)},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"validate_every", c.validate_every},
          {"validation_size", c.validation_size},
          {"fixed_pairs", c.fixed_pairs},
          {"dtype", c.dtype == torch::kFloat64 ? "float64" : "float32"}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TSSE_CHECK(j.is_object(), ErrorKind::kConfiguration, "training config must be an object");
  auto str = [&](const char* key, const char* fallback) {
    if (!j.contains(key)) return std::string(fallback);
    TSSE_CHECK(j.at(key).is_string(), ErrorKind::kConfiguration, std::string(key) + " must be a string");
    return j.at(key).get<std::string>();
  };
  Stage stage;
  try {
    stage = stage_from_string(str("stage", "sep"));
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  TrainConfig c = TrainConfig::defaults(stage, phase_from_string(str("phase", "base")));
  auto integer = [](const nlohmann::json& v, const std::string& key) {
    TSSE_CHECK(v.is_number_integer() && v.get<int64_t>() >= 0, ErrorKind::kConfiguration,
               key + " must be a non-negative integer");
    return v.get<int64_t>();
  };
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "stage" || key == "phase") continue;
      if (key == "schedule") c.schedule = schedule_from_json(v);
      else if (key == "scale_divisor") {
        TSSE_CHECK(v.is_number(), ErrorKind::kConfiguration, "scale_divisor must be a number");
        c.scale_divisor = v.get<double>();
      } else if (key == "net") c.net = gridnet_config_from_json(v);
      else if (key == "disc") c.disc = discriminator_config_from_json(v);
      else if (key == "recipe") c.recipe = recipe_from_json(v);
      else if (key == "weights") c.weights = loss_weights_from_json(v);
      else if (key == "metric_terms") {
        c.metric_terms.clear();
        if (v.is_number_integer()) {
          c.metric_terms = maft_terms(v.get<int>());
        } else {
          TSSE_CHECK(v.is_array(), ErrorKind::kConfiguration, "metric_terms must be a list or a MAFT version");
          for (const auto& t : v) c.metric_terms.insert(metric_term_from_string(t.get<std::string>()));
        }
      } else if (key == "optimizer") c.optimizer = optimizer_config_from_json(v);
      else if (key == "seed") c.seed = static_cast<uint64_t>(integer(v, key));
      else if (key == "checkpoint_every") c.checkpoint_every = integer(v, key);
      else if (key == "validate_every") c.validate_every = integer(v, key);
      else if (key == "validation_size") c.validation_size = static_cast<int>(integer(v, key));
      else if (key == "fixed_pairs") {
        TSSE_CHECK(v.is_boolean(), ErrorKind::kConfiguration, "fixed_pairs must be a boolean");
        c.fixed_pairs = v.get<bool>();
      } else if (key == "dtype") {
        const auto d = v.get<std::string>();
        TSSE_CHECK(d == "float32" || d == "float64", ErrorKind::kConfiguration, "dtype must be float32 or float64");
        c.dtype = d == "float64" ? torch::kFloat64 : torch::kFloat32;
      } else {
        throw Error(ErrorKind::kConfiguration, "unknown training key '" + key + "'");
      }
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfiguration) throw;
    throw Error(ErrorKind::kConfiguration, e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfiguration, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Data

Waveform PreviousStages::apply(const Waveform& wav) const {
  Waveform x = wav;
  if (fill) x = run_stage_net(fill, x, x.fs);
  if (sep) x = run_stage_net(sep, x, x.fs);
  return x;
}

DataFeed::DataFeed(const TrainConfig& cfg, std::vector<Waveform> clean, SimulationResources resources,
                   PreviousStages previous)
    : cfg_(cfg), resources_(std::move(resources)), previous_(std::move(previous)), fs_(stage_rate(cfg.stage)) {
  TSSE_CHECK(!clean.empty(), ErrorKind::kConfiguration, "training needs at least one clean utterance");
  TSSE_CHECK(data_source(cfg.phase) == DataSource::kSimulated || !previous_.empty(), ErrorKind::kConfiguration,
             "fine-tuning on previous-stage outputs needs the frozen earlier stages");
  crop_ = std::llround(cfg.schedule.utt_len_s * fs_);
  clean_.reserve(clean.size());
  for (auto& c : clean) clean_.push_back(conform_to_stage_rate(c, cfg.stage));
  if (cfg.fixed_pairs) {
    Rng r = Rng(cfg.seed).fork("fixed");
    for (const auto& c : clean_) fixed_.push_back(example(c, r));
  }
}

Waveform DataFeed::crop(const Waveform& clean, Rng& rng) const {
  const int64_t n = static_cast<int64_t>(clean.size());
  for (int attempt = 0; attempt < 8; ++attempt) {
    const int64_t off = n > crop_ ? rng.integer(0, n - crop_) : 0;
    std::vector<double> out(static_cast<std::size_t>(crop_), 0.0);
    std::copy_n(clean.samples.begin() + off, std::min(crop_, n), out.begin());
    if (energy(out) > 0.0) return {std::move(out), clean.fs};
  }
  throw Error(ErrorKind::kDegenerateInput, "could not draw a non-silent training crop");
}

TrainExample DataFeed::example(const Waveform& clean, Rng& rng) const {
  TrainExample ex;
  ex.clean = crop(clean, rng);
  ex.pair = simulate_pair(ex.clean, cfg_.recipe, rng, resources_);
  ex.input = previous_.empty() || data_source(cfg_.phase) == DataSource::kSimulated ? ex.pair.input
                                                                                     : previous_.apply(ex.pair.input);
  return ex;
}

TrainBatch DataFeed::collate(std::vector<TrainExample> examples) const {
  TrainBatch b;
  b.fs = fs_;
  std::vector<torch::Tensor> in, tg;
  for (const auto& ex : examples) {
    in.push_back(to_tensor(ex.input, cfg_.dtype));
    tg.push_back(to_tensor(ex.pair.target, cfg_.dtype));
  }
  b.input = torch::stack(in);
  b.target = torch::stack(tg);
  b.examples = std::move(examples);
  return b;
}

TrainBatch DataFeed::batch(Rng& rng) const {
  std::vector<TrainExample> ex;
  const int n = cfg_.schedule.batch_per_device;
  for (int i = 0; i < n; ++i) {
    if (!fixed_.empty()) {
      ex.push_back(fixed_[static_cast<std::size_t>(rng.integer(0, static_cast<int64_t>(fixed_.size()) - 1))]);
    } else {
      const auto& c = clean_[static_cast<std::size_t>(rng.integer(0, static_cast<int64_t>(clean_.size()) - 1))];
      ex.push_back(example(c, rng));
    }
  }
  return collate(std::move(ex));
}

std::vector<TrainExample> DataFeed::validation_set(uint64_t seed, int n) const {
  Rng r = Rng(seed).fork("validation");
  std::vector<TrainExample> out;
  for (int i = 0; i < n; ++i) out.push_back(example(clean_[static_cast<std::size_t>(i) % clean_.size()], r));
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

torch::optim::AdamWOptions adamw(const OptimizerConfig& c, double lr) {
  return torch::optim::AdamWOptions(lr).betas({c.beta1, c.beta2}).weight_decay(c.weight_decay);
}

bool all_finite(const std::map<std::string, double>& values) {
  for (const auto& [k, v] : values)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Builds batches for consecutive steps on a worker thread, at most `depth`
/// ahead. Each batch depends only on its step index, so prefetching does not
/// change what is trained on.
class BatchPrefetcher {
 public:
  BatchPrefetcher(std::function<TrainBatch(int64_t)> make, int64_t first, int64_t end, std::size_t depth = 2)
      : make_(std::move(make)), depth_(depth), next_(first), end_(end) {
    worker_ = std::thread([this] { loop(); });
  }
  ~BatchPrefetcher() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  TrainBatch pop() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    auto b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  void loop() {
    for (;;) {
      int64_t step;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || queue_.size() < depth_; });
        if (stop_ || next_ >= end_) return;
        step = next_++;
      }
      try {
        auto b = make_(step);
        std::lock_guard lk(mu_);
        queue_.push_back(std::move(b));
      } catch (...) {
        std::lock_guard lk(mu_);
        error_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      cv_.notify_all();
    }
  }

  std::function<TrainBatch(int64_t)> make_;
  std::size_t depth_;
  int64_t next_, end_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<TrainBatch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

std::string step_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08lld.pt", static_cast<long long>(step));
  return buf;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg, std::vector<Waveform> clean, SimulationResources resources,
                 PreviousStages previous)
    : cfg_((cfg.validate(), std::move(cfg))),
      sched_(cfg_.effective_schedule()),
      feed_(cfg_, std::move(clean), std::move(resources), std::move(previous)),
      rng_(Rng(cfg_.seed).fork("train")) {
  torch::manual_seed(cfg_.seed);
  const auto kind = net_kind(cfg_.stage);
  gen_ = StageNet(kind, cfg_.net, default_zero_init(kind));
  gen_->to(cfg_.dtype);
  gen_opt_ = std::make_unique<torch::optim::AdamW>(gen_->parameters(), adamw(cfg_.optimizer, sched_.min_lr));
  if (cfg_.adversarial()) {
    TSSE_CHECK(feed_.crop_length() >= cfg_.disc.min_length(), ErrorKind::kConfiguration,
               "utterance length is shorter than the discriminators' minimum input");
    disc_ = Discriminator(cfg_.disc);
    disc_->to(cfg_.dtype);
    disc_opt_ = std::make_unique<torch::optim::AdamW>(disc_->parameters(), adamw(cfg_.optimizer, sched_.min_lr));
  }
}

TrainBatch Trainer::batch_for(int64_t step) const {
  Rng r = rng_.fork(static_cast<uint64_t>(step));
  return feed_.batch(r);
}

void Trainer::set_lr(double lr) {
  for (auto* opt : {gen_opt_.get(), disc_opt_.get()}) {
    if (!opt) continue;
    for (auto& g : opt->param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
  }
}

std::map<std::string, double> Trainer::discriminator_step(const TrainBatch& batch, const torch::Tensor& fake) {
  TSSE_CHECK(disc_, ErrorKind::kConfiguration, "this phase has no discriminator");
  disc_opt_->zero_grad();
  auto real = disc_->forward(batch.target);
  auto gen = disc_->forward(fake.detach());
  auto g = gan_losses(real, gen);
  g.adv_d.backward();
  if (cfg_.optimizer.grad_clip > 0) torch::nn::utils::clip_grad_norm_(disc_->parameters(), cfg_.optimizer.grad_clip);
  disc_opt_->step();
  return {{"d_adv", g.adv_d.item<double>()}};
}

LossReport Trainer::generator_objective(const TrainBatch& batch, const torch::Tensor& fake) {
  const auto stft_cfg = StftConfig::for_rate(batch.fs);
  if (!cfg_.adversarial()) {
    if (cfg_.phase == Phase::kMaft)
      return l2_metric_aware(batch.target, fake, batch.fs, stft_cfg, cfg_.metric_terms, cfg_.weights);
    return l1_composite(batch.target, fake, stft_cfg, cfg_.weights);
  }
  DiscriminatorOutput real;
  {
    torch::NoGradGuard ng;
    real = disc_->forward(batch.target);
  }
  auto params = disc_->parameters();
  for (auto& p : params) p.requires_grad_(false);
  DiscriminatorOutput gen;
  try {
    gen = disc_->forward(fake);
  } catch (...) {
    for (auto& p : params) p.requires_grad_(true);
    throw;
  }
  for (auto& p : params) p.requires_grad_(true);
  const auto gan = gan_losses(real, gen);
  if (cfg_.phase == Phase::kJft)
    return l3_jft(batch.target, fake, batch.fs, stft_cfg, cfg_.metric_terms, gan, cfg_.weights);
  return gan_generator_loss(batch.target, fake, batch.fs, gan, cfg_.weights);
}

torch::Tensor Trainer::validation_loss(const TrainBatch& batch, const torch::Tensor& fake) {
  const auto stft_cfg = StftConfig::for_rate(batch.fs);
  if (cfg_.phase == Phase::kMaft || cfg_.phase == Phase::kJft)
    return l2_metric_aware(batch.target, fake, batch.fs, stft_cfg, cfg_.metric_terms, cfg_.weights).total;
  if (cfg_.adversarial()) return mel_recon_loss(batch.target, fake, batch.fs);
  return l1_composite(batch.target, fake, stft_cfg, cfg_.weights).total;
}

void Trainer::abort_non_finite(const TrainBatch& batch, const std::map<std::string, double>& values) const {
  const fs::path dir = dump_dir_ / ("step_" + std::to_string(step_));
  fs::create_directories(dir);
  nlohmann::json meta = {{"step", step_}, {"stage", std::string(to_string(cfg_.stage))}};
  for (const auto& [k, v] : values) meta["values"][k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v));
  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    const auto& ex = batch.examples[i];
    write_wav(dir / ("input_" + std::to_string(i) + ".wav"), ex.input);
    write_wav(dir / ("target_" + std::to_string(i) + ".wav"), ex.pair.target);
    nlohmann::json draws = nlohmann::json::array();
    for (const auto& d : ex.pair.draws) draws.push_back(to_json(d));
    meta["examples"].push_back({{"draws", draws}});
  }
  std::ofstream(dir / "batch.json") << meta.dump(2) << "\n";
  throw Error(ErrorKind::kTraining,
              "non-finite loss at step " + std::to_string(step_) + "; batch dumped to " + dir.string());
}

StepReport Trainer::train_step(const TrainBatch& batch) {
  TSSE_CHECK(step_ < sched_.total_steps, ErrorKind::kTraining, "schedule already finished");
  const double lr = lr_at(step_, sched_);
  set_lr(lr);
  gen_->train();
  auto fake = gen_->forward(batch.input, batch.fs);
  std::map<std::string, double> values;
  if (cfg_.adversarial()) values = discriminator_step(batch, fake);
  auto report = generator_objective(batch, fake);
  for (const auto& [k, v] : report.flatten()) values[k] = v;
  if (!all_finite(values)) abort_non_finite(batch, values);

  gen_opt_->zero_grad();
  report.total.backward();
  if (cfg_.optimizer.grad_clip > 0) torch::nn::utils::clip_grad_norm_(gen_->parameters(), cfg_.optimizer.grad_clip);
  gen_opt_->step();
  ++step_;
  return {step_, lr, std::move(values)};
}

std::map<std::string, double> Trainer::validate(const std::vector<TrainExample>& set) {
  torch::NoGradGuard ng;
  double loss = 0.0, sdr = 0.0, in_sdr = 0.0;
  for (const auto& ex : set) {
    auto b = feed_.collate({ex});
    auto y = gen_->forward(b.input, b.fs);
    loss += validation_loss(b, y).item<double>();
    sdr += -10.0 * sdr_loss(b.target, y).item<double>();
    in_sdr += -10.0 * sdr_loss(b.target, b.input).item<double>();
  }
  const double n = std::max<std::size_t>(set.size(), 1);
  return {{"loss", loss / n}, {"sdr_db", sdr / n}, {"input_sdr_db", in_sdr / n}};
}

void Trainer::save_checkpoint(const fs::path& file) const {
  nlohmann::json meta = {{"kind", "stage"},
                         {"layout_version", kRunLayoutVersion},
                         {"stage", std::string(to_string(cfg_.stage))},
                         {"phase", std::string(to_string(cfg_.phase))},
                         {"step", step_},
                         {"rng_state", rng_.state()},
                         {"net", to_json(cfg_.net)},
                         {"disc", disc_ ? to_json(cfg_.disc) : nlohmann::json()},
                         {"dtype", cfg_.dtype == torch::kFloat64 ? "float64" : "float32"},
                         {"config", to_json(cfg_)}};
  // serialisation needs mutable module pointers; nothing is modified
  auto& self = const_cast<Trainer&>(*this);
  NamedModules modules = {{"generator", self.gen_.get()}};
  NamedOptimizers optims = {{"generator", self.gen_opt_.get()}};
  if (disc_) {
    modules.emplace_back("discriminator", self.disc_.get());
    optims.emplace_back("discriminator", self.disc_opt_.get());
  }
  save_modules(file, modules, meta, optims);
}

void Trainer::load_checkpoint(const fs::path& file) {
  const auto meta = read_checkpoint_meta(file);
  TSSE_CHECK(meta.value("kind", "") == "stage" && meta.value("stage", "") == to_string(cfg_.stage) &&
                 meta.value("phase", "") == to_string(cfg_.phase),
             ErrorKind::kConfiguration, "checkpoint " + file.string() + " belongs to a different stage or phase");
  NamedModules modules = {{"generator", gen_.get()}};
  NamedOptimizers optims = {{"generator", gen_opt_.get()}};
  if (disc_) {
    modules.emplace_back("discriminator", disc_.get());
    optims.emplace_back("discriminator", disc_opt_.get());
  }
  load_modules(file, modules, optims);
  step_ = meta.at("step").get<int64_t>();
  rng_.set_state(meta.at("rng_state").get<std::string>());
}

void Trainer::init_from(const fs::path& checkpoint) {
  const auto meta = read_checkpoint_meta(checkpoint);
  TSSE_CHECK(meta.value("kind", "") == "stage" && meta.value("stage", "") == to_string(cfg_.stage),
             ErrorKind::kConfiguration, "checkpoint " + checkpoint.string() + " is not a " +
                                            std::string(to_string(cfg_.stage)) + " stage checkpoint");
  TSSE_CHECK(gridnet_config_from_json(meta.at("net")) == cfg_.net, ErrorKind::kConfiguration,
             "checkpoint network size differs from the configured one");
  NamedModules modules = {{"generator", gen_.get()}};
  if (disc_ && !meta.at("disc").is_null() && meta.at("disc") == to_json(cfg_.disc))
    modules.emplace_back("discriminator", disc_.get());
  load_modules(checkpoint, modules);
  gen_->to(cfg_.dtype);
}

TrainResult Trainer::run(const fs::path& out_dir, bool resume, std::optional<int64_t> stop_after) {
  fs::create_directories(out_dir / "checkpoints");
  dump_dir_ = out_dir / "nan_dump";
  std::ofstream(out_dir / "config.json") << to_json(cfg_).dump(2) << "\n";
  const fs::path metrics = out_dir / "metrics.jsonl";

  std::vector<std::string> kept;
  if (resume) {
    if (auto ck = latest_checkpoint(out_dir)) {
      load_checkpoint(*ck);
      std::ifstream in(metrics);
      for (std::string line; std::getline(in, line);)
        if (!line.empty() && nlohmann::json::parse(line).at("step").get<int64_t>() <= step_) kept.push_back(line);
      log::info() << "resuming " << to_string(cfg_.stage) << " from step " << step_;
    }
  }
  {
    std::ofstream out(metrics, std::ios::trunc);
    for (const auto& l : kept) out << l << "\n";
  }
  std::ofstream log_out(metrics, std::ios::app);

  const auto val_set = feed_.validation_set(cfg_.seed, cfg_.validation_size);
  const int64_t every = cfg_.validate_every > 0 ? cfg_.validate_every : std::max<int64_t>(1, sched_.total_steps / 20);
  const int64_t end = std::min(sched_.total_steps, stop_after.value_or(sched_.total_steps));

  TrainResult result;
  fs::path last;
  BatchPrefetcher prefetch([this](int64_t k) { return batch_for(k); }, step_, end);
  while (step_ < end) {
    const auto batch = prefetch.pop();
    auto rep = train_step(batch);
    log_out << nlohmann::json{{"type", "train"}, {"step", rep.step}, {"lr", rep.lr}, {"loss", rep.values}}.dump()
            << "\n";
    result.history.push_back(rep);
    ++result.steps_run;
    if (!val_set.empty() && (step_ % every == 0 || step_ == sched_.total_steps)) {
      nlohmann::json rec = {{"type", "val"}, {"step", step_}, {"metrics", validate(val_set)}};
      log_out << rec.dump() << "\n";
      result.validation.push_back(rec);
    }
    log_out.flush();
    if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
      last = out_dir / "checkpoints" / step_name(step_);
      save_checkpoint(last);
    }
  }
  const fs::path here = out_dir / "checkpoints" / step_name(step_);
  if (last != here) save_checkpoint(here);
  result.final_checkpoint = here;
  if (step_ == sched_.total_steps) {
    fs::copy_file(here, out_dir / "checkpoints" / "final.pt", fs::copy_options::overwrite_existing);
    result.final_checkpoint = out_dir / "checkpoints" / "final.pt";
  }
  return result;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(step_(\d{8})\.pt)");
  std::optional<fs::path> best;
  long long best_step = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (std::regex_match(name, m, pattern) && std::stoll(m[1]) > best_step) {
      best_step = std::stoll(m[1]);
      best = e.path();
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

TrainResult train_stage(const TrainConfig& cfg, const std::vector<Waveform>& clean, const fs::path& out_dir,
                        const SimulationResources& resources, bool resume) {
  TSSE_CHECK(cfg.phase == Phase::kBase, ErrorKind::kConfiguration,
             "train_stage runs base training; use finetune for " + std::string(to_string(cfg.phase)));
  Trainer t(cfg, clean, resources);
  return t.run(out_dir, resume);
}

StageNet load_stage_net(const fs::path& checkpoint) {
  const auto meta = read_checkpoint_meta(checkpoint);
  TSSE_CHECK(meta.value("kind", "") == "stage", ErrorKind::kConfiguration,
             checkpoint.string() + " is not a stage checkpoint");
  Stage stage;
  try {
    stage = stage_from_string(meta.at("stage").get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
  StageNet net(net_kind(stage), gridnet_config_from_json(meta.at("net")), false);
  load_modules(checkpoint, {{"generator", net.get()}});
  if (meta.value("dtype", "float32") == "float64") net->to(torch::kFloat64);
  net->eval();
  return net;
}

TrainResult finetune(const TrainConfig& cfg, const fs::path& base_checkpoint, const std::vector<Waveform>& clean,
                     const fs::path& out_dir, const std::map<Stage, fs::path>& previous,
                     const SimulationResources& resources) {
  TSSE_CHECK(cfg.phase != Phase::kBase, ErrorKind::kConfiguration, "finetune needs a maft, saft or jft phase");
  TSSE_CHECK(fs::exists(base_checkpoint), ErrorKind::kConfiguration,
             "base checkpoint not found: " + base_checkpoint.string());
  PreviousStages prev;
  if (data_source(cfg.phase) == DataSource::kPreviousStageOutput) {
    auto need = [&](Stage s) {
      auto it = previous.find(s);
      TSSE_CHECK(it != previous.end() && fs::exists(it->second), ErrorKind::kConfiguration,
                 std::string(to_string(cfg.phase)) + " needs the " + std::string(to_string(s)) +
                     " stage checkpoint");
      auto net = load_stage_net(it->second);
      TSSE_CHECK(net->kind() == net_kind(s), ErrorKind::kConfiguration,
                 it->second.string() + " is not a " + std::string(to_string(s)) + " checkpoint");
      return net;
    };
    prev.fill = need(Stage::kFill);
    if (cfg.stage == Stage::kRes) prev.sep = need(Stage::kSep);
  }
  Trainer t(cfg, clean, resources, prev);
  t.init_from(base_checkpoint);
  return t.run(out_dir);
}

ModelBundle assemble_bundle(const std::map<std::string, fs::path>& checkpoints) {
  for (const char* key : {"fill", "sep", "res"})
    TSSE_CHECK(checkpoints.count(key), ErrorKind::kConfiguration, std::string("bundle needs a ") + key + " checkpoint");
  for (const auto& [key, path] : checkpoints)
    TSSE_CHECK(key == "fill" || key == "sep" || key == "res" || key == "res_finetuned", ErrorKind::kConfiguration,
               "unknown bundle slot '" + key + "'");
  ModelBundle b;
  auto load = [&](const std::string& key, StageNetKind kind) {
    auto net = load_stage_net(checkpoints.at(key));
    TSSE_CHECK(net->kind() == kind, ErrorKind::kConfiguration, "checkpoint for '" + key + "' has the wrong stage");
    return net;
  };
  b.fill = load("fill", StageNetKind::kFill);
  b.sep = load("sep", StageNetKind::kSep);
  b.res = load("res", StageNetKind::kRes);
  if (checkpoints.count("res_finetuned")) b.res_finetuned = load("res_finetuned", StageNetKind::kRes);
  b.cfg = {b.fill->config(), b.sep->config(), b.res->config(), static_cast<bool>(b.res_finetuned)};
  return b;
}

}  // namespace tsse
