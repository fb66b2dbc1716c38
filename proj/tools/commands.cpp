// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tsse/error.hpp"
#include "tsse/log.hpp"
#include "tsse/manifest.hpp"
#include "tsse/wav_io.hpp"

namespace tsse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config documents

json load_document(const fs::path& file, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    TSSE_CHECK(in.good(), ErrorKind::kConfiguration, "cannot open config " + file.string());
    try {
      doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kConfiguration, file.string() + ": " + e.what());
    }
    TSSE_CHECK(doc.is_object(), ErrorKind::kConfiguration, file.string() + ": top level must be an object");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  TSSE_CHECK(eq != std::string::npos && eq > 0, ErrorKind::kConfiguration,
             "override '" + assignment + "' is not key.path=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    TSSE_CHECK(!key.empty(), ErrorKind::kConfiguration, "override '" + assignment + "' has an empty key");
    if (node->is_null()) *node = json::object();
    TSSE_CHECK(node->is_object(), ErrorKind::kConfiguration,
               "override '" + assignment + "' descends into a non-object at '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

namespace {

/// Collects configuration problems so they can be reported together.
class Problems {
 public:
  void add(const std::string& msg) { list_.push_back(msg); }

  template <typename Fn>
  void attempt(const std::string& where, Fn&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      add(where + ": " + e.what());
    } catch (const json::exception& e) {
      add(where + ": " + e.what());
    }
  }

  void raise() const {
    if (list_.empty()) return;
    std::string msg = list_.size() == 1 ? "invalid config: " : "invalid config (" + std::to_string(list_.size()) + " problems):";
    if (list_.size() == 1) {
      msg += list_[0];
    } else {
      for (const auto& p : list_) msg += "\n  - " + p;
    }
    throw Error(ErrorKind::kConfiguration, msg);
  }

 private:
  std::vector<std::string> list_;
};

void only_keys(Problems& p, const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) {
    p.add(where + " must be an object");
    return;
  }
  for (const auto& [k, v] : obj.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
      p.add("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

fs::path as_path(const json& v, const std::string& where) {
  TSSE_CHECK(v.is_string() && !v.get<std::string>().empty(), ErrorKind::kConfiguration, where + " must be a path");
  return v.get<std::string>();
}

int positive_int(const json& v, const std::string& where) {
  TSSE_CHECK(v.is_number_integer() && v.get<int64_t>() >= 1, ErrorKind::kConfiguration,
             where + " must be a positive integer");
  return v.get<int>();
}

Stage stage_of(const json& v) {
  TSSE_CHECK(v.is_string(), ErrorKind::kConfiguration, "stage must be a string");
  try {
    return stage_from_string(v.get<std::string>());
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfiguration, e.what());
  }
}

}  // namespace

ExperimentConfig parse_experiment(const json& doc) {
  Problems p;
  ExperimentConfig c;
  only_keys(p, doc, "", {"description", "seed", "scale_divisor", "paths", "simulate", "train", "enhance", "evaluate",
                         "audit"});
  if (!doc.is_object()) p.raise();

  if (doc.contains("description") && !doc["description"].is_string()) p.add("description must be a string");
  if (doc.contains("seed")) {
    const auto& v = doc["seed"];
    if (v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0)) c.seed = v.get<uint64_t>();
    else p.add("seed must be a non-negative integer");
  }
  if (doc.contains("scale_divisor")) {
    const auto& v = doc["scale_divisor"];
    if (v.is_number() && v.get<double>() > 0.0) c.scale_divisor = v.get<double>();
    else p.add("scale_divisor must be a positive number");
  }

  if (doc.contains("paths")) {
    const auto& j = doc["paths"];
    only_keys(p, j, "paths", {"clean_manifest", "noise_manifest", "rir_manifest", "out_dir", "base_checkpoint",
                              "checkpoints", "reference_manifest", "system_output_dir", "provenance_dir"});
    if (j.is_object()) {
      auto opt = [&](const char* key, std::optional<fs::path>& dst) {
        if (j.contains(key)) p.attempt(std::string("paths.") + key, [&] { dst = as_path(j[key], "value"); });
      };
      opt("clean_manifest", c.paths.clean_manifest);
      opt("noise_manifest", c.paths.noise_manifest);
      opt("rir_manifest", c.paths.rir_manifest);
      opt("out_dir", c.paths.out_dir);
      opt("base_checkpoint", c.paths.base_checkpoint);
      opt("reference_manifest", c.paths.reference_manifest);
      opt("system_output_dir", c.paths.system_output_dir);
      opt("provenance_dir", c.paths.provenance_dir);
      if (j.contains("checkpoints")) {
        const auto& k = j["checkpoints"];
        only_keys(p, k, "paths.checkpoints", {"fill", "sep", "res", "res_finetuned"});
        if (k.is_object())
          for (const auto& [slot, v] : k.items())
            p.attempt("paths.checkpoints." + slot, [&] { c.paths.checkpoints[slot] = as_path(v, "value"); });
      }
    }
  }

  if (doc.contains("simulate")) {
    const auto& j = doc["simulate"];
    only_keys(p, j, "simulate", {"stage", "recipe", "pairs_per_utterance", "encoding"});
    if (j.is_object()) {
      if (j.contains("stage")) p.attempt("simulate.stage", [&] { c.simulate.stage = stage_of(j["stage"]); });
      c.simulate.recipe = DistortionRecipe::defaults(c.simulate.stage);
      if (j.contains("recipe"))
        p.attempt("simulate.recipe", [&] {
          auto r = recipe_from_json(j["recipe"]);
          TSSE_CHECK(r.stage == c.simulate.stage, ErrorKind::kConfiguration,
                     "recipe stage '" + std::string(to_string(r.stage)) + "' differs from simulate.stage");
          c.simulate.recipe = r;
        });
      if (j.contains("pairs_per_utterance"))
        p.attempt("simulate.pairs_per_utterance",
                  [&] { c.simulate.pairs_per_utterance = positive_int(j["pairs_per_utterance"], "value"); });
      if (j.contains("encoding")) {
        const auto& e = j["encoding"];
        if (e == "float32") c.simulate.encoding = WavEncoding::kFloat32;
        else if (e == "pcm16") c.simulate.encoding = WavEncoding::kPcm16;
        else p.add("simulate.encoding must be \"float32\" or \"pcm16\"");
      }
    }
  }

  if (doc.contains("train")) {
    json t = doc["train"];
    if (!t.is_object()) {
      p.add("train must be an object");
    } else {
      for (const char* k : {"seed", "scale_divisor"})
        if (t.contains(k)) p.add(std::string("train.") + k + ": set it at the top level");
      t.erase("seed");
      t.erase("scale_divisor");
      t["seed"] = c.seed;
      t["scale_divisor"] = c.scale_divisor;
      p.attempt("train", [&] { c.train = train_config_from_json(t); });
    }
  }

  if (doc.contains("enhance")) {
    const auto& j = doc["enhance"];
    only_keys(p, j, "enhance", {"bwai", "stages", "bwai_config", "workers", "untrained"});
    if (j.is_object()) {
      if (j.contains("bwai")) {
        if (j["bwai"].is_boolean()) c.enhance.bwai = j["bwai"].get<bool>();
        else p.add("enhance.bwai must be a boolean");
      }
      if (j.contains("stages"))
        p.attempt("enhance.stages", [&] {
          TSSE_CHECK(j["stages"].is_array() && !j["stages"].empty(), ErrorKind::kConfiguration,
                     "must be a non-empty list of stage names");
          c.enhance.stages.clear();
          for (const auto& s : j["stages"]) c.enhance.stages.insert(stage_of(s));
        });
      if (j.contains("bwai_config"))
        p.attempt("enhance.bwai_config", [&] { c.enhance.bwai_config = bwai_config_from_json(j["bwai_config"]); });
      if (j.contains("workers"))
        p.attempt("enhance.workers", [&] { c.enhance.workers = positive_int(j["workers"], "value"); });
      if (j.contains("untrained"))
        p.attempt("enhance.untrained", [&] { c.enhance.untrained = bundle_config_from_json(j["untrained"]); });
    }
  }

  if (doc.contains("evaluate")) {
    const auto& j = doc["evaluate"];
    only_keys(p, j, "evaluate", {"metrics", "settings", "scorers", "workers"});
    if (j.is_object()) {
      if (j.contains("metrics"))
        p.attempt("evaluate.metrics", [&] {
          c.evaluate.metrics = canonical_metric_order(j["metrics"].get<std::vector<std::string>>());
          TSSE_CHECK(!c.evaluate.metrics.empty(), ErrorKind::kConfiguration, "no metrics selected");
        });
      if (j.contains("settings"))
        p.attempt("evaluate.settings", [&] { c.evaluate.settings = eval_settings_from_json(j["settings"]); });
      if (j.contains("scorers"))
        p.attempt("evaluate.scorers", [&] {
          for (const auto& [name, cmd] : j["scorers"].items()) {
            TSSE_CHECK(!is_builtin_metric(name), ErrorKind::kConfiguration, name + " is built in");
            canonical_metric_order({name});
            TSSE_CHECK(cmd.is_string(), ErrorKind::kConfiguration, name + " must be a command string");
            c.evaluate.scorers[name] = {cmd.get<std::string>()};
          }
        });
      if (j.contains("workers"))
        p.attempt("evaluate.workers", [&] { c.evaluate.workers = positive_int(j["workers"], "value"); });
    }
  }

  if (doc.contains("audit")) {
    const auto& j = doc["audit"];
    only_keys(p, j, "audit", {"bundle", "duration_s"});
    if (j.is_object()) {
      if (j.contains("bundle")) p.attempt("audit.bundle", [&] { c.audit.bundle = bundle_config_from_json(j["bundle"]); });
      if (j.contains("duration_s")) {
        if (j["duration_s"].is_number() && j["duration_s"].get<double>() > 0.0)
          c.audit.duration_s = j["duration_s"].get<double>();
        else p.add("audit.duration_s must be a positive number");
      }
    }
  }

  p.raise();
  return c;
}

void check_device() {
  const char* dev = std::getenv(kDeviceEnv);
  if (!dev || std::string(dev).empty() || std::string(dev) == "cpu") return;
  throw Error(ErrorKind::kConfiguration,
              std::string(kDeviceEnv) + "=" + dev + " is not available; this build runs on the CPU only");
}

// ---------------------------------------------------------------------------
// Commands

namespace {

template <typename T>
const T& require(const std::optional<T>& v, const char* name) {
  TSSE_CHECK(v.has_value(), ErrorKind::kConfiguration, std::string(name) + " is required for this command");
  return *v;
}

std::vector<Waveform> load_bank(const std::optional<fs::path>& manifest) {
  std::vector<Waveform> out;
  if (!manifest) return out;
  for (const auto& e : read_manifest(*manifest)) out.push_back(read_wav(e.path));
  return out;
}

SimulationResources load_resources(const Paths& p) { return {load_bank(p.noise_manifest), load_bank(p.rir_manifest)}; }

std::vector<Waveform> load_clean(const Paths& p) {
  std::vector<Waveform> out;
  for (const auto& e : read_manifest(require(p.clean_manifest, "paths.clean_manifest"))) out.push_back(read_wav(e.path));
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  TSSE_CHECK(out.good(), ErrorKind::kIo, "cannot write " + file.string());
  out << text;
}

}  // namespace

SimulateSummary cmd_simulate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const auto& sim = cfg.simulate;
  const auto manifest = read_manifest(require(cfg.paths.clean_manifest, "paths.clean_manifest"));
  SimulateSummary summary;
  if (manifest.empty()) return summary;
  const auto resources = load_resources(cfg.paths);
  for (const char* sub : {"input", "target", "provenance"}) fs::create_directories(out_dir / sub);

  std::vector<ManifestEntry> inputs, targets;
  const Rng root = Rng(cfg.seed).fork("simulate");
  for (const auto& e : manifest) {
    Waveform clean;
    try {
      clean = conform_to_stage_rate(read_wav(e.path), sim.stage);
    } catch (const Error& err) {
      summary.errors.push_back(e.id + ": " + err.what());
      continue;
    }
    for (int j = 0; j < sim.pairs_per_utterance; ++j) {
      const std::string id = sim.pairs_per_utterance == 1 ? e.id : e.id + "_" + std::to_string(j);
      Rng rng = root.fork(e.id).fork(static_cast<uint64_t>(j));
      auto pair = simulate_pair(clean, sim.recipe, rng, resources);
      const auto in_path = out_dir / "input" / (id + ".wav");
      const auto tg_path = out_dir / "target" / (id + ".wav");
      write_wav(in_path, pair.input, sim.encoding);
      write_wav(tg_path, pair.target, sim.encoding);

      json draws = json::array();
      for (const auto& d : pair.draws) draws.push_back(to_json(d));
      json kinds = json::array();
      for (auto k : pair.target_kinds) kinds.push_back(std::string(to_string(k)));
      json side = {{"id", id},
                   {"source", {{"id", e.id}, {"path", e.path.string()}, {"fs", e.fs}}},
                   {"stage", std::string(to_string(sim.stage))},
                   {"seed", cfg.seed},
                   {"pair_index", j},
                   {"fs", pair.input.fs},
                   {"draws", draws},
                   {"target_kinds", kinds},
                   {"packet_loss_mask", pair.mask ? to_json(*pair.mask) : json()},
                   {"resources",
                    {{"noise_manifest", cfg.paths.noise_manifest ? json(cfg.paths.noise_manifest->string()) : json()},
                     {"rir_manifest", cfg.paths.rir_manifest ? json(cfg.paths.rir_manifest->string()) : json()}}}};
      write_text(out_dir / "provenance" / (id + ".json"), side.dump(2) + "\n");
      // relative to the manifests, so the output tree can be moved
      inputs.push_back({id, fs::path("input") / (id + ".wav"), pair.input.fs});
      targets.push_back({id, fs::path("target") / (id + ".wav"), pair.target.fs});
      ++summary.pairs;
    }
  }
  write_manifest(out_dir / "input.tsv", inputs);
  write_manifest(out_dir / "target.tsv", targets);
  return summary;
}

SimulatedPair replay_sidecar(const json& side, const SimulationResources& res) {
  const Stage stage = stage_from_string(side.at("stage").get<std::string>());
  const Waveform clean = conform_to_stage_rate(read_wav(side.at("source").at("path").get<std::string>()), stage);
  std::vector<DistortionDraw> draws;
  for (const auto& d : side.at("draws")) draws.push_back(draw_from_json(d));
  std::set<DistortionKind> kinds;
  for (const auto& k : side.at("target_kinds")) kinds.insert(distortion_from_string(k.get<std::string>()));
  return replay_pair(clean, stage, draws, kinds, res);
}

TrainResult cmd_train(const ExperimentConfig& cfg, bool resume) {
  const auto& tc = require(cfg.train, "train");
  const auto& out = require(cfg.paths.out_dir, "paths.out_dir");
  TSSE_CHECK(tc.phase == Phase::kBase, ErrorKind::kConfiguration,
             "train.phase is " + std::string(to_string(tc.phase)) + "; use the finetune command");
  return train_stage(tc, load_clean(cfg.paths), out, load_resources(cfg.paths), resume);
}

TrainResult cmd_finetune(const ExperimentConfig& cfg) {
  const auto& tc = require(cfg.train, "train");
  const auto& out = require(cfg.paths.out_dir, "paths.out_dir");
  const auto& base = require(cfg.paths.base_checkpoint, "paths.base_checkpoint");
  std::map<Stage, fs::path> previous;
  for (const auto& [slot, path] : cfg.paths.checkpoints)
    if (slot == "fill" || slot == "sep") previous[stage_from_string(slot)] = path;
  return finetune(tc, base, load_clean(cfg.paths), out, previous, load_resources(cfg.paths));
}

EnhanceSummary cmd_enhance(const ExperimentConfig& cfg, const fs::path& in, const fs::path& out) {
  ModelBundle bundle;
  if (cfg.enhance.untrained) {
    torch::manual_seed(cfg.seed);
    bundle = ModelBundle::build(*cfg.enhance.untrained);
  } else {
    TSSE_CHECK(!cfg.paths.checkpoints.empty(), ErrorKind::kConfiguration,
               "enhance needs paths.checkpoints or enhance.untrained");
    bundle = assemble_bundle(cfg.paths.checkpoints);
  }
  bundle.eval();

  std::vector<std::pair<fs::path, fs::path>> jobs;
  TSSE_CHECK(fs::exists(in), ErrorKind::kIo, "input not found: " + in.string());
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && e.path().extension() == ".wav") jobs.emplace_back(e.path(), out / e.path().filename());
    std::sort(jobs.begin(), jobs.end());
    fs::create_directories(out);
  } else {
    jobs.emplace_back(in, out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
  }

  EnhanceSummary summary;
  std::vector<EnhanceRequest> reqs;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    try {
      reqs.push_back({read_wav(jobs[i].first), cfg.enhance.bwai, cfg.enhance.stages, cfg.enhance.bwai_config});
      index.push_back(i);
    } catch (const Error& e) {
      summary.errors.push_back(jobs[i].first.string() + ": " + e.what());
    }
  }
  auto results = enhance_batch(reqs, bundle, cfg.enhance.workers);
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& [src, dst] = jobs[index[k]];
    if (!results[k].result) {
      summary.errors.push_back(src.string() + ": " + results[k].error);
      continue;
    }
    write_wav(dst, results[k].result->wav);
    summary.done.emplace_back(dst.string(), std::string(to_string(results[k].result->route)));
  }
  return summary;
}

EvalReport cmd_evaluate(const ExperimentConfig& cfg, const fs::path& reference_manifest,
                        const fs::path& system_output_dir) {
  EvalOptions opts = cfg.evaluate;
  if (cfg.paths.provenance_dir) opts.provenance_dir = cfg.paths.provenance_dir;
  return eval_corpus(read_manifest(reference_manifest), system_output_dir, opts);
}

json cmd_audit(const ExperimentConfig& cfg) {
  const auto& b = cfg.audit.bundle;
  const auto counts = bundle_param_counts(b);
  json params = {{"fill", counts.fill}, {"sep", counts.sep}, {"res", counts.res}, {"total", counts.total()}};
  if (b.with_finetuned_res) params["res_finetuned"] = counts.res_finetuned;
  return {{"bundle", to_json(b)},
          {"duration_s", cfg.audit.duration_s},
          {"parameters", params},
          {"macs_per_second",
           {{"16000", bundle_macs_per_second(b, 16000, cfg.audit.duration_s)},
            {"48000", bundle_macs_per_second(b, 48000, cfg.audit.duration_s)}}}};
}

// ---------------------------------------------------------------------------
// Command line

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON, comments allowed)");
  cmd->add_option("-s,--set", c.overrides, "override a config leaf: key.path=value")->take_all();
}

ExperimentConfig load(const Common& c) {
  check_device();
  return parse_experiment(load_document(c.config, c.overrides));
}

void print_train(const TrainResult& r) {
  std::cout << "steps run: " << r.steps_run << "\n";
  if (!r.history.empty()) std::cout << "last loss: " << r.history.back().values.at("total") << "\n";
  if (!r.validation.empty()) std::cout << "last validation: " << r.validation.back().dump() << "\n";
  std::cout << "checkpoint: " << r.final_checkpoint.string() << "\n";
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"tsse: three-stage universal speech enhancement"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  Common sim_c, train_c, ft_c, enh_c, eval_c, audit_c;
  std::string sim_out, enh_in, enh_out, eval_ref, eval_est, eval_report, audit_json;
  bool resume = false;

  auto* sim = app.add_subcommand("simulate", "materialise degraded/target pairs with provenance sidecars");
  add_common(sim, sim_c);
  sim->add_option("-o,--out", sim_out, "output directory (default paths.out_dir)");

  auto* train = app.add_subcommand("train", "base training of one stage");
  add_common(train, train_c);
  train->add_flag("--resume", resume, "continue from the newest checkpoint in paths.out_dir");

  auto* ft = app.add_subcommand("finetune", "maft / saft / jft from a base checkpoint");
  add_common(ft, ft_c);

  auto* enh = app.add_subcommand("enhance", "run the pipeline on a WAV file or a directory");
  add_common(enh, enh_c);
  enh->add_option("input", enh_in, "input WAV or directory")->required();
  enh->add_option("output", enh_out, "output WAV or directory")->required();

  auto* ev = app.add_subcommand("evaluate", "score system outputs against references");
  add_common(ev, eval_c);
  ev->add_option("--ref", eval_ref, "reference manifest (default paths.reference_manifest)");
  ev->add_option("--est", eval_est, "system output directory (default paths.system_output_dir)");
  ev->add_option("--report", eval_report, "report directory (default paths.out_dir)");

  auto* audit = app.add_subcommand("audit", "parameter and MACs budget");
  add_common(audit, audit_c);
  audit->add_option("--json", audit_json, "also write the audit as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  log::set_threshold(level == "debug"  ? log::Level::kDebug
                     : level == "info" ? log::Level::kInfo
                     : level == "warn" ? log::Level::kWarn
                     : level == "error" ? log::Level::kError
                                        : log::Level::kOff);

  try {
    if (*sim) {
      auto cfg = load(sim_c);
      const fs::path out = sim_out.empty() ? require(cfg.paths.out_dir, "paths.out_dir") : fs::path(sim_out);
      auto s = cmd_simulate(cfg, out);
      std::cout << "pairs written: " << s.pairs << "\n";
      for (const auto& e : s.errors) std::cerr << "error: " << e << "\n";
      return s.errors.empty() ? kExitOk : kExitRuntime;
    }
    if (*train) {
      print_train(cmd_train(load(train_c), resume));
      return kExitOk;
    }
    if (*ft) {
      print_train(cmd_finetune(load(ft_c)));
      return kExitOk;
    }
    if (*enh) {
      auto s = cmd_enhance(load(enh_c), enh_in, enh_out);
      for (const auto& [file, route] : s.done) std::cout << file << "\troute=" << route << "\n";
      for (const auto& e : s.errors) std::cerr << "error: " << e << "\n";
      return s.errors.empty() ? kExitOk : kExitRuntime;
    }
    if (*ev) {
      auto cfg = load(eval_c);
      const fs::path ref = eval_ref.empty() ? require(cfg.paths.reference_manifest, "paths.reference_manifest")
                                            : fs::path(eval_ref);
      const fs::path est = eval_est.empty() ? require(cfg.paths.system_output_dir, "paths.system_output_dir")
                                            : fs::path(eval_est);
      auto report = cmd_evaluate(cfg, ref, est);
      std::cout << report_table(report);
      const fs::path dir = !eval_report.empty() ? fs::path(eval_report) : cfg.paths.out_dir.value_or(fs::path());
      if (!dir.empty()) write_report(report, dir);
      return kExitOk;
    }
    if (*audit) {
      auto cfg = load(audit_c);
      auto j = cmd_audit(cfg);
      std::cout << budget_report(cfg.audit.bundle, cfg.audit.duration_s);
      if (!audit_json.empty()) write_text(audit_json, j.dump(2) + "\n");
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfiguration ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace tsse::cli
