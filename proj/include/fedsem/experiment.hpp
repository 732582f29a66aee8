#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsem/attack.hpp"
#include "fedsem/datagen.hpp"
#include "fedsem/errors.hpp"
#include "fedsem/fed.hpp"
#include "fedsem/metrics.hpp"
#include "fedsem/model.hpp"
#include "fedsem/plot.hpp"

namespace fedsem {

// Declarative experiment runner. A single JSON config plus one global seed
// determines every artifact byte for byte (wall-clock fields aside). The
// config is validated in full before any work starts.

struct TrainingSection {
  enum class Mode { cl, fl };
  Mode mode = Mode::fl;
  std::vector<std::string> subsets;
  std::string holdout = "J";
  TrainConfig config;
  bool save_snapshots = false;
  std::string run_id;  // defaulted from mode + subsets when empty
};

struct AttackSection {
  std::string run_id;  // defaults to the training run of this config
  std::string victim = "client_0";
  int round = 1;
  AttackConfig config;
  std::vector<double> alphas;  // non-empty: sweep instead of a single run
  bool approximate = false;    // attack a non-attack-compatible run anyway
};

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string output_dir = "runs";
  CorpusConfig dataset;  // noise/seed filled during resolve()
  SplitManifest manifest = default_manifest();
  ModelSpec model;
  TrainingSection training;
  AttackSection attack;

  std::string dataset_dir() const {
    return (std::filesystem::path(output_dir) / "dataset").string();
  }
  std::string run_dir() const {
    return (std::filesystem::path(output_dir) / "runs" / training.run_id).string();
  }
  std::string run_dir(const std::string& run_id) const {
    return (std::filesystem::path(output_dir) / "runs" / run_id).string();
  }

  // Named sub-seeds: each stage draws from its own stream.
  void resolve() {
    dataset.seed = mix_seed(seed, "dataset");
    dataset.count = manifest.total_count();
    training.config.seed = mix_seed(seed, "training");
    attack.config.seed = mix_seed(seed, "attack");
    model.height = dataset.height;
    model.width = dataset.width;
    if (training.run_id.empty()) {
      std::string joined;
      for (const auto& s : training.subsets) joined += s;
      training.run_id =
          (training.mode == TrainingSection::Mode::cl ? "cl-" : "fl-") + joined;
    }
    if (attack.run_id.empty()) attack.run_id = training.run_id;
  }

  void validate() const {
    if (training.subsets.empty()) throw ConfigError("training.subsets must not be empty");
    if (training.mode == TrainingSection::Mode::cl && training.subsets.size() != 1)
      throw ConfigError("cl mode trains exactly one subset");
    std::set<std::string> known;
    for (const auto& p : manifest.parts) known.insert(p.name);
    for (const auto& c : manifest.combined) known.insert(c.name);
    for (const auto& s : training.subsets)
      if (!known.count(s)) throw ConfigError("training references unknown subset " + s);
    if (!training.holdout.empty() && !known.count(training.holdout))
      throw ConfigError("training references unknown holdout subset " + training.holdout);
    for (const auto& s : training.subsets)
      if (s == training.holdout) throw ConfigError("holdout subset cannot also be trained on");
    try {
      manifest.validate();
      dataset.noise.validate();
      model.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    training.config.validate();
    attack.config.validate();
    if (model.arch == Architecture::unet &&
        (dataset.height % (int64_t{1} << model.depth) ||
         dataset.width % (int64_t{1} << model.depth)))
      throw ConfigError("dataset dims are not divisible by 2^depth of the model");
    if (attack.round < 1) throw ConfigError("attack.round must be >= 1");
    for (double a : attack.alphas)
      if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("attack.alphas entries must lie in [0,1]");
  }

  void apply_desk_scale() {
    dataset.height = dataset.width = 64;
    model.height = model.width = 64;
    if (model.arch == Architecture::unet) {
      model.depth = 2;
      model.base_channels = std::min(model.base_channels, 8);
    }
  }

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// JSON binding
// ---------------------------------------------------------------------------

namespace expdetail {

inline SplitManifest manifest_from_json(const nlohmann::json& j) {
  SplitManifest m;
  for (const auto& p : j.at("parts")) {
    SubsetSpec s;
    s.name = p.at("name").get<std::string>();
    s.count = p.at("count").get<int64_t>();
    s.role = p.value("role", std::string("train")) == "holdout" ? SubsetRole::holdout
                                                                : SubsetRole::train;
    m.parts.push_back(std::move(s));
  }
  for (const auto& c : j.value("combined", nlohmann::json::array())) {
    CombinedSpec cs;
    cs.name = c.at("name").get<std::string>();
    for (const auto& mem : c.at("members")) cs.members.push_back(mem.get<std::string>());
    m.combined.push_back(std::move(cs));
  }
  return m;
}

inline nlohmann::json manifest_to_json(const SplitManifest& m) {
  nlohmann::json j;
  j["parts"] = nlohmann::json::array();
  for (const auto& p : m.parts)
    j["parts"].push_back({{"name", p.name},
                          {"count", p.count},
                          {"role", p.role == SubsetRole::holdout ? "holdout" : "train"}});
  j["combined"] = nlohmann::json::array();
  for (const auto& c : m.combined)
    j["combined"].push_back({{"name", c.name}, {"members", c.members}});
  return j;
}

template <typename E>
E parse_enum(const std::string& v, const std::map<std::string, E>& table, const char* what) {
  auto it = table.find(v);
  if (it == table.end()) throw ConfigError(std::string("unknown ") + what + ": " + v);
  return it->second;
}

}  // namespace expdetail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", uint64_t{0});
    c.output_dir = j.value("output_dir", std::string("runs"));

    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset.height = d.value("height", int64_t{256});
      c.dataset.width = d.value("width", int64_t{256});
      c.dataset.structure_density = d.value("structure_density", 0.4);
      c.dataset.density_jitter = d.value("density_jitter", 0.1);
      c.dataset.contrast_jitter = d.value("contrast_jitter", 0.0);
      if (d.contains("noise")) c.dataset.noise = noise_from_json(d.at("noise"));
      if (d.contains("manifest")) c.manifest = expdetail::manifest_from_json(d.at("manifest"));
    }

    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.arch = expdetail::parse_enum(
          m.value("architecture", std::string("unet")),
          std::map<std::string, Architecture>{{"unet", Architecture::unet},
                                              {"toy_linear", Architecture::toy_linear}},
          "model architecture");
      c.model.depth = m.value("depth", 4);
      c.model.base_channels = m.value("base_channels", 16);
    }

    if (j.contains("training")) {
      const auto& t = j.at("training");
      c.training.mode = expdetail::parse_enum(
          t.value("mode", std::string("fl")),
          std::map<std::string, TrainingSection::Mode>{{"cl", TrainingSection::Mode::cl},
                                                       {"fl", TrainingSection::Mode::fl}},
          "training mode");
      c.training.subsets = t.value("subsets", std::vector<std::string>{});
      c.training.holdout = t.value("holdout", std::string("J"));
      c.training.run_id = t.value("run_id", std::string());
      c.training.save_snapshots = t.value("save_snapshots", false);
      TrainConfig& tc = c.training.config;
      tc.learning_rate = t.value("learning_rate", 0.01);
      tc.local_epochs = t.value("local_epochs", 1);
      tc.batch_size = t.value("batch_size", 2);
      tc.rounds = t.value("rounds", 100);
      tc.momentum = t.value("momentum", 0.9);
      tc.participation_fraction = t.value("participation_fraction", 1.0);
      tc.attack_compatible = t.value("attack_compatible", false);
      tc.optimizer = expdetail::parse_enum(
          t.value("optimizer", std::string("sgd")),
          std::map<std::string, TrainConfig::Optimizer>{
              {"sgd", TrainConfig::Optimizer::sgd},
              {"sgd_momentum", TrainConfig::Optimizer::sgd_momentum}},
          "optimizer");
    }

    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      c.attack.run_id = a.value("run_id", std::string());
      c.attack.victim = a.value("victim", std::string("client_0"));
      c.attack.round = a.value("round", 1);
      c.attack.approximate = a.value("approximate", false);
      c.attack.alphas = a.value("alphas", std::vector<double>{});
      AttackConfig& ac = c.attack.config;
      ac.alpha = a.value("alpha", 0.5);
      ac.attack_lr = a.value("attack_lr", 0.1);
      ac.iterations = a.value("iterations", 2000);
      ac.clamp_inputs = a.value("clamp_inputs", true);
      ac.snapshot_interval = a.value("snapshot_interval", 0);
      ac.tv_prior = a.value("tv_prior", 0.0);
      ac.optimizer = expdetail::parse_enum(
          a.value("optimizer", std::string("adam")),
          std::map<std::string, AttackConfig::Optimizer>{
              {"adam", AttackConfig::Optimizer::adam},
              {"lbfgs", AttackConfig::Optimizer::lbfgs}},
          "attack optimizer");
      ac.init = expdetail::parse_enum(
          a.value("init", std::string("uniform_random")),
          std::map<std::string, AttackConfig::Init>{
              {"uniform_random", AttackConfig::Init::uniform_random},
              {"gaussian", AttackConfig::Init::gaussian},
              {"constant_gray", AttackConfig::Init::constant_gray}},
          "attack init");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return c;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("config file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

inline nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["dataset"] = {{"height", dataset.height},
                  {"width", dataset.width},
                  {"structure_density", dataset.structure_density},
                  {"density_jitter", dataset.density_jitter},
                  {"contrast_jitter", dataset.contrast_jitter},
                  {"noise", noise_to_json(dataset.noise)},
                  {"manifest", expdetail::manifest_to_json(manifest)}};
  j["model"] = {{"architecture", model.arch == Architecture::unet ? "unet" : "toy_linear"},
                {"depth", model.depth},
                {"base_channels", model.base_channels},
                {"tag", model.tag()}};
  j["training"] = {
      {"mode", training.mode == TrainingSection::Mode::cl ? "cl" : "fl"},
      {"subsets", training.subsets},
      {"holdout", training.holdout},
      {"run_id", training.run_id},
      {"save_snapshots", training.save_snapshots},
      {"learning_rate", training.config.learning_rate},
      {"local_epochs", training.config.local_epochs},
      {"batch_size", training.config.batch_size},
      {"rounds", training.config.rounds},
      {"optimizer",
       training.config.optimizer == TrainConfig::Optimizer::sgd ? "sgd" : "sgd_momentum"},
      {"participation_fraction", training.config.participation_fraction},
      {"attack_compatible", training.config.attack_compatible}};
  j["attack"] = {{"run_id", attack.run_id},
                 {"victim", attack.victim},
                 {"round", attack.round},
                 {"alpha", attack.config.alpha},
                 {"alphas", attack.alphas},
                 {"attack_lr", attack.config.attack_lr},
                 {"iterations", attack.config.iterations},
                 {"optimizer",
                  attack.config.optimizer == AttackConfig::Optimizer::adam ? "adam" : "lbfgs"},
                 {"approximate", attack.approximate}};
  return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::string cmd_generate(ExperimentConfig cfg) {
  cfg.resolve();
  cfg.validate();
  const auto samples = generate_corpus(cfg.dataset);
  const auto splits = build_experiment_splits(samples, cfg.manifest);
  export_dataset(cfg.dataset_dir(), splits, cfg.dataset, cfg.manifest);
  return cfg.dataset_dir();
}

struct TrainOutcome {
  std::string run_dir;
  nlohmann::json summary;
};

inline TrainOutcome cmd_train(ExperimentConfig cfg) {
  namespace fs = std::filesystem;
  cfg.resolve();
  cfg.validate();
  if (!fs::exists(fs::path(cfg.dataset_dir()) / "manifest.json"))
    throw MissingInputError("dataset not found at " + cfg.dataset_dir() +
                            " (run the generate command first)");
  const DatasetOnDisk data = import_dataset(cfg.dataset_dir());

  std::vector<ClientDataset> train_sets;
  for (const auto& name : cfg.training.subsets) train_sets.push_back(data.splits.find(name));
  ClientDataset holdout;
  if (!cfg.training.holdout.empty()) holdout = data.splits.find(cfg.training.holdout);

  const fs::path rdir = cfg.run_dir();
  fs::create_directories(rdir);

  SnapshotSink sink;
  if (cfg.training.save_snapshots) {
    sink = [&, rdir](int round, const ClientState& client, const ModelWeights& before,
                     const ModelWeights& after, double) {
      char sub[32];
      std::snprintf(sub, sizeof(sub), "round_%04d", round);
      const fs::path d = rdir / "snapshots" / sub;
      fs::create_directories(d);
      write_weights((d / (client.client_id + "_before.fsw")).string(), before);
      write_weights((d / (client.client_id + "_after.fsw")).string(), after);
    };
  }

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.training.mode == TrainingSection::Mode::cl) {
    result = train_centralized(train_sets[0], cfg.model, cfg.training.config,
                               cfg.training.holdout.empty() ? nullptr : &holdout, sink);
  } else {
    auto clients = make_clients(train_sets, cfg.training.config.seed);
    result = run_federated(clients, cfg.model, cfg.training.config, holdout, sink);
  }
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  {
    std::ofstream log(rdir / "rounds.jsonl");
    for (const auto& r : result.rounds) log << r.to_json(true).dump() << "\n";
  }
  write_weights((rdir / "final.fsw").string(), result.weights);
  {
    std::ofstream cfg_out(rdir / "config.json");
    cfg_out << cfg.to_json().dump(2) << "\n";
  }

  TrainOutcome out;
  out.run_dir = rdir.string();
  nlohmann::json& s = out.summary;
  s["run_id"] = cfg.training.run_id;
  s["mode"] = cfg.training.mode == TrainingSection::Mode::cl ? "cl" : "fl";
  s["client_count"] = cfg.training.mode == TrainingSection::Mode::cl
                          ? 1
                          : static_cast<int>(cfg.training.subsets.size());
  s["subsets"] = cfg.training.subsets;
  s["holdout"] = cfg.training.holdout;
  s["rounds"] = cfg.training.config.rounds;
  s["learning_rate"] = cfg.training.config.learning_rate;
  s["local_epochs"] = cfg.training.config.local_epochs;
  s["batch_size"] = cfg.training.config.batch_size;
  s["attack_compatible"] = cfg.training.config.attack_compatible;
  s["model_tag"] = cfg.model.tag();
  s["seed"] = cfg.seed;
  s["final_digest"] = digest_hex(weights_digest(result.weights));
  s["wall_ms_total"] = wall_ms;
  int64_t total_samples = 0;
  for (const auto& t : train_sets) total_samples += static_cast<int64_t>(t.samples.size());
  s["train_samples"] = total_samples;
  if (!result.rounds.empty() && result.rounds.back().holdout) {
    const auto& h = *result.rounds.back().holdout;
    s["final"] = {{"loss", h.loss}, {"iou", h.iou}, {"mse", h.mse}, {"ssim", h.ssim}};
  }
  {
    std::ofstream sum(rdir / "run_summary.json");
    sum << s.dump(2) << "\n";
  }
  return out;
}

struct AttackOutcome {
  std::string attack_dir;
  nlohmann::json report;
  std::vector<AttackReport> runs;  // sweep order (best first) or a single report
};

inline AttackOutcome cmd_attack(ExperimentConfig cfg) {
  namespace fs = std::filesystem;
  cfg.resolve();
  cfg.validate();
  const fs::path rdir = cfg.run_dir(cfg.attack.run_id);
  if (!fs::exists(rdir / "config.json"))
    throw MissingInputError("training run not found: " + rdir.string());

  nlohmann::json run_cfg;
  {
    std::ifstream in(rdir / "config.json");
    in >> run_cfg;
  }
  const double eta = run_cfg.at("training").at("learning_rate").get<double>();
  const bool compatible = run_cfg.at("training").value("attack_compatible", false);
  if (!compatible && !cfg.attack.approximate)
    throw ConfigError(
        "training run '" + cfg.attack.run_id +
        "' was not attack-compatible (momentum, multiple local epochs or minibatching make the "
        "weight-delta/gradient identity approximate); pass --approximate to attack it anyway");

  char sub[32];
  std::snprintf(sub, sizeof(sub), "round_%04d", cfg.attack.round);
  const fs::path snap_dir = rdir / "snapshots" / sub;
  const fs::path before_p = snap_dir / (cfg.attack.victim + "_before.fsw");
  const fs::path after_p = snap_dir / (cfg.attack.victim + "_after.fsw");
  if (!fs::exists(before_p) || !fs::exists(after_p))
    throw MissingInputError("missing snapshots for victim " + cfg.attack.victim + " at round " +
                            std::to_string(cfg.attack.round) + " under " + snap_dir.string());

  const ModelWeights before = read_weights(before_p.string());
  const ModelWeights after = read_weights(after_p.string());
  GradientEstimate target = recover_gradient(before, after, eta);

  // ground truth (evaluation only): the victim's private image, available
  // here because the simulation owns the dataset
  std::optional<SemSample> ground_truth;
  {
    const DatasetOnDisk data = import_dataset(cfg.dataset_dir());
    for (const auto& part : data.splits.partition) {
      if (part.owner == cfg.attack.victim && part.samples.size() == 1)
        ground_truth = part.samples[0];
    }
  }

  std::vector<AttackReport> runs;
  if (cfg.attack.alphas.empty()) {
    runs.push_back(run_attack(target, before, cfg.attack.config,
                              ground_truth ? &*ground_truth : nullptr));
  } else {
    runs = sweep_alpha(target, before, cfg.attack.config,
                       ground_truth ? &*ground_truth : nullptr, cfg.attack.alphas);
  }

  char adir_name[64];
  std::snprintf(adir_name, sizeof(adir_name), "attack_%s_r%04d", cfg.attack.victim.c_str(),
                cfg.attack.round);
  const fs::path adir = rdir / adir_name;
  fs::create_directories(adir);

  nlohmann::json report;
  report["victim"] = cfg.attack.victim;
  report["round"] = cfg.attack.round;
  report["run_id"] = cfg.attack.run_id;
  report["learning_rate"] = eta;
  report["approximate"] = !compatible;
  report["ground_truth_available"] = ground_truth.has_value();
  report["runs"] = nlohmann::json::array();

  std::vector<Tensor> strips;
  for (size_t i = 0; i < runs.size(); ++i) {
    const AttackReport& r = runs[i];
    nlohmann::json rj = r.to_json();
    if (!compatible) rj["target_provenance"] = "recovered_approximate";
    char prefix[32];
    std::snprintf(prefix, sizeof(prefix), "alpha_%04.0f", r.alpha * 1000);
    write_png_gray8((adir / (std::string(prefix) + "_reconstruction.png")).string(),
                    r.reconstructed_image);
    write_png_gray8((adir / (std::string(prefix) + "_mask.png")).string(), r.reconstructed_mask);
    if (!r.snapshots.empty()) {
      write_filmstrip((adir / (std::string(prefix) + "_filmstrip.png")).string(), r.snapshots);
      strips.push_back(assemble_filmstrip(r.snapshots));
    }
    std::ofstream trace(adir / (std::string(prefix) + "_loss_trace.csv"));
    trace << "iteration,loss\n";
    for (size_t t = 0; t < r.loss_trace.size(); ++t)
      trace << (t + 1) << "," << r.loss_trace[t] << "\n";
    rj["files"] = {{"reconstruction", std::string(prefix) + "_reconstruction.png"},
                   {"mask", std::string(prefix) + "_mask.png"},
                   {"filmstrip", std::string(prefix) + "_filmstrip.png"},
                   {"loss_trace", std::string(prefix) + "_loss_trace.csv"}};
    report["runs"].push_back(rj);
  }
  if (!strips.empty())
    write_png_gray8((adir / "filmstrip_montage.png").string(), vstack_images(strips));
  if (ground_truth) write_png_gray8((adir / "original.png").string(), ground_truth->image);

  {
    std::ofstream out(adir / "attack_report.json");
    out << report.dump(2) << "\n";
  }
  AttackOutcome out;
  out.attack_dir = adir.string();
  out.report = std::move(report);
  out.runs = std::move(runs);
  return out;
}

inline nlohmann::json cmd_evaluate(const std::string& pred_path, const std::string& ref_path,
                                   const std::string& context,
                                   const std::string& ref_mask_path = "") {
  const Tensor pred = read_png_gray(pred_path).to_unit_tensor();
  const Tensor ref = read_png_gray(ref_path).to_unit_tensor();
  pred.require_same_shape(ref, "evaluate");

  MetricsReport r;
  if (context == "segmentation") {
    r = evaluate_segmentation(pred, binarize(ref, 0.5));
  } else if (context == "reconstruction") {
    SemSample original;
    original.id = ref_path;
    original.image = ref;
    bool reference_resegmented = false;
    if (!ref_mask_path.empty()) {
      original.mask = binarize(read_png_gray(ref_mask_path).to_unit_tensor(), 0.5);
    } else {
      original.mask = unsupervised_resegment(ref).mask;  // no ground truth supplied
      reference_resegmented = true;
    }
    r = evaluate_reconstruction(pred, original);
    nlohmann::json j = r.to_json();
    j["reference_resegmented"] = reference_resegmented;
    return j;
  } else {
    throw ConfigError("evaluate: context must be 'segmentation' or 'reconstruction'");
  }
  return r.to_json();
}

// Scans completed runs and emits the comparison table, per-round metric
// curves grouped by run, and the attack metric table with a filmstrip
// montage. Returns false when some rows had to be skipped.
inline bool cmd_report(const std::string& output_dir) {
  namespace fs = std::filesystem;
  const fs::path runs_root = fs::path(output_dir) / "runs";
  if (!fs::exists(runs_root)) throw MissingInputError("no runs directory under " + output_dir);

  bool complete = true;
  struct RunData {
    nlohmann::json summary;
    std::vector<nlohmann::json> rounds;
  };
  std::vector<RunData> runs;
  std::vector<fs::path> attack_reports;

  std::vector<fs::path> run_dirs;
  for (const auto& entry : fs::directory_iterator(runs_root))
    if (entry.is_directory()) run_dirs.push_back(entry.path());
  std::sort(run_dirs.begin(), run_dirs.end());

  for (const auto& dir : run_dirs) {
    if (!fs::exists(dir / "run_summary.json")) continue;
    RunData rd;
    try {
      std::ifstream in(dir / "run_summary.json");
      in >> rd.summary;
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping unreadable summary in " << dir << ": " << e.what() << "\n";
      complete = false;
      continue;
    }
    std::ifstream log(dir / "rounds.jsonl");
    std::string line;
    int lineno = 0;
    while (std::getline(log, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        rd.rounds.push_back(nlohmann::json::parse(line));
      } catch (const std::exception&) {
        std::cerr << "warning: " << (dir / "rounds.jsonl").string() << ":" << lineno
                  << ": corrupted row skipped\n";
        complete = false;
      }
    }
    for (const auto& sub : fs::directory_iterator(dir))
      if (sub.is_directory() && fs::exists(sub.path() / "attack_report.json"))
        attack_reports.push_back(sub.path() / "attack_report.json");
    runs.push_back(std::move(rd));
  }
  if (runs.empty()) throw MissingInputError("no completed runs under " + runs_root.string());

  const fs::path report_dir = fs::path(output_dir) / "report";
  fs::create_directories(report_dir);

  {
    std::ofstream tsv(report_dir / "results_table.tsv");
    tsv << "run_id\tmode\tclients\ttrain_samples\trounds\tloss\tiou\tmse\tssim\twall_s\n";
    for (const auto& rd : runs) {
      const auto& s = rd.summary;
      tsv << s.value("run_id", std::string("?")) << "\t" << s.value("mode", std::string("?"))
          << "\t" << s.value("client_count", 0) << "\t" << s.value("train_samples", int64_t{0})
          << "\t" << s.value("rounds", 0) << "\t";
      if (s.contains("final")) {
        const auto& f = s.at("final");
        tsv << f.value("loss", 0.0) << "\t" << f.value("iou", 0.0) << "\t" << f.value("mse", 0.0)
            << "\t" << f.value("ssim", 0.0) << "\t";
      } else {
        tsv << "-\t-\t-\t-\t";
      }
      tsv << s.value("wall_ms_total", 0.0) / 1000.0 << "\n";
    }
  }

  auto curve = [&](const char* key, const char* title, const char* fname) {
    std::vector<Series> series;
    for (const auto& rd : runs) {
      Series s;
      s.label = rd.summary.value("run_id", std::string("?"));
      for (const auto& r : rd.rounds) {
        if (!r.contains("holdout")) continue;
        s.xs.push_back(r.value("round", 0));
        s.ys.push_back(r.at("holdout").value(key, 0.0));
      }
      if (!s.xs.empty()) series.push_back(std::move(s));
    }
    if (!series.empty())
      render_line_chart((report_dir / fname).string(), title, "round", key, series);
  };
  curve("loss", "test loss by round", "loss_vs_round.png");
  curve("iou", "test iou by round", "iou_vs_round.png");

  if (!attack_reports.empty()) {
    std::ofstream tsv(report_dir / "attack_table.tsv");
    tsv << "run_id\tvictim\tround\talpha\tprovenance\tfinal_loss\tmse\tpsnr_db\tssim\n";
    std::vector<Tensor> montages;
    for (const auto& path : attack_reports) {
      nlohmann::json aj;
      try {
        std::ifstream in(path);
        in >> aj;
      } catch (const std::exception&) {
        std::cerr << "warning: unreadable attack report " << path << "\n";
        complete = false;
        continue;
      }
      for (const auto& run : aj.value("runs", nlohmann::json::array())) {
        tsv << aj.value("run_id", std::string("?")) << "\t" << aj.value("victim", std::string("?"))
            << "\t" << aj.value("round", 0) << "\t" << run.value("alpha", 0.0) << "\t"
            << run.value("target_provenance", std::string("?")) << "\t"
            << run.value("final_loss", 0.0) << "\t";
        if (run.contains("metrics")) {
          const auto& m = run.at("metrics");
          tsv << m.value("mse", 0.0) << "\t"
              << (m.at("psnr_db").is_null() ? std::string("inf")
                                            : std::to_string(m.at("psnr_db").get<double>()))
              << "\t" << m.value("ssim", 0.0) << "\n";
        } else {
          tsv << "-\t-\t-\n";
        }
      }
      const fs::path montage = path.parent_path() / "filmstrip_montage.png";
      if (fs::exists(montage)) montages.push_back(read_png_gray(montage.string()).to_unit_tensor());
    }
    if (!montages.empty())
      write_png_gray8((report_dir / "attack_montage.png").string(), vstack_images(montages));
  }
  return complete;
}

}  // namespace fedsem
