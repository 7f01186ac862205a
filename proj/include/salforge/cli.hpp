#pragma once

// Batch command-line front end: gen-data, train, saliency, pointing-game,
// experiment, report. Every run validates its config before touching the
// output directory, then writes a run-manifest JSON (config hash, seed,
// version) alongside its outputs. Exit codes: 0 success, 1 validation
// error, 2 runtime error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "salforge/checkpoint.hpp"
#include "salforge/dataset.hpp"
#include "salforge/errors.hpp"
#include "salforge/eval.hpp"
#include "salforge/net.hpp"
#include "salforge/saliency.hpp"
#include "salforge/train.hpp"

namespace salforge::cli {

constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw MissingResource("config '" + path + "' not found");
  try {
    nlohmann::json j;
    file >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
}

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError(what + ": unknown key '" + it.key() + "'");
    }
  }
}

// Seed precedence: --seed flag > SALFORGE_SEED env > config value.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                                  std::uint64_t config_value) {
  if (flag.has_value()) return *flag;
  if (const char* env = std::getenv("SALFORGE_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("SALFORGE_SEED is not an integer: '" +
                        std::string(env) + "'");
    }
  }
  return config_value;
}

inline void write_run_manifest(const std::string& out_dir,
                               const std::string& command,
                               const nlohmann::json& config,
                               std::uint64_t seed,
                               const nlohmann::json& extra = {}) {
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["config"] = config;
  manifest["config_hash"] = fnv1a(config.dump());
  manifest["seed"] = seed;
  manifest["version"] = kVersion;
  manifest["workers"] = worker_count();
  if (!extra.is_null()) manifest["extra"] = extra;
  std::ofstream file(fs::path(out_dir) / "run-manifest.json");
  if (!file) throw IoError("cannot write run-manifest in '" + out_dir + "'");
  file << manifest.dump(2) << '\n';
}

inline SplitFractions fractions_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"train", "val", "test"}, "fractions");
  SplitFractions f;
  f.train = j.value("train", f.train);
  f.val = j.value("val", f.val);
  f.test = j.value("test", f.test);
  return f;
}

inline PointingConfig pointing_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"tau", "smoothed", "sigma", "target_class_policy"},
                      "pointing");
  PointingConfig p;
  p.tau = j.value("tau", p.tau);
  p.smoothed = j.value("smoothed", p.smoothed);
  p.sigma = j.value("sigma", p.sigma);
  const std::string policy = j.value("target_class_policy", "ground-truth");
  if (policy == "predicted") {
    p.use_predicted_class = true;
  } else if (policy != "ground-truth") {
    throw ConfigError("pointing: unknown target_class_policy '" + policy + "'");
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// gen-data

inline int cmd_gen_data(const std::string& config_path,
                        const std::string& out_dir,
                        const std::optional<std::uint64_t>& seed_flag) {
  nlohmann::json config = load_json(config_path);
  reject_unknown_keys(config, {"dataset", "fractions"}, "gen-data config");
  GenSpec spec = config.contains("dataset")
                     ? config.at("dataset").get<GenSpec>()
                     : GenSpec{};
  SplitFractions fractions;
  if (config.contains("fractions")) {
    fractions = fractions_from_json(config.at("fractions"));
  }
  spec.seed = resolve_seed(seed_flag, spec.seed);

  fs::create_directories(out_dir);
  write_run_manifest(out_dir, "gen-data", config, spec.seed);
  const DatasetManifest manifest =
      generate_and_write_dataset(spec, fractions, out_dir);
  std::cout << "generated " << manifest.records.size() << " samples in "
            << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const std::string& config_path,
                     const std::string& data_dir, const std::string& arch,
                     const std::string& out_dir,
                     const std::optional<std::uint64_t>& seed_flag) {
  nlohmann::json config = load_json(config_path);
  TrainConfig train = config.get<TrainConfig>();
  train.seed = resolve_seed(seed_flag, train.seed);
  train.validate();
  const Dataset dataset = load_dataset(data_dir);

  fs::create_directories(out_dir);
  write_run_manifest(out_dir, "train", config, train.seed,
                     {{"arch", arch}, {"data", data_dir}});

  ModelConfig mc;
  mc.variant = arch;
  mc.input_size = static_cast<std::size_t>(dataset.manifest.gen.image_size);
  mc.init_seed = train.seed;
  Model model = build_model(mc);
  const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
  const TrainReport report = train_loop(model, dataset, train, ckpt);

  std::ofstream report_file(fs::path(out_dir) / "train-report.json");
  report_file << train_report_json(report).dump(2) << '\n';
  std::cout << "best val accuracy " << report.best_val_accuracy << " at epoch "
            << report.best_epoch << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// saliency

inline int cmd_saliency(const std::string& model_path,
                        const std::string& data_dir, const std::string& method,
                        const std::string& split, int limit, bool smoothed,
                        const std::string& out_dir) {
  const MethodSpec spec = parse_method(method);
  const Checkpoint checkpoint = load_checkpoint(model_path);
  const Dataset dataset = load_dataset(data_dir);
  const std::vector<Sample>& samples = dataset.split(split);
  if (samples.empty()) {
    throw ConfigError("split '" + split + "' is empty");
  }

  fs::create_directories(out_dir);
  write_run_manifest(out_dir, "saliency",
                     {{"model", model_path},
                      {"method", method},
                      {"split", split},
                      {"smoothed", smoothed},
                      {"limit", limit}},
                     0);

  SaliencyOptions opts;
  opts.smoothed = smoothed;
  int written = 0;
  for (const auto& sample : samples) {
    if (limit > 0 && written >= limit) break;
    const SaliencyMap map = compute_saliency(
        checkpoint.model, sample.image, sample.label, spec, opts);
    const std::string stem =
        (fs::path(out_dir) / (sample.id + "-" + method)).string();
    write_saliency_pgm(map, stem + ".pgm");
    write_saliency_raw(map, stem);
    if (!sample.boxes.empty()) {
      write_overlay(sample, map, stem + "-overlay.pgm");
    }
    ++written;
  }
  std::cout << "wrote " << written << " saliency maps to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pointing-game

inline int cmd_pointing_game(const std::string& model_path,
                             const std::string& data_dir,
                             const std::string& method, int tau,
                             const std::string& split, bool smoothed,
                             const std::string& out_dir) {
  const MethodSpec spec = parse_method(method);
  PointingConfig pointing;
  pointing.tau = tau;
  pointing.smoothed = smoothed;
  pointing.validate();
  const Checkpoint checkpoint = load_checkpoint(model_path);
  const Dataset dataset = load_dataset(data_dir);

  fs::create_directories(out_dir);
  write_run_manifest(out_dir, "pointing-game",
                     {{"model", model_path},
                      {"method", method},
                      {"tau", tau},
                      {"split", split},
                      {"smoothed", smoothed}},
                     0);

  const auto table = evaluate_model_pointing(
      checkpoint.model, dataset.split(split), {spec}, pointing);
  const MethodEval& eval = table.at(method);
  const PointingResult& result = smoothed ? eval.smoothed : eval.raw;

  ExperimentReport row;
  row.method = method;
  row.condition = "Trained";
  row.arch = checkpoint.model.variant;
  row.run_accuracies = {result.accuracy};
  finalize_report(row);
  emit_experiment_csv({row}, (fs::path(out_dir) / "pointing.csv").string());
  std::cout << method << " A = " << result.accuracy << " (T=" << result.hits
            << ", F=" << result.misses << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// experiment grid

struct GridConfig {
  std::string name = "experiment";
  std::string dataset_path;            // mutually exclusive with dataset_gen
  std::optional<GenSpec> dataset_gen;
  SplitFractions fractions{2.0 / 3, 1.0 / 6, 1.0 / 6};
  std::vector<std::string> architectures = {"micro-res"};
  std::vector<MethodSpec> methods = benchmark_methods();
  std::vector<std::string> conditions = {"SR", "FR", "Repeated"};
  int n_repeats = 3;
  std::uint64_t seed = 1;
  TrainConfig train;
  PointingConfig pointing;
  bool smoothing_study = true;
  std::string donor_checkpoint;        // empty -> auto-train texture donor
  int donor_epochs = 4;
  int donor_n_per_class = 60;
  int overlays = 2;
  unsigned workers = 0;
};

inline GridConfig grid_from_json(const nlohmann::json& j) {
  reject_unknown_keys(
      j,
      {"name", "dataset", "fractions", "architectures", "methods",
       "conditions", "n_repeats", "seed", "train", "pointing",
       "smoothing_study", "donor", "overlays", "workers"},
      "experiment config");
  GridConfig grid;
  grid.name = j.value("name", grid.name);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown_keys(d, {"path", "generate"}, "experiment dataset");
    if (d.contains("path") && d.contains("generate")) {
      throw ConfigError("dataset: give either path or generate, not both");
    }
    if (d.contains("path")) {
      grid.dataset_path = d.at("path").get<std::string>();
    } else if (d.contains("generate")) {
      grid.dataset_gen = d.at("generate").get<GenSpec>();
    }
  }
  if (!j.contains("dataset") ||
      (grid.dataset_path.empty() && !grid.dataset_gen.has_value())) {
    throw ConfigError("experiment config: dataset.path or dataset.generate required");
  }
  if (j.contains("fractions")) {
    grid.fractions = fractions_from_json(j.at("fractions"));
  }
  if (j.contains("architectures")) {
    grid.architectures = j.at("architectures").get<std::vector<std::string>>();
  }
  if (j.contains("methods")) {
    grid.methods.clear();
    for (const auto& id : j.at("methods")) {
      grid.methods.push_back(parse_method(id.get<std::string>()));
    }
  }
  if (j.contains("conditions")) {
    grid.conditions = j.at("conditions").get<std::vector<std::string>>();
  }
  grid.n_repeats = j.value("n_repeats", grid.n_repeats);
  grid.seed = j.value("seed", grid.seed);
  if (j.contains("train")) grid.train = j.at("train").get<TrainConfig>();
  if (j.contains("pointing")) {
    grid.pointing = pointing_from_json(j.at("pointing"));
  }
  grid.smoothing_study = j.value("smoothing_study", grid.smoothing_study);
  if (j.contains("donor")) {
    const auto& d = j.at("donor");
    reject_unknown_keys(d, {"checkpoint", "epochs", "n_per_class"},
                        "experiment donor");
    grid.donor_checkpoint = d.value("checkpoint", "");
    grid.donor_epochs = d.value("epochs", grid.donor_epochs);
    grid.donor_n_per_class = d.value("n_per_class", grid.donor_n_per_class);
  }
  grid.overlays = j.value("overlays", grid.overlays);
  grid.workers = j.value("workers", grid.workers);
  if (grid.architectures.empty() || grid.methods.empty() ||
      grid.conditions.empty() || grid.n_repeats < 1) {
    throw ConfigError("experiment config: empty grid axis");
  }
  return grid;
}

// Trains the semi-randomized donor on an object-free texture task: same
// image geometry, different objective, so SR really is "pretrained features,
// random head".
inline Model train_texture_donor(const std::string& arch, int image_size,
                                 const GridConfig& grid,
                                 const std::string& out_dir) {
  GenSpec spec = genspec_preset("texture");
  spec.image_size = image_size;
  spec.n_per_class = grid.donor_n_per_class;
  spec.seed = Rng::mix(grid.seed, fnv1a("donor-data"));
  const std::string data_dir =
      (fs::path(out_dir) / ("donor-data-" + arch)).string();
  generate_and_write_dataset(spec, SplitFractions{0.75, 0.25, 0.0}, data_dir);
  const Dataset dataset = load_dataset(data_dir);

  ModelConfig mc;
  mc.variant = arch;
  mc.input_size = static_cast<std::size_t>(image_size);
  mc.init_seed = Rng::mix(grid.seed, fnv1a("donor-init-" + arch));
  Model model = build_model(mc);
  TrainConfig train = grid.train;
  train.epochs = grid.donor_epochs;
  train.seed = Rng::mix(grid.seed, fnv1a("donor-train-" + arch));
  const std::string ckpt =
      (fs::path(out_dir) / ("donor-" + arch + ".ckpt")).string();
  train_loop(model, dataset, train, ckpt);
  return load_checkpoint(ckpt).model;
}

inline int cmd_experiment(const std::string& config_path,
                          const std::string& out_dir,
                          const std::optional<std::uint64_t>& seed_flag) {
  nlohmann::json config = load_json(config_path);
  GridConfig grid = grid_from_json(config);
  grid.seed = resolve_seed(seed_flag, grid.seed);
  if (grid.workers > 0) set_worker_count(grid.workers);

  fs::create_directories(out_dir);
  write_run_manifest(out_dir, "experiment", config, grid.seed);

  // Resolve the dataset; inline generation lands under the output dir so
  // input directories are never written to.
  std::string data_dir = grid.dataset_path;
  if (grid.dataset_gen.has_value()) {
    data_dir = (fs::path(out_dir) / "dataset").string();
    generate_and_write_dataset(*grid.dataset_gen, grid.fractions, data_dir);
  }
  const Dataset dataset = load_dataset(data_dir);
  const int image_size = dataset.manifest.gen.image_size;

  const bool needs_donor =
      std::find(grid.conditions.begin(), grid.conditions.end(), "SR") !=
      grid.conditions.end();

  std::vector<ExperimentReport> all_reports;
  std::map<std::string, std::vector<SmoothingRow>> smoothing_by_arch;
  nlohmann::json failures = nlohmann::json::array();

  for (const auto& arch : grid.architectures) {
    std::optional<Model> donor;
    std::string donor_error;
    if (needs_donor) {
      try {
        if (!grid.donor_checkpoint.empty()) {
          donor = load_checkpoint(grid.donor_checkpoint).model;
        } else {
          donor = train_texture_donor(arch, image_size, grid, out_dir);
        }
      } catch (const std::exception& e) {
        donor_error = e.what();  // only SR cells depend on the donor
      }
    }
    for (const auto& condition : grid.conditions) {
      if (condition == "SR" && !donor_error.empty()) {
        failures.push_back(
            {{"cell", arch + "/SR"}, {"error", "donor: " + donor_error}});
        continue;
      }
      ExperimentConfig cell;
      cell.methods = grid.methods;
      cell.conditions = {condition};
      cell.n_repeats = grid.n_repeats;
      cell.seed = grid.seed;
      cell.train = grid.train;
      cell.pointing = grid.pointing;
      cell.work_dir = (fs::path(out_dir) / ("checkpoints-" + arch)).string();
      fs::create_directories(cell.work_dir);
      try {
        const ExperimentResults results = run_experiment(
            arch, dataset, cell, donor.has_value() ? &*donor : nullptr);
        all_reports.insert(all_reports.end(), results.reports.begin(),
                           results.reports.end());
        if (condition == "Repeated" && grid.smoothing_study) {
          smoothing_by_arch[arch] = results.smoothing;
        }
      } catch (const std::exception& e) {
        failures.push_back(
            {{"cell", arch + "/" + condition}, {"error", e.what()}});
      }
    }
  }

  // Flush everything that completed, even if some cells failed.
  for (const auto& arch : grid.architectures) {
    std::vector<ExperimentReport> arch_rows;
    for (const auto& r : all_reports) {
      if (r.arch == arch) arch_rows.push_back(r);
    }
    if (!arch_rows.empty()) {
      emit_experiment_csv(
          arch_rows,
          (fs::path(out_dir) / ("randomization-" + arch + ".csv")).string());
    }
    auto it = smoothing_by_arch.find(arch);
    if (it != smoothing_by_arch.end() && !it->second.empty()) {
      emit_smoothing_csv(
          it->second, arch,
          (fs::path(out_dir) / ("smoothing-" + arch + ".csv")).string());
    }
  }

  // DoM per architecture pair over Repeated rows.
  for (std::size_t a = 0; a < grid.architectures.size(); ++a) {
    for (std::size_t b = a + 1; b < grid.architectures.size(); ++b) {
      std::vector<DoMRecord> records;
      for (const auto& spec : grid.methods) {
        const std::string id = method_id(spec);
        const ExperimentReport* ra = nullptr;
        const ExperimentReport* rb = nullptr;
        for (const auto& r : all_reports) {
          if (r.method != id || r.condition != "Repeated") continue;
          if (r.arch == grid.architectures[a]) ra = &r;
          if (r.arch == grid.architectures[b]) rb = &r;
        }
        if (ra != nullptr && rb != nullptr) records.push_back(dom(*ra, *rb));
      }
      if (!records.empty()) {
        emit_dom_csv(records, (fs::path(out_dir) /
                               ("dom-" + grid.architectures[a] + "-vs-" +
                                grid.architectures[b] + ".csv"))
                                  .string());
      }
    }
  }

  nlohmann::json detail = experiment_report_json(all_reports, grid.pointing);
  detail["name"] = grid.name;
  detail["failures"] = failures;
  {
    std::ofstream file(fs::path(out_dir) / "detail.json");
    file << detail.dump(2) << '\n';
  }

  // Qualitative overlays from the repeat-0 trained checkpoint.
  const bool has_repeated =
      std::find(grid.conditions.begin(), grid.conditions.end(), "Repeated") !=
      grid.conditions.end();
  if (has_repeated && grid.overlays > 0 && failures.empty()) {
    for (const auto& arch : grid.architectures) {
      const std::string ckpt =
          (fs::path(out_dir) / ("checkpoints-" + arch) /
           (arch + "-repeat-0.ckpt"))
              .string();
      if (!fs::exists(ckpt)) continue;
      const Model model = load_checkpoint(ckpt).model;
      const std::string overlay_dir =
          (fs::path(out_dir) / "overlays").string();
      fs::create_directories(overlay_dir);
      int emitted = 0;
      for (const auto& sample : dataset.test) {
        if (sample.label != 1 || sample.boxes.empty()) continue;
        if (emitted >= grid.overlays) break;
        const auto maps = compute_saliency_set(model, sample.image,
                                               sample.label, grid.methods);
        for (const auto& [id, map] : maps) {
          write_overlay(sample, map,
                        (fs::path(overlay_dir) /
                         (arch + "-" + sample.id + "-" + id + ".pgm"))
                            .string());
        }
        ++emitted;
      }
    }
  }

  if (!failures.empty()) {
    std::cerr << failures.size() << " grid cell(s) failed; see detail.json\n";
    return 2;
  }
  std::cout << "experiment '" << grid.name << "' complete: "
            << all_reports.size() << " rows in " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report (re-emit CSV from a detail JSON)

inline int cmd_report(const std::string& in_path, const std::string& out_dir) {
  const nlohmann::json detail = load_json(in_path);
  validate_report_json(detail);
  std::vector<ExperimentReport> reports;
  for (const auto& row : detail.at("reports")) {
    ExperimentReport r;
    r.method = row.at("method").get<std::string>();
    r.condition = row.at("condition").get<std::string>();
    r.arch = row.at("arch").get<std::string>();
    r.run_accuracies = row.at("runs").get<std::vector<double>>();
    finalize_report(r);
    reports.push_back(std::move(r));
  }
  fs::create_directories(out_dir);
  write_run_manifest(out_dir, "report", {{"in", in_path}}, 0);
  emit_experiment_csv(reports, (fs::path(out_dir) / "report.csv").string());
  std::cout << "re-emitted " << reports.size() << " rows\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dispatch

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"salforge: saliency-map toolkit over a micro convnet"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, data_dir, model_path, method, split;
  std::string arch = "micro-res";
  std::string in_path;
  int tau = 15;
  int limit = 0;
  bool smoothed = false;
  std::optional<std::uint64_t> seed_flag;
  unsigned workers = 0;

  app.add_option("--workers", workers, "worker thread budget (0 = auto)");

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_flag,
                    "seed override (flag > SALFORGE_SEED > config)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "dataset JSON config")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  add_seed(gen);

  CLI::App* train = app.add_subcommand("train", "train a classifier");
  train->add_option("--config", config_path, "train JSON config")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--arch", arch, "micro-res | micro-eff");
  train->add_option("--out", out_dir, "output directory")->required();
  add_seed(train);

  CLI::App* sal = app.add_subcommand("saliency", "export saliency maps");
  sal->add_option("--model", model_path, "checkpoint")->required();
  sal->add_option("--data", data_dir, "dataset directory")->required();
  sal->add_option("--method", method, "method id")->required();
  sal->add_option("--split", split, "train|val|test")->default_val("test");
  sal->add_option("--limit", limit, "max samples (0 = all)");
  sal->add_flag("--smoothed", smoothed, "apply sigma=1 smoothing");
  sal->add_option("--out", out_dir, "output directory")->required();

  CLI::App* pg = app.add_subcommand("pointing-game", "score one method");
  pg->add_option("--model", model_path, "checkpoint")->required();
  pg->add_option("--data", data_dir, "dataset directory")->required();
  pg->add_option("--method", method, "method id")->required();
  pg->add_option("--tau", tau, "dilation offset in pixels");
  pg->add_option("--split", split, "train|val|test")->default_val("test");
  pg->add_flag("--smoothed", smoothed, "score smoothed maps");
  pg->add_option("--out", out_dir, "output directory")->required();

  CLI::App* exp = app.add_subcommand("experiment", "run an experiment grid");
  exp->add_option("--config", config_path, "grid JSON config")->required();
  exp->add_option("--out", out_dir, "output directory")->required();
  add_seed(exp);

  CLI::App* rep = app.add_subcommand("report", "re-emit CSV from detail JSON");
  rep->add_option("--in", in_path, "detail.json path")->required();
  rep->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n" << app.help() << std::flush;
    return 1;
  }

  if (workers > 0) set_worker_count(workers);

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, seed_flag);
    if (train->parsed()) {
      return cmd_train(config_path, data_dir, arch, out_dir, seed_flag);
    }
    if (sal->parsed()) {
      return cmd_saliency(model_path, data_dir, method, split, limit, smoothed,
                          out_dir);
    }
    if (pg->parsed()) {
      return cmd_pointing_game(model_path, data_dir, method, tau, split,
                               smoothed, out_dir);
    }
    if (exp->parsed()) return cmd_experiment(config_path, out_dir, seed_flag);
    if (rep->parsed()) return cmd_report(in_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 1;
  } catch (const MissingResource& e) {
    std::cerr << "missing resource: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

inline int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& arg : args) argv.push_back(arg.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace salforge::cli
