#pragma once

// Quantitative protocols: Pointing Game scoring, the smoothing comparison,
// randomization (SR/FR) vs repeated-training experiments, Difference of
// Means across architectures, and CSV/JSON/overlay report emission.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "salforge/dataset.hpp"
#include "salforge/errors.hpp"
#include "salforge/parallel.hpp"
#include "salforge/saliency.hpp"
#include "salforge/train.hpp"

namespace salforge {

struct PointingConfig {
  int tau = 15;
  bool use_predicted_class = false;  // default: ground-truth target
  bool smoothed = true;              // which scoring the reports quote
  double sigma = 1.0;

  void validate() const {
    if (tau < 0) throw ConfigError("tau must be >= 0");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
  }
};

struct PointingSampleRecord {
  std::string id;
  int x = 0;
  int y = 0;
  bool hit = false;
};

struct PointingResult {
  int hits = 0;
  int misses = 0;
  double accuracy = 0.0;
  std::vector<PointingSampleRecord> records;
};

// Argmax = first maximal pixel in row-major order; a hit means the argmax
// lies inside any box dilated by tau on all four sides (clamped to bounds).
inline std::pair<bool, std::pair<int, int>> pointing_hit(
    const Tensor& map, const std::vector<BoundingBox>& boxes, int tau) {
  if (boxes.empty()) {
    throw InvalidArgument("pointing_hit: no boxes (clean samples are not scored)");
  }
  if (map.rank() != 2) {
    throw DimensionError("pointing_hit: expected rank-2 map");
  }
  if (tau < 0) throw InvalidArgument("pointing_hit: tau must be >= 0");
  const int h = static_cast<int>(map.extent(0));
  const int w = static_cast<int>(map.extent(1));
  const std::size_t flat = map.argmax_flat();
  const int y = static_cast<int>(flat / map.extent(1));
  const int x = static_cast<int>(flat % map.extent(1));
  bool hit = false;
  for (const auto& box : boxes) {
    const int x0 = std::max(0, box.x0 - tau);
    const int y0 = std::max(0, box.y0 - tau);
    const int x1 = std::min(w, box.x1 + tau);
    const int y1 = std::min(h, box.y1 + tau);
    if (x >= x0 && x < x1 && y >= y0 && y < y1) {
      hit = true;
      break;
    }
  }
  return {hit, {x, y}};
}

// A = T / (T + F).
inline PointingResult pointing_accuracy(const std::vector<bool>& hits) {
  if (hits.empty()) {
    throw InvalidArgument("pointing_accuracy: empty result list");
  }
  PointingResult result;
  for (bool hit : hits) {
    if (hit) {
      ++result.hits;
    } else {
      ++result.misses;
    }
  }
  result.accuracy = static_cast<double>(result.hits) /
                    static_cast<double>(result.hits + result.misses);
  return result;
}

// ---------------------------------------------------------------------------
// Per-model evaluation over a sample set

struct MethodEval {
  PointingResult raw;
  PointingResult smoothed;
};

// Computes every method's map once per label-1 sample (shared passes), then
// scores the raw map and its sigma-smoothed version against the boxes.
// Parallel over samples; outputs are merged in sample order.
inline std::map<std::string, MethodEval> evaluate_model_pointing(
    const Model& model, const std::vector<Sample>& samples,
    const std::vector<MethodSpec>& methods, const PointingConfig& config) {
  config.validate();
  std::vector<const Sample*> scored;
  for (const auto& sample : samples) {
    if (sample.label == 1 && !sample.boxes.empty()) {
      scored.push_back(&sample);
    }
  }
  if (scored.empty()) {
    throw InvalidArgument("evaluate_model_pointing: no boxed samples to score");
  }

  struct PerSample {
    std::vector<bool> raw_hits;
    std::vector<PointingSampleRecord> raw_records;
    std::vector<bool> smooth_hits;
    std::vector<PointingSampleRecord> smooth_records;
  };
  std::vector<PerSample> rows(scored.size());

  parallel_for(scored.size(), [&](std::size_t i) {
    const Sample& sample = *scored[i];
    int target = sample.label;
    if (config.use_predicted_class) {
      const ForwardOutput out = forward(model, sample.image);
      target = out.logits[1] > out.logits[0] ? 1 : 0;
    }
    const auto maps =
        compute_saliency_set(model, sample.image, target, methods);
    PerSample& row = rows[i];
    for (const auto& spec : methods) {
      const SaliencyMap& map = maps.at(method_id(spec));
      const auto [raw_hit, raw_xy] =
          pointing_hit(map.values, sample.boxes, config.tau);
      row.raw_hits.push_back(raw_hit);
      row.raw_records.push_back(
          {sample.id, raw_xy.first, raw_xy.second, raw_hit});
      const Tensor smooth = gaussian_smooth(map.values, config.sigma);
      const auto [smooth_hit, smooth_xy] =
          pointing_hit(smooth, sample.boxes, config.tau);
      row.smooth_hits.push_back(smooth_hit);
      row.smooth_records.push_back(
          {sample.id, smooth_xy.first, smooth_xy.second, smooth_hit});
    }
  });

  std::map<std::string, MethodEval> result;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<bool> raw_hits, smooth_hits;
    MethodEval eval;
    for (const auto& row : rows) {
      raw_hits.push_back(row.raw_hits[m]);
      eval.raw.records.push_back(row.raw_records[m]);
      smooth_hits.push_back(row.smooth_hits[m]);
      eval.smoothed.records.push_back(row.smooth_records[m]);
    }
    const PointingResult raw = pointing_accuracy(raw_hits);
    const PointingResult smooth = pointing_accuracy(smooth_hits);
    eval.raw.hits = raw.hits;
    eval.raw.misses = raw.misses;
    eval.raw.accuracy = raw.accuracy;
    eval.smoothed.hits = smooth.hits;
    eval.smoothed.misses = smooth.misses;
    eval.smoothed.accuracy = smooth.accuracy;
    result.emplace(method_id(methods[m]), std::move(eval));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Smoothing study

struct SmoothingRow {
  std::string method;
  double unsmoothed = 0.0;
  double smoothed = 0.0;
};

inline std::vector<SmoothingRow> smoothing_study(
    const Model& model, const std::vector<Sample>& samples,
    const std::vector<MethodSpec>& methods, const PointingConfig& config) {
  const auto table = evaluate_model_pointing(model, samples, methods, config);
  std::vector<SmoothingRow> rows;
  for (const auto& spec : methods) {
    const MethodEval& eval = table.at(method_id(spec));
    rows.push_back(
        {method_id(spec), eval.raw.accuracy, eval.smoothed.accuracy});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Randomization / repeatability experiments

struct ExperimentReport {
  std::string method;
  std::string condition;  // SR | FR | Repeated
  std::string arch;
  std::vector<double> run_accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // population
  int n_runs = 0;
};

inline void finalize_report(ExperimentReport& report) {
  report.n_runs = static_cast<int>(report.run_accuracies.size());
  if (report.n_runs == 0) return;
  double sum = 0.0;
  for (double a : report.run_accuracies) sum += a;
  report.mean = sum / report.n_runs;
  double sq = 0.0;
  for (double a : report.run_accuracies) {
    sq += (a - report.mean) * (a - report.mean);
  }
  report.stddev = std::sqrt(sq / report.n_runs);
}

struct ExperimentConfig {
  std::vector<MethodSpec> methods = benchmark_methods();
  std::vector<std::string> conditions = {"SR", "FR", "Repeated"};
  int n_repeats = 3;
  std::uint64_t seed = 1;  // per-cell seeds derive from this
  TrainConfig train;
  PointingConfig pointing;
  std::string work_dir = ".";  // checkpoints land here
};

// Per-condition seeds are pure functions of (base seed, condition, repeat),
// so results are independent of execution order and worker count.
inline std::uint64_t cell_seed(std::uint64_t base, const std::string& condition,
                               int repeat) {
  std::uint64_t tag = 0;
  for (char c : condition) tag = tag * 131 + static_cast<unsigned char>(c);
  return Rng::mix(Rng::mix(base, tag), static_cast<std::uint64_t>(repeat));
}

struct ExperimentResults {
  std::vector<ExperimentReport> reports;
  // Repeated-condition mean raw vs smoothed accuracy per method, from the
  // same evaluations (the smoothing comparison costs nothing extra).
  std::vector<SmoothingRow> smoothing;
};

// FR/SR rows evaluate randomized models (no training); Repeated rows train
// from scratch per seed and evaluate the best-validation checkpoint.
inline ExperimentResults run_experiment(
    const std::string& arch, const Dataset& dataset,
    const ExperimentConfig& config, const Model* sr_donor = nullptr) {
  namespace fs = std::filesystem;
  for (const auto& condition : config.conditions) {
    if (condition != "SR" && condition != "FR" && condition != "Repeated") {
      throw ConfigError("unknown experiment condition '" + condition + "'");
    }
    if (condition == "SR" && sr_donor == nullptr) {
      throw MissingResource("SR condition requires a donor checkpoint");
    }
  }
  const std::size_t input_size =
      static_cast<std::size_t>(dataset.manifest.gen.image_size);

  struct Cell {
    std::string condition;
    int repeat;
  };
  std::vector<Cell> cells;
  for (const auto& condition : config.conditions) {
    for (int r = 0; r < config.n_repeats; ++r) {
      cells.push_back({condition, r});
    }
  }
  std::vector<std::map<std::string, MethodEval>> cell_results(cells.size());

  parallel_for(cells.size(), [&](std::size_t ci) {
    const Cell& cell = cells[ci];
    const std::uint64_t seed = cell_seed(config.seed, cell.condition, cell.repeat);
    ModelConfig mc;
    mc.variant = arch;
    mc.input_size = input_size;
    mc.init_seed = seed;
    Model model = build_model(mc);
    if (cell.condition == "FR") {
      model = randomize_model(model, RandScheme::FullyRandom, seed);
    } else if (cell.condition == "SR") {
      model = randomize_model(model, RandScheme::SemiRandom, seed, sr_donor);
    } else {
      TrainConfig train = config.train;
      train.seed = seed;
      const std::string ckpt =
          (fs::path(config.work_dir) /
           (arch + "-repeat-" + std::to_string(cell.repeat) + ".ckpt"))
              .string();
      train_loop(model, dataset, train, ckpt);
      model = load_checkpoint(ckpt).model;
    }
    cell_results[ci] = evaluate_model_pointing(model, dataset.test,
                                               config.methods, config.pointing);
  });

  ExperimentResults results;
  for (const auto& condition : config.conditions) {
    for (const auto& spec : config.methods) {
      ExperimentReport report;
      report.method = method_id(spec);
      report.condition = condition;
      report.arch = arch;
      for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        if (cells[ci].condition != condition) continue;
        const MethodEval& eval = cell_results[ci].at(report.method);
        report.run_accuracies.push_back(config.pointing.smoothed
                                            ? eval.smoothed.accuracy
                                            : eval.raw.accuracy);
      }
      finalize_report(report);
      results.reports.push_back(std::move(report));
    }
  }
  for (const auto& spec : config.methods) {
    SmoothingRow row;
    row.method = method_id(spec);
    int n = 0;
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
      if (cells[ci].condition != "Repeated") continue;
      const MethodEval& eval = cell_results[ci].at(row.method);
      row.unsmoothed += eval.raw.accuracy;
      row.smoothed += eval.smoothed.accuracy;
      ++n;
    }
    if (n > 0) {
      row.unsmoothed /= n;
      row.smoothed /= n;
      results.smoothing.push_back(std::move(row));
    }
  }
  return results;
}

// Backward-friendly wrapper returning only the per-condition reports.
inline std::vector<ExperimentReport> randomization_experiment(
    const std::string& arch, const Dataset& dataset,
    const ExperimentConfig& config, const Model* sr_donor = nullptr) {
  return run_experiment(arch, dataset, config, sr_donor).reports;
}

// ---------------------------------------------------------------------------
// Difference of Means across architectures

struct DoMRecord {
  std::string method;
  std::string arch_a;
  std::string arch_b;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double dom = 0.0;
};

inline DoMRecord dom(const ExperimentReport& a, const ExperimentReport& b) {
  if (a.method != b.method) {
    throw InvalidArgument("dom: method mismatch ('" + a.method + "' vs '" +
                          b.method + "')");
  }
  DoMRecord record;
  record.method = a.method;
  record.arch_a = a.arch;
  record.arch_b = b.arch;
  record.mean_a = a.mean;
  record.mean_b = b.mean;
  record.dom = std::abs(a.mean - b.mean);
  return record;
}

// ---------------------------------------------------------------------------
// Report emission

namespace detail {

inline std::string fixed9(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.9f", v);
  return buffer;
}

}  // namespace detail

inline void emit_experiment_csv(const std::vector<ExperimentReport>& reports,
                                const std::string& path) {
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << "method,condition,arch,mean,std,n_runs\n";
  for (const auto& r : reports) {
    file << r.method << ',' << r.condition << ',' << r.arch << ','
         << detail::fixed9(r.mean) << ',' << detail::fixed9(r.stddev) << ','
         << r.n_runs << '\n';
  }
  if (!file) throw IoError("short write to '" + path + "'");
}

inline std::vector<ExperimentReport> parse_experiment_csv(
    const std::string& path) {
  std::ifstream file(path);
  if (!file) throw MissingResource("report '" + path + "' not found");
  std::vector<ExperimentReport> reports;
  std::string line;
  if (!std::getline(file, line)) throw ParseError("empty CSV '" + path + "'");
  if (line != "method,condition,arch,mean,std,n_runs") {
    throw ParseError("unexpected CSV header in '" + path + "'");
  }
  int line_no = 1;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 6) {
      throw ParseError("CSV '" + path + "' line " + std::to_string(line_no) +
                       ": expected 6 fields");
    }
    ExperimentReport r;
    r.method = fields[0];
    r.condition = fields[1];
    r.arch = fields[2];
    r.mean = std::stod(fields[3]);
    r.stddev = std::stod(fields[4]);
    r.n_runs = std::stoi(fields[5]);
    reports.push_back(std::move(r));
  }
  return reports;
}

inline void emit_smoothing_csv(const std::vector<SmoothingRow>& rows,
                               const std::string& arch,
                               const std::string& path) {
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << "method,arch,unsmoothed,smoothed\n";
  for (const auto& r : rows) {
    file << r.method << ',' << arch << ',' << detail::fixed9(r.unsmoothed)
         << ',' << detail::fixed9(r.smoothed) << '\n';
  }
}

inline void emit_dom_csv(const std::vector<DoMRecord>& records,
                         const std::string& path) {
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << "method,arch_a,mean_a,arch_b,mean_b,dom\n";
  for (const auto& r : records) {
    file << r.method << ',' << r.arch_a << ',' << detail::fixed9(r.mean_a)
         << ',' << r.arch_b << ',' << detail::fixed9(r.mean_b) << ','
         << detail::fixed9(r.dom) << '\n';
  }
}

inline nlohmann::json experiment_report_json(
    const std::vector<ExperimentReport>& reports,
    const PointingConfig& pointing) {
  nlohmann::json out;
  out["schema"] = "salforge-report-v1";
  out["pointing"] = {{"tau", pointing.tau},
                     {"smoothed", pointing.smoothed},
                     {"sigma", pointing.sigma},
                     {"target_class_policy", pointing.use_predicted_class
                                                 ? "predicted"
                                                 : "ground-truth"}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    rows.push_back({{"method", r.method},
                    {"condition", r.condition},
                    {"arch", r.arch},
                    {"runs", r.run_accuracies},
                    {"mean", r.mean},
                    {"std", r.stddev},
                    {"n_runs", r.n_runs}});
  }
  out["reports"] = std::move(rows);
  return out;
}

// Structural validation against docs/report.schema.json.
inline void validate_report_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "salforge-report-v1") {
    throw ValidationError("report JSON: wrong or missing schema tag");
  }
  if (!j.contains("pointing") || !j.at("pointing").is_object()) {
    throw ValidationError("report JSON: missing pointing object");
  }
  for (const char* key : {"tau", "smoothed", "sigma", "target_class_policy"}) {
    if (!j.at("pointing").contains(key)) {
      throw ValidationError(std::string("report JSON: pointing missing '") +
                            key + "'");
    }
  }
  if (!j.contains("reports") || !j.at("reports").is_array()) {
    throw ValidationError("report JSON: missing reports array");
  }
  for (const auto& row : j.at("reports")) {
    for (const char* key :
         {"method", "condition", "arch", "runs", "mean", "std", "n_runs"}) {
      if (!row.contains(key)) {
        throw ValidationError(std::string("report JSON: row missing '") + key +
                              "'");
      }
    }
    if (!row.at("runs").is_array() ||
        row.at("runs").size() !=
            static_cast<std::size_t>(row.at("n_runs").get<int>())) {
      throw ValidationError("report JSON: runs/n_runs mismatch for " +
                            row.at("method").get<std::string>());
    }
  }
}

// Qualitative overlay: saliency alpha-blended onto the image, box outlines
// burned white, argmax marked with a dark cross.
inline void write_overlay(const Sample& sample, const SaliencyMap& map,
                          const std::string& path) {
  const std::size_t h = sample.image.extent(1);
  const std::size_t w = sample.image.extent(2);
  require_same_shape(map.values,
                     sample.image.reshaped({h, w}), "write_overlay");
  const double lo = map.values.min_value();
  const double hi = map.values.max_value();
  Tensor out({h, w});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double norm = hi > lo ? (map.values[i] - lo) / (hi - lo) : 0.0;
    out[i] = 0.55 * sample.image[i] + 0.45 * norm;
  }
  auto put = [&](long long y, long long x, double v) {
    if (y >= 0 && y < static_cast<long long>(h) && x >= 0 &&
        x < static_cast<long long>(w)) {
      out(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v;
    }
  };
  for (const auto& box : sample.boxes) {
    for (int x = box.x0; x < box.x1; ++x) {
      put(box.y0, x, 1.0);
      put(box.y1 - 1, x, 1.0);
    }
    for (int y = box.y0; y < box.y1; ++y) {
      put(y, box.x0, 1.0);
      put(y, box.x1 - 1, 1.0);
    }
  }
  const std::size_t flat = map.values.argmax_flat();
  const long long ay = static_cast<long long>(flat / w);
  const long long ax = static_cast<long long>(flat % w);
  for (int d = -3; d <= 3; ++d) {
    put(ay + d, ax, 0.0);
    put(ay, ax + d, 0.0);
  }
  write_image(out, path);
}

}  // namespace salforge
