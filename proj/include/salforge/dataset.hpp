#pragma once

// Synthetic localized-defect datasets: textured grayscale backgrounds with
// optional planted high-contrast objects and pixel-exact bounding boxes.
// Three presets:
//   fobj    1-3 small bright objects anywhere (foreign-object analogue)
//   lvot    exactly one small object near the image center
//   texture object-free two-class texture task (donor pretraining only)
// On disk: PGM images, JSONL annotations, and a manifest JSON embedding the
// generator spec for provenance.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "salforge/errors.hpp"
#include "salforge/io.hpp"
#include "salforge/kernels.hpp"
#include "salforge/rng.hpp"
#include "salforge/tensor.hpp"

namespace salforge {

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive-exclusive pixel coords

  bool operator==(const BoundingBox& o) const {
    return x0 == o.x0 && y0 == o.y0 && x1 == o.x1 && y1 == o.y1;
  }
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int area() const { return width() * height(); }
};

inline void validate_box(const BoundingBox& box, int image_w, int image_h,
                         const std::string& context) {
  if (box.x0 < 0 || box.y0 < 0 || box.x0 >= box.x1 || box.y0 >= box.y1 ||
      box.x1 > image_w || box.y1 > image_h) {
    throw ValidationError(context + ": box [" + std::to_string(box.x0) + "," +
                          std::to_string(box.y0) + "," +
                          std::to_string(box.x1) + "," +
                          std::to_string(box.y1) + "] out of bounds for " +
                          std::to_string(image_w) + "x" +
                          std::to_string(image_h));
  }
}

struct Sample {
  std::string id;
  Tensor image;  // {1,H,W}, values in [0,1]
  int label = 0;
  std::vector<BoundingBox> boxes;
  std::string group;
  std::string split;
};

struct GenSpec {
  std::string preset = "fobj";  // fobj | lvot | texture
  int n_per_class = 200;
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 3;
  int min_object_size = 7;
  int max_object_size = 13;
  double contrast_min = 0.30;
  double contrast_max = 0.44;
  int slices_per_group = 1;
  std::uint64_t seed = 1;
};

inline GenSpec genspec_preset(const std::string& name) {
  GenSpec spec;
  spec.preset = name;
  if (name == "fobj") {
    return spec;
  }
  if (name == "lvot") {
    spec.min_objects = 1;
    spec.max_objects = 1;
    spec.min_object_size = 3;
    spec.max_object_size = 6;
    spec.slices_per_group = 2;
    return spec;
  }
  if (name == "texture") {
    spec.min_objects = 0;
    spec.max_objects = 0;
    return spec;
  }
  throw ConfigError("unknown dataset preset '" + name + "'");
}

inline void to_json(nlohmann::json& j, const GenSpec& spec) {
  j = nlohmann::json{{"preset", spec.preset},
                     {"n_per_class", spec.n_per_class},
                     {"image_size", spec.image_size},
                     {"min_objects", spec.min_objects},
                     {"max_objects", spec.max_objects},
                     {"min_object_size", spec.min_object_size},
                     {"max_object_size", spec.max_object_size},
                     {"contrast_min", spec.contrast_min},
                     {"contrast_max", spec.contrast_max},
                     {"slices_per_group", spec.slices_per_group},
                     {"seed", spec.seed}};
}

inline void from_json(const nlohmann::json& j, GenSpec& spec) {
  static const std::set<std::string> known = {
      "preset",          "n_per_class",     "image_size",
      "min_objects",     "max_objects",     "min_object_size",
      "max_object_size", "contrast_min",    "contrast_max",
      "slices_per_group", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("dataset spec: unknown key '" + it.key() + "'");
    }
  }
  if (j.contains("preset")) spec = genspec_preset(j.at("preset").get<std::string>());
  if (j.contains("n_per_class")) j.at("n_per_class").get_to(spec.n_per_class);
  if (j.contains("image_size")) j.at("image_size").get_to(spec.image_size);
  if (j.contains("min_objects")) j.at("min_objects").get_to(spec.min_objects);
  if (j.contains("max_objects")) j.at("max_objects").get_to(spec.max_objects);
  if (j.contains("min_object_size")) j.at("min_object_size").get_to(spec.min_object_size);
  if (j.contains("max_object_size")) j.at("max_object_size").get_to(spec.max_object_size);
  if (j.contains("contrast_min")) j.at("contrast_min").get_to(spec.contrast_min);
  if (j.contains("contrast_max")) j.at("contrast_max").get_to(spec.contrast_max);
  if (j.contains("slices_per_group")) j.at("slices_per_group").get_to(spec.slices_per_group);
  if (j.contains("seed")) j.at("seed").get_to(spec.seed);
}

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the dataset directory
  int label = 0;
  std::vector<BoundingBox> boxes;
  std::string group;
  std::string split;
};

struct DatasetManifest {
  std::string name;
  GenSpec gen;
  std::vector<ManifestRecord> records;

  std::map<std::string, int> split_sizes() const {
    std::map<std::string, int> out;
    for (const auto& r : records) {
      if (!r.split.empty()) ++out[r.split];
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Generation

namespace detail {

inline Tensor noise_field(int size, double sigma, Rng& rng) {
  Tensor noise({static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
  return gaussian_smooth(noise, sigma);
}

inline void standardize_to(Tensor& field, double mean_target, double std_target,
                           double lo, double hi) {
  double mean = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) mean += field[i];
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double d = field[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(field.size());
  const double scale = std_target / std::sqrt(var + 1e-12);
  for (std::size_t i = 0; i < field.size(); ++i) {
    field[i] = std::clamp(mean_target + (field[i] - mean) * scale, lo, hi);
  }
}

// Bright anatomy-like distractors present in every image regardless of
// label: large smooth blobs peaking well above any planted defect. They
// dominate the raw image energy, so localizing the defect takes learned
// features rather than brightness.
inline void add_anatomy(Tensor& field, int size, Rng& rng) {
  const int count = rng.uniform_int(3, 5);
  const double r_lo = size / 8.0;
  const double r_hi = size / 4.5;
  for (int i = 0; i < count; ++i) {
    const double rx = rng.uniform(r_lo, r_hi);
    const double ry = rng.uniform(r_lo, r_hi);
    const double cx = rng.uniform(rx + 1.0, size - rx - 1.0);
    const double cy = rng.uniform(ry + 1.0, size - ry - 1.0);
    const double body = rng.uniform(0.50, 0.65);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        const double r2 = dx * dx + dy * dy;
        const double add = body * std::exp(-2.0 * r2);
        if (add > 1e-3) {
          field(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
              std::min(0.97, field(static_cast<std::size_t>(y),
                                   static_cast<std::size_t>(x)) +
                                 add);
        }
      }
    }
  }
}

// Blob-textured background in roughly [0.08, 0.50] with bright anatomy
// structures on top.
inline Tensor defect_background(int size, Rng& rng) {
  Tensor field = scaled(noise_field(size, 6.0, rng), 0.60);
  axpy(field, 0.30, noise_field(size, 2.5, rng));
  axpy(field, 0.10, noise_field(size, 1.0, rng));
  standardize_to(field, 0.32, 0.07, 0.08, 0.50);
  add_anatomy(field, size, rng);
  return field;
}

inline Tensor texture_background(int size, int texture_class, Rng& rng) {
  const double sigma = texture_class == 0 ? 5.0 : 1.2;
  Tensor field = noise_field(size, sigma, rng);
  standardize_to(field, 0.40, 0.12, 0.05, 0.65);
  return field;
}

inline double region_mean(const Tensor& img, int x0, int y0, int x1, int y1) {
  double acc = 0.0;
  int n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      acc += img(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      ++n;
    }
  }
  return n > 0 ? acc / n : 0.0;
}

inline double ring_mean(const Tensor& img, const BoundingBox& box, int dilate) {
  const int size = static_cast<int>(img.extent(0));
  const int x0 = std::max(0, box.x0 - dilate);
  const int y0 = std::max(0, box.y0 - dilate);
  const int x1 = std::min(size, box.x1 + dilate);
  const int y1 = std::min(size, box.y1 + dilate);
  double acc = 0.0;
  int n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) continue;
      acc += img(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      ++n;
    }
  }
  return n > 0 ? acc / n : 0.0;
}

struct PaintedObject {
  BoundingBox box;
  std::vector<std::pair<int, int>> pixels;  // (y, x) of painted pixels
};

// Paints one bright object (rectangle or ellipse) with a softened boundary
// and returns its tight box. Placement rejects bright background spots and
// overlap with earlier boxes so the contrast floor stays enforceable and the
// defect stays dimmer than the anatomy distractors. The brightness ceiling
// is relaxed stepwise if no dim spot exists.
inline std::optional<PaintedObject> paint_object(
    Tensor& img, const GenSpec& spec, bool centered,
    const std::vector<BoundingBox>& existing, Rng& rng) {
  const int size = spec.image_size;
  for (int attempt = 0; attempt < 500; ++attempt) {
    const double ring_ceiling = 0.40 + 0.06 * (attempt / 50);
    const int w = rng.uniform_int(spec.min_object_size, spec.max_object_size);
    const int h = rng.uniform_int(spec.min_object_size, spec.max_object_size);
    int x0, y0;
    if (centered) {
      const int lo_x = size / 3 - w / 2;
      const int hi_x = 2 * size / 3 - w / 2;
      const int lo_y = size / 3 - h / 2;
      const int hi_y = 2 * size / 3 - h / 2;
      x0 = rng.uniform_int(std::max(1, lo_x), std::max(1, hi_x));
      y0 = rng.uniform_int(std::max(1, lo_y), std::max(1, hi_y));
    } else {
      x0 = rng.uniform_int(1, size - w - 1);
      y0 = rng.uniform_int(1, size - h - 1);
    }
    const BoundingBox box{x0, y0, x0 + w, y0 + h};
    bool overlaps = false;
    for (const auto& other : existing) {
      if (box.x0 < other.x1 + 2 && other.x0 < box.x1 + 2 &&
          box.y0 < other.y1 + 2 && other.y0 < box.y1 + 2) {
        overlaps = true;
        break;
      }
    }
    if (overlaps) continue;
    if (ring_mean(img, box, 3) > ring_ceiling) continue;

    const bool ellipse = rng.bernoulli(0.5);
    const double contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
    PaintedObject obj;
    int min_x = size, min_y = size, max_x = -1, max_y = -1;
    const double cx = x0 + (w - 1) / 2.0;
    const double cy = y0 + (h - 1) / 2.0;
    const double ax = std::max(1.0, w / 2.0);
    const double ay = std::max(1.0, h / 2.0);
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) {
        double edge = 1.0;  // boundary pixels carry reduced contrast
        if (ellipse) {
          const double dx = (x - cx) / ax;
          const double dy = (y - cy) / ay;
          const double r2 = dx * dx + dy * dy;
          if (r2 > 1.0) continue;
          if (r2 > 0.6) edge = 0.5 + 0.5 * (1.0 - r2) / 0.4;
        } else {
          const int border = std::min(
              {x - x0, x0 + w - 1 - x, y - y0, y0 + h - 1 - y});
          if (border == 0) edge = 0.6;
        }
        obj.pixels.emplace_back(y, x);
        img(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            std::min(1.0, img(static_cast<std::size_t>(y),
                              static_cast<std::size_t>(x)) +
                              edge * contrast);
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
    obj.box = BoundingBox{min_x, min_y, max_x + 1, max_y + 1};
    if (obj.box.area() < 9) {
      // Too thin after the ellipse mask; undo is unnecessary (brightening a
      // couple of pixels reads as texture) but the box must not be recorded.
      continue;
    }
    // Enforce box-mean over ring-mean separation with margin for 8-bit
    // quantization.
    for (int bump = 0; bump < 24; ++bump) {
      const double inside =
          region_mean(img, obj.box.x0, obj.box.y0, obj.box.x1, obj.box.y1);
      const double ring = ring_mean(img, obj.box, 3);
      const double deficit = (spec.contrast_min + 0.01) - (inside - ring);
      if (deficit <= 0.0) break;
      for (const auto& [py, px] : obj.pixels) {
        img(static_cast<std::size_t>(py), static_cast<std::size_t>(px)) =
            std::min(1.0, img(static_cast<std::size_t>(py),
                              static_cast<std::size_t>(px)) +
                              deficit + 0.01);
      }
    }
    return obj;
  }
  return std::nullopt;
}

}  // namespace detail

// Generates one sample (image + boxes). Exposed for tests; generate_dataset
// drives it group by group.
inline Sample generate_sample(const GenSpec& spec, const std::string& id,
                              int label, const std::string& group, Rng& rng) {
  Sample sample;
  sample.id = id;
  sample.label = label;
  sample.group = group;
  const int size = spec.image_size;
  Tensor img = spec.preset == "texture"
                   ? detail::texture_background(size, label, rng)
                   : detail::defect_background(size, rng);
  if (spec.preset != "texture" && label == 1) {
    const int wanted = spec.min_objects == spec.max_objects
                           ? spec.min_objects
                           : rng.uniform_int(spec.min_objects, spec.max_objects);
    for (int i = 0; i < wanted; ++i) {
      auto obj = detail::paint_object(img, spec, spec.preset == "lvot",
                                      sample.boxes, rng);
      if (obj.has_value()) {
        sample.boxes.push_back(obj->box);
      }
    }
    if (sample.boxes.empty()) {
      throw ConfigError("could not place any object; image too small for "
                        "object size range");
    }
  }
  sample.image = img.reshaped({1, static_cast<std::size_t>(size),
                               static_cast<std::size_t>(size)});
  return sample;
}

inline DatasetManifest generate_dataset(const GenSpec& spec,
                                        const std::string& out_dir) {
  if (spec.image_size < 16) {
    throw ConfigError("image_size must be >= 16");
  }
  if (spec.n_per_class < 1) {
    throw ConfigError("n_per_class must be >= 1");
  }
  if (spec.preset != "texture" &&
      spec.max_object_size + 2 >= spec.image_size) {
    throw ConfigError("objects do not fit the image");
  }
  if (spec.slices_per_group < 1 ||
      spec.n_per_class % spec.slices_per_group != 0) {
    throw ConfigError("n_per_class must be divisible by slices_per_group");
  }

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");

  DatasetManifest manifest;
  manifest.name = spec.preset;
  manifest.gen = spec;

  Rng rng(spec.seed);
  const int groups_per_class = spec.n_per_class / spec.slices_per_group;
  int index = 0;
  for (int g = 0; g < groups_per_class; ++g) {
    for (int label = 0; label < 2; ++label) {
      char group_name[32];
      std::snprintf(group_name, sizeof(group_name), "grp-%04d-%d", g, label);
      for (int s = 0; s < spec.slices_per_group; ++s, ++index) {
        char id[32];
        std::snprintf(id, sizeof(id), "%s-%05d", spec.preset.c_str(), index);
        const Sample sample =
            generate_sample(spec, id, label, group_name, rng);
        ManifestRecord record;
        record.id = sample.id;
        record.path = "images/" + std::string(id) + ".pgm";
        record.label = sample.label;
        record.boxes = sample.boxes;
        record.group = sample.group;
        write_image(sample.image, (fs::path(out_dir) / record.path).string());
        manifest.records.push_back(std::move(record));
      }
    }
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Annotations (JSON Lines) and manifest JSON

inline void write_annotations(const DatasetManifest& manifest,
                              const std::string& path) {
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& r : manifest.records) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) {
      boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    }
    nlohmann::json line{{"id", r.id},
                        {"path", r.path},
                        {"label", r.label},
                        {"boxes", boxes}};
    if (!r.group.empty()) line["group"] = r.group;
    if (!r.split.empty()) line["split"] = r.split;
    file << line.dump() << '\n';
  }
  if (!file) throw IoError("short write to '" + path + "'");
}

// Validates per-record invariants; pass `image_size` to also bounds-check
// boxes. `allow_unboxed_positives` relaxes the label<->boxes biconditional
// for object-free presets (texture donor task).
inline DatasetManifest read_annotations(
    const std::string& path, std::optional<int> image_size = std::nullopt,
    bool allow_unboxed_positives = false) {
  std::ifstream file(path);
  if (!file) throw MissingResource("annotations '" + path + "' not found");
  DatasetManifest manifest;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("annotations line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.label = j.at("label").get<int>();
    r.group = j.value("group", "");
    r.split = j.value("split", "");
    for (const auto& b : j.at("boxes")) {
      if (!b.is_array() || b.size() != 4) {
        throw ValidationError("record '" + r.id + "': malformed box");
      }
      r.boxes.push_back(BoundingBox{b[0].get<int>(), b[1].get<int>(),
                                    b[2].get<int>(), b[3].get<int>()});
    }
    if (!seen.insert(r.id).second) {
      throw ValidationError("record '" + r.id + "': duplicate id");
    }
    if (r.label != 0 && r.label != 1) {
      throw ValidationError("record '" + r.id + "': label must be 0 or 1");
    }
    if (!allow_unboxed_positives && (r.label == 1) != !r.boxes.empty()) {
      throw ValidationError("record '" + r.id +
                            "': label/boxes biconditional violated");
    }
    if (r.label == 0 && !r.boxes.empty()) {
      throw ValidationError("record '" + r.id + "': clean sample with boxes");
    }
    if (image_size.has_value()) {
      for (const auto& b : r.boxes) {
        validate_box(b, *image_size, *image_size, "record '" + r.id + "'");
      }
    } else {
      for (const auto& b : r.boxes) {
        if (b.x0 < 0 || b.y0 < 0 || b.x0 >= b.x1 || b.y0 >= b.y1) {
          throw ValidationError("record '" + r.id + "': degenerate box");
        }
      }
    }
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

inline void write_manifest(const DatasetManifest& manifest,
                           const std::string& path) {
  nlohmann::json j;
  j["name"] = manifest.name;
  j["genspec"] = manifest.gen;
  j["split_sizes"] = manifest.split_sizes();
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : manifest.records) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.x0, b.y0, b.x1, b.y1});
    records.push_back({{"id", r.id},
                       {"path", r.path},
                       {"label", r.label},
                       {"boxes", boxes},
                       {"group", r.group},
                       {"split", r.split}});
  }
  j["records"] = std::move(records);
  std::ofstream file(path);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << j.dump(2) << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw MissingResource("manifest '" + path + "' not found");
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + path + "': " + e.what());
  }
  DatasetManifest manifest;
  manifest.name = j.at("name").get<std::string>();
  manifest.gen = j.at("genspec").get<GenSpec>();
  for (const auto& rj : j.at("records")) {
    ManifestRecord r;
    r.id = rj.at("id").get<std::string>();
    r.path = rj.at("path").get<std::string>();
    r.label = rj.at("label").get<int>();
    r.group = rj.value("group", "");
    r.split = rj.value("split", "");
    for (const auto& b : rj.at("boxes")) {
      r.boxes.push_back(BoundingBox{b[0].get<int>(), b[1].get<int>(),
                                    b[2].get<int>(), b[3].get<int>()});
    }
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Seeded, class-stratified, group-aware: all samples sharing a group land in
// one split. Stratification happens over groups (groups are label-pure).
inline void split_dataset(DatasetManifest& manifest,
                          const SplitFractions& fractions,
                          std::uint64_t seed) {
  if (std::abs(fractions.train + fractions.val + fractions.test - 1.0) >
      1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  struct Group {
    std::string name;
    int label;
    std::vector<std::size_t> members;
  };
  std::map<std::string, Group> groups;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    const std::string key = r.group.empty() ? "solo-" + r.id : r.group;
    auto [it, inserted] = groups.try_emplace(key, Group{key, r.label, {}});
    if (!inserted && it->second.label != r.label) {
      throw ValidationError("group '" + key + "' mixes labels");
    }
    it->second.members.push_back(i);
  }
  for (int label = 0; label < 2; ++label) {
    std::vector<const Group*> pool;
    for (const auto& [name, group] : groups) {
      if (group.label == label) pool.push_back(&group);
    }
    if (pool.empty()) continue;
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(pool);
    const std::size_t n = pool.size();
    const auto cut = [&](double f) {
      return static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
    };
    const std::size_t n_train = cut(fractions.train);
    const std::size_t n_val = cut(fractions.train + fractions.val) - n_train;
    if ((fractions.train > 0 && n_train == 0) ||
        (fractions.val > 0 && n_val == 0) ||
        (fractions.test > 0 && n_train + n_val == n)) {
      throw ConfigError("split fraction yields an empty split for label " +
                        std::to_string(label));
    }
    for (std::size_t gi = 0; gi < n; ++gi) {
      const char* split = gi < n_train           ? "train"
                          : gi < n_train + n_val ? "val"
                                                 : "test";
      for (std::size_t member : pool[gi]->members) {
        manifest.records[member].split = split;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Loading

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;

  const std::vector<Sample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InvalidArgument("unknown split '" + name + "'");
  }
};

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset dataset;
  dataset.manifest = read_manifest((fs::path(dir) / "manifest.json").string());
  const int size = dataset.manifest.gen.image_size;
  for (const auto& r : dataset.manifest.records) {
    Sample sample;
    sample.id = r.id;
    sample.label = r.label;
    sample.boxes = r.boxes;
    sample.group = r.group;
    sample.split = r.split;
    for (const auto& b : r.boxes) {
      validate_box(b, size, size, "record '" + r.id + "'");
    }
    sample.image = read_image((fs::path(dir) / r.path).string());
    if (sample.image.extent(1) != static_cast<std::size_t>(size) ||
        sample.image.extent(2) != static_cast<std::size_t>(size)) {
      throw ValidationError("record '" + r.id + "': image size mismatch");
    }
    if (r.split == "train") {
      dataset.train.push_back(std::move(sample));
    } else if (r.split == "val") {
      dataset.val.push_back(std::move(sample));
    } else if (r.split == "test") {
      dataset.test.push_back(std::move(sample));
    } else {
      dataset.train.push_back(std::move(sample));  // unsplit -> train
    }
  }
  return dataset;
}

// Convenience wrapper used by the CLI: generate, split, and persist.
inline DatasetManifest generate_and_write_dataset(const GenSpec& spec,
                                                  const SplitFractions& fractions,
                                                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  DatasetManifest manifest = generate_dataset(spec, out_dir);
  split_dataset(manifest, fractions, Rng::mix(spec.seed, 0x5b17));
  write_annotations(manifest, (fs::path(out_dir) / "annotations.jsonl").string());
  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return manifest;
}

}  // namespace salforge
