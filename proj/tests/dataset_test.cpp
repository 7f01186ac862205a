#include "salforge/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "salforge/rng.hpp"

namespace salforge {
namespace {

namespace fs = std::filesystem;

std::string temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("salforge_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string file_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

TEST(WriteImage, QuantizationRule) {
  Tensor img({2, 2});
  img(0, 0) = 0.0;
  img(0, 1) = 1.0;
  img(1, 0) = 0.5;
  img(1, 1) = 0.5;
  const std::string dir = temp_dir("pgm_quant");
  const std::string path = dir + "/q.pgm";
  write_image(img, path);
  const std::string bytes = file_bytes(path);
  EXPECT_EQ(bytes.substr(0, 11), "P5\n2 2\n255\n");
  ASSERT_EQ(bytes.size(), 11u + 4u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 255);
  EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 128);
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 128);
}

TEST(WriteImage, OutOfRangeRejected) {
  Tensor img({2, 2}, 1.5);
  EXPECT_THROW(write_image(img, "/tmp/salforge_bad.pgm"), InvalidArgument);
}

TEST(ReadImage, RoundTripWithinQuantizationBound) {
  Rng rng(3);
  Tensor img({1, 24, 24});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  const std::string dir = temp_dir("pgm_roundtrip");
  const std::string path = dir + "/rt.pgm";
  write_image(img, path);
  const Tensor back = read_image(path);
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_LE(std::abs(back[i] - img[i]), 1.0 / 510.0 + 1e-12);
  }
}

TEST(ReadImage, TruncatedFileIsParseErrorWithOffset) {
  const std::string dir = temp_dir("pgm_trunc");
  const std::string path = dir + "/t.pgm";
  {
    std::ofstream f(path, std::ios::binary);
    f << "P5\n4 4\n255\n";
    f << "xx";  // 2 of 16 pixel bytes
  }
  try {
    read_image(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
}

TEST(ReadImage, GarbageHeaderIsParseError) {
  const std::string dir = temp_dir("pgm_garbage");
  const std::string path = dir + "/g.pgm";
  {
    std::ofstream f(path, std::ios::binary);
    f << "P6\n2 2\n255\n....";
  }
  EXPECT_THROW(read_image(path), ParseError);
}

TEST(GenerateDataset, SingleSamplePerClass) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 1;
  spec.min_objects = 1;
  spec.max_objects = 1;
  spec.image_size = 32;
  spec.seed = 5;
  const std::string dir = temp_dir("gen_single");
  const DatasetManifest manifest = generate_dataset(spec, dir);
  ASSERT_EQ(manifest.records.size(), 2u);
  int positives = 0;
  for (const auto& r : manifest.records) {
    if (r.label == 1) {
      ++positives;
      ASSERT_EQ(r.boxes.size(), 1u);
      validate_box(r.boxes[0], 32, 32, "generated");
    } else {
      EXPECT_TRUE(r.boxes.empty());
    }
  }
  EXPECT_EQ(positives, 1);
}

TEST(GenerateDataset, SameSeedGivesByteIdenticalFiles) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 4;
  spec.image_size = 32;
  spec.seed = 77;
  const std::string dir_a = temp_dir("gen_det_a");
  const std::string dir_b = temp_dir("gen_det_b");
  generate_and_write_dataset(spec, SplitFractions{0.5, 0.25, 0.25}, dir_a);
  generate_and_write_dataset(spec, SplitFractions{0.5, 0.25, 0.25}, dir_b);
  for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir_a);
    EXPECT_EQ(file_bytes(entry.path()), file_bytes(fs::path(dir_b) / rel))
        << rel;
  }
}

// Recompute box-interior vs surrounding-ring contrast from the files on disk
// (i.e. after 8-bit quantization).
TEST(GenerateDataset, ContrastFloorHoldsOnDisk) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 10;
  spec.image_size = 48;
  spec.seed = 11;
  const std::string dir = temp_dir("gen_contrast");
  const DatasetManifest manifest = generate_dataset(spec, dir);
  int boxes_checked = 0;
  for (const auto& r : manifest.records) {
    if (r.label == 0) continue;
    const Tensor img3 = read_image((fs::path(dir) / r.path).string());
    const Tensor img = img3.reshaped({48, 48});
    for (const auto& box : r.boxes) {
      const double inside =
          detail::region_mean(img, box.x0, box.y0, box.x1, box.y1);
      const double ring = detail::ring_mean(img, box, 3);
      EXPECT_GE(inside - ring, spec.contrast_min) << r.id;
      ++boxes_checked;
    }
  }
  EXPECT_GE(boxes_checked, 10);
}

TEST(GenerateDataset, LvotPresetIsSingleCenteredObject) {
  GenSpec spec = genspec_preset("lvot");
  spec.n_per_class = 6;
  spec.image_size = 64;
  spec.seed = 9;
  const std::string dir = temp_dir("gen_lvot");
  const DatasetManifest manifest = generate_dataset(spec, dir);
  for (const auto& r : manifest.records) {
    if (r.label == 0) continue;
    ASSERT_EQ(r.boxes.size(), 1u);
    const auto& b = r.boxes[0];
    const double cx = (b.x0 + b.x1) / 2.0;
    const double cy = (b.y0 + b.y1) / 2.0;
    EXPECT_GT(cx, 64 / 4.0) << r.id;
    EXPECT_LT(cx, 3 * 64 / 4.0) << r.id;
    EXPECT_GT(cy, 64 / 4.0) << r.id;
    EXPECT_LT(cy, 3 * 64 / 4.0) << r.id;
  }
}

TEST(GenerateDataset, TexturePresetHasNoBoxes) {
  GenSpec spec = genspec_preset("texture");
  spec.n_per_class = 4;
  spec.image_size = 32;
  const std::string dir = temp_dir("gen_texture");
  const DatasetManifest manifest = generate_dataset(spec, dir);
  for (const auto& r : manifest.records) {
    EXPECT_TRUE(r.boxes.empty());
  }
}

TEST(GenerateDataset, OversizedObjectRejected) {
  GenSpec spec = genspec_preset("fobj");
  spec.image_size = 16;
  spec.min_object_size = 15;
  spec.max_object_size = 20;
  EXPECT_THROW(generate_dataset(spec, temp_dir("gen_oversize")), ConfigError);
}

TEST(Annotations, PositiveWithoutBoxesRejected) {
  DatasetManifest manifest;
  ManifestRecord r;
  r.id = "s0";
  r.path = "images/s0.pgm";
  r.label = 1;  // no boxes
  manifest.records.push_back(r);
  const std::string dir = temp_dir("ann_invariant");
  const std::string path = dir + "/a.jsonl";
  write_annotations(manifest, path);
  EXPECT_THROW(read_annotations(path), ValidationError);
  // but fine for object-free presets
  EXPECT_NO_THROW(read_annotations(path, std::nullopt, true));
}

TEST(Annotations, RoundTripIsLossless) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 50;
  spec.image_size = 32;
  spec.seed = 21;
  const std::string dir = temp_dir("ann_roundtrip");
  DatasetManifest manifest = generate_dataset(spec, dir);
  split_dataset(manifest, SplitFractions{0.8, 0.1, 0.1}, 3);
  const std::string path = dir + "/annotations.jsonl";
  write_annotations(manifest, path);
  const DatasetManifest back = read_annotations(path, spec.image_size);
  ASSERT_EQ(back.records.size(), manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    EXPECT_EQ(back.records[i].id, manifest.records[i].id);
    EXPECT_EQ(back.records[i].path, manifest.records[i].path);
    EXPECT_EQ(back.records[i].label, manifest.records[i].label);
    EXPECT_EQ(back.records[i].group, manifest.records[i].group);
    EXPECT_EQ(back.records[i].split, manifest.records[i].split);
    ASSERT_EQ(back.records[i].boxes.size(), manifest.records[i].boxes.size());
    for (std::size_t bi = 0; bi < manifest.records[i].boxes.size(); ++bi) {
      EXPECT_TRUE(back.records[i].boxes[bi] == manifest.records[i].boxes[bi]);
    }
  }
}

TEST(Annotations, OutOfBoundsBoxNamesRecord) {
  const std::string dir = temp_dir("ann_oob");
  const std::string path = dir + "/a.jsonl";
  {
    std::ofstream f(path);
    f << R"({"id":"bad-1","path":"images/x.pgm","label":1,"boxes":[[2,2,40,6]]})"
      << "\n";
  }
  try {
    read_annotations(path, 32);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad-1"), std::string::npos);
  }
}

TEST(Annotations, DuplicateIdRejected) {
  const std::string dir = temp_dir("ann_dup");
  const std::string path = dir + "/a.jsonl";
  {
    std::ofstream f(path);
    f << R"({"id":"s","path":"p","label":0,"boxes":[]})" << "\n";
    f << R"({"id":"s","path":"q","label":0,"boxes":[]})" << "\n";
  }
  EXPECT_THROW(read_annotations(path), ValidationError);
}

TEST(SplitDataset, AllTrainFraction) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 5;
  spec.image_size = 32;
  const std::string dir = temp_dir("split_all_train");
  DatasetManifest manifest = generate_dataset(spec, dir);
  split_dataset(manifest, SplitFractions{1.0, 0.0, 0.0}, 1);
  for (const auto& r : manifest.records) {
    EXPECT_EQ(r.split, "train");
  }
}

TEST(SplitDataset, StratificationWithinOneSample) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 30;
  spec.image_size = 32;
  spec.seed = 31;
  const std::string dir = temp_dir("split_strat");
  DatasetManifest manifest = generate_dataset(spec, dir);
  split_dataset(manifest, SplitFractions{0.6, 0.2, 0.2}, 77);
  std::map<std::string, std::map<int, int>> counts;
  for (const auto& r : manifest.records) counts[r.split][r.label]++;
  for (const auto& [split, by_label] : counts) {
    EXPECT_LE(std::abs(by_label.at(0) - by_label.at(1)), 1) << split;
  }
}

TEST(SplitDataset, GroupsNeverStraddleSplits) {
  // Hand-built manifest with two-member groups.
  DatasetManifest manifest;
  for (int g = 0; g < 10; ++g) {
    for (int s = 0; s < 2; ++s) {
      ManifestRecord r;
      r.id = "s" + std::to_string(g) + "-" + std::to_string(s);
      r.path = "images/" + r.id + ".pgm";
      r.label = g % 2;
      if (r.label == 1) r.boxes.push_back({1, 1, 4, 4});
      r.group = "patient-" + std::to_string(g);
      manifest.records.push_back(r);
    }
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    DatasetManifest copy = manifest;
    split_dataset(copy, SplitFractions{0.6, 0.2, 0.2}, seed);
    std::map<std::string, std::set<std::string>> splits_by_group;
    for (const auto& r : copy.records) {
      splits_by_group[r.group].insert(r.split);
    }
    for (const auto& [group, splits] : splits_by_group) {
      EXPECT_EQ(splits.size(), 1u) << group << " seed " << seed;
    }
  }
}

TEST(SplitDataset, EmptySplitIsConfigError) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 2;
  spec.image_size = 32;
  const std::string dir = temp_dir("split_empty");
  DatasetManifest manifest = generate_dataset(spec, dir);
  EXPECT_THROW(split_dataset(manifest, SplitFractions{0.9, 0.05, 0.05}, 1),
               ConfigError);
}

TEST(SplitDataset, FractionsMustSumToOne) {
  DatasetManifest manifest;
  EXPECT_THROW(split_dataset(manifest, SplitFractions{0.5, 0.2, 0.2}, 1),
               ConfigError);
}

TEST(LoadDataset, RoundTripPreservesLabelBoxInvariant) {
  GenSpec spec = genspec_preset("fobj");
  spec.n_per_class = 8;
  spec.image_size = 32;
  spec.seed = 13;
  const std::string dir = temp_dir("load_roundtrip");
  generate_and_write_dataset(spec, SplitFractions{0.5, 0.25, 0.25}, dir);
  const Dataset dataset = load_dataset(dir);
  EXPECT_EQ(dataset.train.size() + dataset.val.size() + dataset.test.size(),
            16u);
  for (const auto& split : {dataset.train, dataset.val, dataset.test}) {
    for (const auto& sample : split) {
      EXPECT_EQ(sample.label == 1, !sample.boxes.empty()) << sample.id;
      EXPECT_GE(sample.image.min_value(), 0.0);
      EXPECT_LE(sample.image.max_value(), 1.0);
    }
  }
}

TEST(GenSpecJson, UnknownKeyRejected) {
  const nlohmann::json j{{"preset", "fobj"}, {"n_samples", 10}};
  GenSpec spec;
  EXPECT_THROW(j.get_to(spec), ConfigError);
}

}  // namespace
}  // namespace salforge
