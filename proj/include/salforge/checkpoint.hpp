#pragma once

// Checkpoint file = one line of JSON manifest, then raw little-endian 64-bit
// float blobs. The manifest lists every tensor with its shape and byte
// offset into the binary section, plus the layer graph and training
// metadata, so a file reconstructs the model without external context.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "salforge/errors.hpp"
#include "salforge/net.hpp"

namespace salforge {

struct CheckpointMeta {
  std::uint64_t seed = 0;
  int epoch = -1;
  double val_accuracy = 0.0;
};

namespace detail {

inline void append_le_double(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

inline double read_le_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline nlohmann::json layer_to_json(const LayerSpec& layer) {
  return nlohmann::json{{"name", layer.name},
                        {"kind", to_string(layer.kind)},
                        {"in", layer.in_channels},
                        {"out", layer.out_channels},
                        {"kernel", layer.kernel},
                        {"stride", layer.stride},
                        {"pad", layer.pad},
                        {"family", to_string(layer.family)},
                        {"hookable", layer.hookable}};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec layer;
  layer.name = j.at("name").get<std::string>();
  layer.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  layer.in_channels = j.at("in").get<int>();
  layer.out_channels = j.at("out").get<int>();
  layer.kernel = j.at("kernel").get<int>();
  layer.stride = j.at("stride").get<int>();
  layer.pad = j.at("pad").get<int>();
  layer.family = activation_family_from_string(j.at("family").get<std::string>());
  layer.hookable = j.at("hookable").get<bool>();
  return layer;
}

}  // namespace detail

inline void save_checkpoint(const Model& model, const CheckpointMeta& meta,
                            const std::string& path) {
  nlohmann::json manifest;
  manifest["format"] = "salforge-ckpt-v1";
  manifest["variant"] = model.variant;
  manifest["activation_family"] = to_string(model.activation_family);
  manifest["input_size"] = model.input_size;
  manifest["metadata"] = {{"seed", meta.seed},
                          {"epoch", meta.epoch},
                          {"val_accuracy", meta.val_accuracy}};
  manifest["layers"] = nlohmann::json::array();
  for (const auto& layer : model.layers) {
    manifest["layers"].push_back(detail::layer_to_json(layer));
  }

  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto emit = [&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", blob.size()},
                       {"count", t.size()}});
    for (std::size_t i = 0; i < t.size(); ++i) {
      detail::append_le_double(blob, t[i]);
    }
  };
  for (const auto& [name, tensor] : model.params) emit(name, tensor);
  for (const auto& [name, tensor] : model.running) emit(name, tensor);
  manifest["tensors"] = std::move(tensors);

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << manifest.dump() << '\n';
  file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!file) throw IoError("short write to '" + path + "'");
}

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw MissingResource("checkpoint '" + path + "' not found");
  std::string line;
  if (!std::getline(file, line)) {
    throw ParseError("checkpoint '" + path + "': missing manifest line");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint '" + path + "': bad manifest: " + e.what());
  }
  if (manifest.value("format", "") != "salforge-ckpt-v1") {
    throw ParseError("checkpoint '" + path + "': unknown format");
  }

  std::string blob((std::istreambuf_iterator<char>(file)),
                   std::istreambuf_iterator<char>());

  Checkpoint out;
  out.model.variant = manifest.at("variant").get<std::string>();
  out.model.activation_family = activation_family_from_string(
      manifest.at("activation_family").get<std::string>());
  out.model.input_size = manifest.at("input_size").get<std::size_t>();
  for (const auto& j : manifest.at("layers")) {
    out.model.layers.push_back(detail::layer_from_json(j));
  }
  validate_layers(out.model.layers);

  const auto& meta = manifest.at("metadata");
  out.meta.seed = meta.at("seed").get<std::uint64_t>();
  out.meta.epoch = meta.at("epoch").get<int>();
  out.meta.val_accuracy = meta.at("val_accuracy").get<double>();

  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<std::size_t> shape =
        entry.at("shape").get<std::vector<std::size_t>>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    Tensor t(shape);
    if (t.size() != count) {
      throw ParseError("checkpoint tensor '" + name +
                       "': shape does not match count");
    }
    if (offset + count * 8 > blob.size()) {
      throw ParseError("checkpoint tensor '" + name +
                       "': blob out of bounds (offset " +
                       std::to_string(offset) + ")");
    }
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(blob.data()) + offset;
    for (std::size_t i = 0; i < count; ++i) {
      t[i] = detail::read_le_double(p + i * 8);
    }
    if (name.find(".running_") != std::string::npos) {
      out.model.running[name] = std::move(t);
    } else {
      out.model.params[name] = std::move(t);
    }
  }
  return out;
}

}  // namespace salforge
