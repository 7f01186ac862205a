#pragma once

// Binary PGM (P5) image I/O and raw float64 map dumps. PGM keeps the
// datasets dependency-free and bit-exact; the .f64 dump plus JSON sidecar is
// for regression tests where 8-bit quantization would get in the way.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "salforge/errors.hpp"
#include "salforge/tensor.hpp"

namespace salforge {

// Accepts {H,W} or {1,H,W}; values must already be in [0,1].
inline void write_image(const Tensor& image, const std::string& path) {
  const Tensor* img = &image;
  Tensor squeezed;
  if (image.rank() == 3 && image.extent(0) == 1) {
    squeezed = image.reshaped({image.extent(1), image.extent(2)});
    img = &squeezed;
  }
  if (img->rank() != 2) {
    throw DimensionError("write_image: expected {H,W} or {1,H,W}, got " +
                         image.shape_string());
  }
  for (std::size_t i = 0; i < img->size(); ++i) {
    const double v = (*img)[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InvalidArgument("write_image: value " + std::to_string(v) +
                            " outside [0,1] at index " + std::to_string(i));
    }
  }
  const std::size_t h = img->extent(0);
  const std::size_t w = img->extent(1);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open '" + path + "' for writing");
  file << "P5\n" << w << " " << h << "\n255\n";
  std::string bytes(h * w, '\0');
  for (std::size_t i = 0; i < h * w; ++i) {
    bytes[i] = static_cast<char>(
        static_cast<unsigned char>(std::lround((*img)[i] * 255.0)));
  }
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("short write to '" + path + "'");
}

namespace detail {

struct PgmCursor {
  const std::string& bytes;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError("PGM parse error at byte " + std::to_string(pos) + ": " +
                     why);
  }
  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }
  std::size_t read_number() {
    skip_space_and_comments();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
      fail("expected decimal number");
    }
    std::size_t value = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
    }
    return value;
  }
};

}  // namespace detail

// Returns {1,H,W} with values in [0,1].
inline Tensor read_image(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw MissingResource("image '" + path + "' not found");
  const std::string bytes((std::istreambuf_iterator<char>(file)),
                          std::istreambuf_iterator<char>());
  detail::PgmCursor cur{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    cur.fail("not a P5 PGM header");
  }
  cur.pos = 2;
  const std::size_t w = cur.read_number();
  const std::size_t h = cur.read_number();
  const std::size_t maxval = cur.read_number();
  if (w == 0 || h == 0) cur.fail("zero image dimension");
  if (maxval != 255) cur.fail("unsupported maxval (only 255)");
  if (cur.pos >= bytes.size()) cur.fail("missing pixel data");
  ++cur.pos;  // single whitespace byte after maxval
  if (bytes.size() - cur.pos < h * w) {
    const std::size_t have = bytes.size() - cur.pos;
    cur.pos = bytes.size();
    cur.fail("truncated pixel data: need " + std::to_string(h * w) +
             " bytes, have " + std::to_string(have));
  }
  Tensor out({1, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    out[i] =
        static_cast<double>(static_cast<unsigned char>(bytes[cur.pos + i])) /
        255.0;
  }
  return out;
}

// Raw row-major little-endian float64 dump with a JSON sidecar describing
// shape and provenance. `sidecar_extra` is merged into the sidecar object.
inline void write_raw_f64(const Tensor& t, const std::string& path_prefix,
                          const nlohmann::json& sidecar_extra = {}) {
  std::ofstream file(path_prefix + ".f64", std::ios::binary);
  if (!file) throw IoError("cannot open '" + path_prefix + ".f64'");
  std::string blob;
  blob.reserve(t.size() * 8);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    double v = t[i];
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  file.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!file) throw IoError("short write to '" + path_prefix + ".f64'");

  nlohmann::json sidecar = sidecar_extra;
  sidecar["shape"] = t.shape();
  sidecar["dtype"] = "float64-le";
  std::ofstream meta(path_prefix + ".json");
  if (!meta) throw IoError("cannot open '" + path_prefix + ".json'");
  meta << sidecar.dump(2) << '\n';
}

inline Tensor read_raw_f64(const std::string& path_prefix) {
  std::ifstream meta(path_prefix + ".json");
  if (!meta) throw MissingResource("sidecar '" + path_prefix + ".json' not found");
  nlohmann::json sidecar;
  try {
    meta >> sidecar;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("sidecar '" + path_prefix + ".json': " + e.what());
  }
  const std::vector<std::size_t> shape =
      sidecar.at("shape").get<std::vector<std::size_t>>();
  Tensor t(shape);
  std::ifstream file(path_prefix + ".f64", std::ios::binary);
  if (!file) throw MissingResource("'" + path_prefix + ".f64' not found");
  const std::string blob((std::istreambuf_iterator<char>(file)),
                         std::istreambuf_iterator<char>());
  if (blob.size() != t.size() * 8) {
    throw ParseError("'" + path_prefix + ".f64': expected " +
                     std::to_string(t.size() * 8) + " bytes, got " +
                     std::to_string(blob.size()));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(blob[i * 8 + b]))
              << (8 * b);
    }
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    t[i] = v;
  }
  return t;
}

}  // namespace salforge
