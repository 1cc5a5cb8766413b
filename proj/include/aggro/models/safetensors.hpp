#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "aggro/error.hpp"
#include "json.hpp"

/// Reader/writer for the safetensors container: u64 little-endian header length,
/// JSON header, then raw row-major little-endian tensor data.
namespace aggro::safetensors {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

using Matrix = Eigen::MatrixXd;

struct Tensor {
  std::vector<std::int64_t> shape;
  Matrix data;  // 0-d and 1-d tensors become a single row
};

namespace detail {

inline double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1, exp = (h >> 10) & 0x1F, mant = h & 0x3FF;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp == 31) {
    v = mant ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(static_cast<double>(mant | 0x400), exp - 25);
  }
  return sign ? -v : v;
}

inline double bf16_to_double(std::uint16_t b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b) << 16;
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline std::size_t dtype_size(const std::string& dt) {
  if (dt == "F64") return 8;
  if (dt == "F32") return 4;
  if (dt == "F16" || dt == "BF16") return 2;
  throw InputError("unsupported safetensors dtype " + dt);
}

}  // namespace detail

inline std::map<std::string, Tensor> read(const std::filesystem::path& path, nlohmann::json* metadata = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (!in || header_len > (1ull << 30)) throw InputError(path.string() + ": bad safetensors header");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw InputError(path.string() + ": truncated header");
  const std::string blob{std::istreambuf_iterator<char>(in), {}};
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, info] : h.items()) {
    if (name == "__metadata__") {
      if (metadata) *metadata = info;
      continue;
    }
    const auto dtype = info.at("dtype").get<std::string>();
    const auto shape = info.at("shape").get<std::vector<std::int64_t>>();
    const auto offsets = info.at("data_offsets").get<std::vector<std::uint64_t>>();
    std::int64_t count = 1;
    for (auto d : shape) count *= d;
    const std::size_t width = detail::dtype_size(dtype);
    if (offsets.size() != 2 || offsets[1] > blob.size() || offsets[1] - offsets[0] != static_cast<std::uint64_t>(count) * width)
      throw InputError(path.string() + ": tensor '" + name + "' has inconsistent offsets");
    Eigen::Index rows = 1, cols = count;
    if (shape.size() >= 2) {
      cols = shape.back();
      rows = count / std::max<std::int64_t>(cols, 1);
    }
    Tensor t{shape, Matrix(rows, cols)};
    const char* p = blob.data() + offsets[0];
    for (std::int64_t k = 0; k < count; ++k) {
      double v = 0;
      if (dtype == "F64") {
        std::memcpy(&v, p + k * 8, 8);
      } else if (dtype == "F32") {
        float f;
        std::memcpy(&f, p + k * 4, 4);
        v = f;
      } else {
        std::uint16_t u;
        std::memcpy(&u, p + k * 2, 2);
        v = dtype == "F16" ? detail::half_to_double(u) : detail::bf16_to_double(u);
      }
      t.data(k / cols, k % cols) = v;
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

/// Writes F64 tensors; single-row matrices flagged in `vectors` are stored 1-d.
inline void write(const std::filesystem::path& path, const std::map<std::string, Matrix>& tensors,
                  const std::map<std::string, std::string>& metadata = {},
                  const std::vector<std::string>& vectors = {}) {
  nlohmann::json h = nlohmann::json::object();
  if (!metadata.empty()) h["__metadata__"] = metadata;
  std::uint64_t offset = 0;
  for (const auto& [name, m] : tensors) {
    const auto bytes = static_cast<std::uint64_t>(m.size()) * 8;
    const bool vec = std::find(vectors.begin(), vectors.end(), name) != vectors.end();
    h[name] = {{"dtype", "F64"},
               {"shape", vec ? std::vector<std::int64_t>{m.cols()} : std::vector<std::int64_t>{m.rows(), m.cols()}},
               {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string header = h.dump();
  while ((header.size() + 8) % 8) header.push_back(' ');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, m] : tensors) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * 8));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace aggro::safetensors
