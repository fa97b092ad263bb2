#pragma once

#include "cvd/models/param_set.hpp"
#include "cvd/pipeline/config.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace cvd {

inline constexpr int kCheckpointVersion = 1;
inline const std::string kCheckpointFormat = "cvd-checkpoint";

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, format, version, truncated, shape, dtype };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

template <typename Scalar>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? "f32" : "f64";
}

template <typename Scalar>
struct Checkpoint {
  ParamSet<Scalar> params;
  /// Config echo exactly as stored.
  nlohmann::ordered_json config;

  TrainConfig train_config() const { return config_from_json(config.dump()); }
};

namespace detail {

inline void put_le(std::string& out, const void* data, std::size_t width, std::size_t count) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* v = bytes + i * width;
    for (std::size_t k = 0; k < width; ++k) {
      out.push_back(static_cast<char>(std::endian::native == std::endian::little ? v[k] : v[width - 1 - k]));
    }
  }
}

inline void get_le(const char* src, void* data, std::size_t width, std::size_t count) {
  auto* bytes = static_cast<unsigned char*>(data);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t k = 0; k < width; ++k) {
      const std::size_t dst = std::endian::native == std::endian::little ? k : width - 1 - k;
      bytes[i * width + dst] = static_cast<unsigned char>(src[i * width + k]);
    }
}

/// Parameter names and shapes a config implies, used to validate loads.
std::map<std::string, Shape> expected_shapes(const TrainConfig& cfg);

}  // namespace detail

/// Layout: u64 LE header length, JSON header, then the LE tensor blob in
/// ParamSet (name) order.
template <typename Scalar>
std::string encode_checkpoint(const Checkpoint<Scalar>& ckpt) {
  nlohmann::ordered_json header;
  header["format"] = kCheckpointFormat;
  header["version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<Scalar>();
  header["config"] = ckpt.config;
  auto dir = nlohmann::ordered_json::array();
  std::string blob;
  for (const auto& [name, t] : ckpt.params) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = dtype_name<Scalar>();
    e["offset"] = blob.size();
    e["bytes"] = static_cast<std::size_t>(t.size()) * sizeof(Scalar);
    dir.push_back(e);
    detail::put_le(blob, t.data(), sizeof(Scalar), static_cast<std::size_t>(t.size()));
  }
  header["tensors"] = dir;
  header["blob_bytes"] = blob.size();
  const std::string text = header.dump();
  std::string out;
  const std::uint64_t len = text.size();
  detail::put_le(out, &len, sizeof len, 1);
  return out + text + blob;
}

template <typename Scalar>
void save_checkpoint(const Checkpoint<Scalar>& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for checkpoint " + path.string());
}

template <typename Scalar>
Checkpoint<Scalar> make_checkpoint(const ParamSet<Scalar>& params, const TrainConfig& cfg) {
  return {params, nlohmann::ordered_json::parse(config_to_json(cfg))};
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Parses and checks the header; returns it with the blob offset.
inline nlohmann::ordered_json checkpoint_header(const std::string& bytes, std::size_t& blob_offset) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 8) throw CheckpointError(K::truncated, "checkpoint: truncated header length");
  std::uint64_t len = 0;
  detail::get_le(bytes.data(), &len, sizeof len, 1);
  if (len > bytes.size() - 8) throw CheckpointError(K::truncated, "checkpoint: truncated header");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::format, std::string("checkpoint: malformed header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != kCheckpointFormat) {
    throw CheckpointError(K::format, "checkpoint: not a cvd checkpoint");
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError(K::version, "checkpoint: version mismatch (file " + header["version"].dump() +
                                          ", supported " + std::to_string(kCheckpointVersion) + ")");
  }
  blob_offset = 8 + len;
  return header;
}

inline std::string checkpoint_dtype(const std::filesystem::path& path) {
  std::size_t off = 0;
  return checkpoint_header(read_file_bytes(path), off).value("dtype", "");
}

template <typename Scalar>
Checkpoint<Scalar> decode_checkpoint(const std::string& bytes) {
  using K = CheckpointError::Kind;
  std::size_t off = 0;
  const auto header = checkpoint_header(bytes, off);
  if (header.value("dtype", "") != dtype_name<Scalar>()) {
    throw CheckpointError(K::dtype, "checkpoint: dtype mismatch (file " + header.value("dtype", "?") + ", requested " +
                                        dtype_name<Scalar>() + ")");
  }
  const std::size_t blob_bytes = header.at("blob_bytes").get<std::size_t>();
  if (bytes.size() - off < blob_bytes) {
    throw CheckpointError(K::truncated, "checkpoint: truncated blob (" + std::to_string(bytes.size() - off) + " of " +
                                            std::to_string(blob_bytes) + " bytes)");
  }
  if (bytes.size() - off > blob_bytes) throw CheckpointError(K::format, "checkpoint: trailing bytes after blob");
  Checkpoint<Scalar> ckpt;
  ckpt.config = header.at("config");
  const auto expected = detail::expected_shapes(ckpt.train_config());
  for (const auto& e : header.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto n = static_cast<std::size_t>(shape_size(shape));
    if (e.at("bytes").get<std::size_t>() != n * sizeof(Scalar) || offset + n * sizeof(Scalar) > blob_bytes) {
      throw CheckpointError(K::format, "checkpoint: bad directory entry for " + name);
    }
    auto it = expected.find(name);
    if (it == expected.end()) throw CheckpointError(K::shape, "checkpoint: shape mismatch, unexpected tensor " + name);
    if (it->second != shape) {
      throw CheckpointError(K::shape, "checkpoint: shape mismatch for " + name + ": file " + shape_string(shape) +
                                          ", config " + shape_string(it->second));
    }
    Tensor<Scalar> t(shape);
    detail::get_le(bytes.data() + off + offset, t.data(), sizeof(Scalar), n);
    ckpt.params.add(name, std::move(t));
  }
  if (ckpt.params.size() != expected.size()) {
    throw CheckpointError(K::shape, "checkpoint: shape mismatch, " + std::to_string(expected.size() - ckpt.params.size()) +
                                        " tensors missing");
  }
  return ckpt;
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<Scalar>(read_file_bytes(path));
}

}  // namespace cvd
