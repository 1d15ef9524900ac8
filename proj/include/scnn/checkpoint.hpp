#pragma once

// Checkpoint directory layout:
//   manifest.json        format version, network echo, SI, iteration, precision
//   <array>.f64          one flat little-endian float64 blob per parameter
//                        array, e.g. conv1.weight.f64, output.bias.f64
// Blobs are always float64, so float32 parameters round-trip exactly.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "scnn/config.hpp"
#include "scnn/network.hpp"

namespace scnn {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, missing_blob, shape_mismatch, unknown_version, incompatible };

  CheckpointError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct CheckpointManifest {
  int format_version = kCheckpointVersion;
  NetworkSpec network;
  ShortcutIndicator si;
  std::size_t iteration = 0;
  Precision precision = Precision::f64;
  std::uint64_t seed = 0;
  std::string created_by = "scnn";
};

namespace detail {

inline void write_f64_blob(const std::filesystem::path& path, std::span<const double> values) {
  std::vector<char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (std::size_t b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFU);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<double> read_f64_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::missing_blob, "missing blob " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() % 8 != 0) {
    throw CheckpointError(CheckpointError::Kind::shape_mismatch, path.string() + " is not a whole number of float64 values");
  }
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + b]} << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Parameters<T>& params, const CheckpointManifest& manifest,
                     const std::filesystem::path& dir) {
  check_params(manifest.network, manifest.si, params);
  std::filesystem::create_directories(dir);
  json arrays = json::array();
  for (const auto& a : named_arrays(params)) {
    const std::string file = a.name + ".f64";
    std::vector<double> values(a.tensor->values().begin(), a.tensor->values().end());
    detail::write_f64_blob(dir / file, values);
    arrays.push_back({{"name", a.name}, {"shape", a.tensor->shape()}, {"file", file}});
  }
  const json m = {{"format_version", manifest.format_version},
                  {"created_by", manifest.created_by},
                  {"network", network_to_json(manifest.network)},
                  {"si", manifest.si.str()},
                  {"iteration", manifest.iteration},
                  {"precision", to_string(manifest.precision)},
                  {"seed", manifest.seed},
                  {"arrays", arrays}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

inline CheckpointManifest read_manifest(const std::filesystem::path& dir, json* raw = nullptr) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CheckpointError(CheckpointError::Kind::io, std::string("unreadable manifest: ") + e.what());
  }
  const int version = m.value("format_version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::unknown_version,
                          "unsupported checkpoint format version " + std::to_string(version) +
                              " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointManifest man;
  man.format_version = version;
  man.network = network_from_json(m.at("network"), "manifest.network");
  man.si = ShortcutIndicator::parse(m.at("si").get<std::string>());
  man.iteration = m.value("iteration", std::size_t{0});
  man.precision = m.value("precision", std::string("f64")) == "f32" ? Precision::f32 : Precision::f64;
  man.seed = m.value("seed", std::uint64_t{0});
  man.created_by = m.value("created_by", std::string{});
  if (raw) *raw = std::move(m);
  return man;
}

template <typename T = double>
struct LoadedCheckpoint {
  Parameters<T> params;
  CheckpointManifest manifest;
};

template <typename T = double>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  json raw;
  LoadedCheckpoint<T> out{{}, read_manifest(dir, &raw)};
  out.params = Parameters<T>::zeros(out.manifest.network, out.manifest.si);
  const auto& arrays = raw.at("arrays");
  for (auto& a : named_arrays(out.params)) {
    const json* entry = nullptr;
    for (const auto& e : arrays) {
      if (e.at("name") == a.name) entry = &e;
    }
    if (!entry) throw CheckpointError(CheckpointError::Kind::missing_blob, "manifest lists no array " + a.name);
    const auto shape = entry->at("shape").get<Shape>();
    if (shape != a.tensor->shape()) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            a.name + ": manifest shape " + shape_string(shape) + " does not match network shape " +
                                shape_string(a.tensor->shape()));
    }
    const auto values = detail::read_f64_blob(dir / entry->at("file").get<std::string>());
    if (values.size() != a.tensor->size()) {
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            a.name + ": blob holds " + std::to_string(values.size()) + " values, expected " +
                                std::to_string(a.tensor->size()));
    }
    std::transform(values.begin(), values.end(), a.tensor->values().begin(),
                   [](double v) { return static_cast<T>(v); });
  }
  return out;
}

// Loads and refuses checkpoints written for another network or indicator.
template <typename T = double>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir, const NetworkSpec& spec,
                                    const ShortcutIndicator& si) {
  auto ck = load_checkpoint<T>(dir);
  if (!(ck.manifest.si == si)) {
    throw CheckpointError(CheckpointError::Kind::incompatible, "checkpoint was trained with SI=" +
                                                                   ck.manifest.si.str() + ", requested SI=" + si.str());
  }
  if (!(ck.manifest.network == spec)) {
    throw CheckpointError(CheckpointError::Kind::incompatible,
                          "checkpoint network does not match the requested network");
  }
  return ck;
}

}  // namespace scnn
