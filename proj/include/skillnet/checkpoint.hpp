#pragma once

// Checkpoint directory layout:
//   manifest.json  - variant, step, seed, config hash, format version
//   params.bin     - named float64 arrays (magic "SKNC")
//   state.bin      - optional trainer state (written by the trainer module)
//
// Binary container: magic, u32 format, u64 entry count; each entry is
// u32 name length, name bytes, u32 rank, i64 dims, f64 payload. All integers
// little-endian; doubles are raw IEEE-754 bits.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "skillnet/model.hpp"

namespace skillnet {

inline constexpr char kTensorMagic[4] = {'S', 'K', 'N', 'C'};
inline constexpr uint32_t kTensorFormat = 1;

namespace detail_io {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated tensor file while reading " + what);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const uint32_t n = read_pod<uint32_t>(is, "string length");
  if (n > (1u << 20)) throw IoError("implausible string length " + std::to_string(n));
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("truncated tensor file while reading string body");
  return s;
}

}  // namespace detail_io

inline void save_tensors(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kTensorMagic, 4);
  detail_io::write_pod<uint32_t>(os, kTensorFormat);
  detail_io::write_pod<uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail_io::write_string(os, name);
    detail_io::write_pod<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) detail_io::write_pod<int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw IoError("'" + path.string() + "' is not a tensor container (bad magic)");
  const uint32_t format = detail_io::read_pod<uint32_t>(is, "format");
  if (format != kTensorFormat)
    throw IoError("unsupported tensor container format " + std::to_string(format));
  const uint64_t count = detail_io::read_pod<uint64_t>(is, "entry count");
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = detail_io::read_string(is);
    const uint32_t rank = detail_io::read_pod<uint32_t>(is, "rank of " + name);
    if (rank > 8) throw IoError("implausible rank " + std::to_string(rank) + " for " + name);
    std::vector<int64_t> shape(rank);
    for (uint32_t r = 0; r < rank; ++r)
      shape[r] = detail_io::read_pod<int64_t>(is, "dim of " + name);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
    if (!is) throw IoError("truncated payload for tensor '" + name + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

struct CheckpointManifest {
  std::string library_version = kVersion;
  std::string variant;
  int64_t step = 0;
  uint64_t seed = 0;
  std::string config_hash;  // hex fingerprint of the experiment config
  bool has_trainer_state = false;

  nlohmann::json to_json() const {
    return {{"library_version", library_version}, {"variant", variant},   {"step", step},
            {"seed", seed},                       {"config_hash", config_hash},
            {"has_trainer_state", has_trainer_state}};
  }

  static CheckpointManifest from_json(const nlohmann::json& j) {
    CheckpointManifest m;
    m.library_version = j.at("library_version").get<std::string>();
    m.variant = j.at("variant").get<std::string>();
    m.step = j.at("step").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.has_trainer_state = j.at("has_trainer_state").get<bool>();
    return m;
  }
};

// Ownership tags are persisted alongside the weights so a reloaded store can
// still answer "which skill owns this parameter".
inline void save_parameters(const std::filesystem::path& dir, const ParameterStore& store) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::json owners = nlohmann::json::object();
  for (const auto& [name, e] : store.entries()) {
    tensors.emplace_back(name, e.tensor);
    owners[name] = e.owner.label();
  }
  save_tensors(dir / "params.bin", tensors);
  std::ofstream os(dir / "owners.json");
  if (!os) throw IoError("cannot write owners.json in '" + dir.string() + "'");
  os << owners.dump(2) << "\n";
}

inline Ownership ownership_from_label(const std::string& label) {
  if (label == "shared") return Ownership::shared();
  if (label.rfind("t_s", 0) == 0) return Ownership::of(SkillId::task(std::stoi(label.substr(3))));
  if (label.rfind("l_s", 0) == 0)
    return Ownership::of(SkillId::language(std::stoi(label.substr(3))));
  throw IoError("unknown ownership label '" + label + "'");
}

inline ParameterStore load_parameters(const std::filesystem::path& dir) {
  std::ifstream is(dir / "owners.json");
  if (!is) throw IoError("missing owners.json in '" + dir.string() + "'");
  nlohmann::json owners = nlohmann::json::parse(is);
  ParameterStore store;
  for (auto& [name, t] : load_tensors(dir / "params.bin"))
    store.add(name, std::move(t), ownership_from_label(owners.at(name).get<std::string>()));
  return store;
}

inline void save_manifest(const std::filesystem::path& dir, const CheckpointManifest& m) {
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest.json in '" + dir.string() + "'");
  os << m.to_json().dump(2) << "\n";
}

inline CheckpointManifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("missing manifest.json in '" + dir.string() + "'");
  return CheckpointManifest::from_json(nlohmann::json::parse(is));
}

// Copies weights for every name present in both stores; shapes must agree on
// the intersection. Returns the names that were copied. This is the warm-start
// path from a pre-trained checkpoint into a model with different heads.
inline std::vector<std::string> warm_start(ParameterStore& target, const ParameterStore& source) {
  std::vector<std::string> copied;
  for (auto& [name, e] : target.entries()) {
    if (!source.has(name)) continue;
    const Tensor& src = source.at(name);
    if (src.shape() != e.tensor.shape())
      throw ShapeError("warm start: shape mismatch for '" + name + "'");
    e.tensor.data() = src.data();
    copied.push_back(name);
  }
  return copied;
}

}  // namespace skillnet
