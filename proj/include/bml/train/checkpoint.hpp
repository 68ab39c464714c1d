#pragma once

// Self-describing binary checkpoint: a JSON header (run metadata, config
// snapshot, tensor table) followed by raw scalar blobs in table order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bml/core/common.hpp"

namespace bml::train {

inline constexpr char kCheckpointMagic[8] = {'B', 'M', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int version = kCheckpointVersion;
  std::string scalar;  // "f32" | "f64"
  int epoch = 0;       // epochs completed
  int best_epoch = -1;
  double best_val = -1.0;
  nlohmann::json config;
  std::uint64_t config_hash = 0;
};

template <typename T>
const char* scalar_name() {
  if constexpr (sizeof(T) == 4) return "f32";
  else return "f64";
}

template <typename T>
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, const std::vector<T>*>>& tensors) {
  nlohmann::json header;
  header["version"] = meta.version;
  header["scalar"] = scalar_name<T>();
  header["epoch"] = meta.epoch;
  header["best_epoch"] = meta.best_epoch;
  header["best_val"] = meta.best_val;
  header["config"] = meta.config;
  header["config_hash"] = meta.config_hash;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, vec] : tensors)
    table.push_back({{"name", name}, {"size", vec->size()}});
  header["tensors"] = table;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot write checkpoint ", path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, vec] : tensors)
    out.write(reinterpret_cast<const char*>(vec->data()),
              std::streamsize(vec->size() * sizeof(T)));
  check(out.good(), "short write on checkpoint ", path);
}

template <typename T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, std::vector<T>> tensors;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint ", path);
  char magic[8];
  in.read(magic, sizeof(magic));
  check(in.good() && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
        "not a checkpoint file: ", path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  check(in.good() && hlen > 0 && hlen < (1u << 26), "corrupt checkpoint header: ", path);
  std::string hs(hlen, '\0');
  in.read(hs.data(), std::streamsize(hlen));
  check(in.good(), "truncated checkpoint header: ", path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    fail("corrupt checkpoint header json: ", e.what());
  }
  LoadedCheckpoint<T> out;
  out.meta.version = header.at("version").get<int>();
  check(out.meta.version == kCheckpointVersion, "checkpoint version ", out.meta.version,
        " unsupported (want ", kCheckpointVersion, ")");
  out.meta.scalar = header.at("scalar").get<std::string>();
  check(out.meta.scalar == scalar_name<T>(), "checkpoint scalar kind ", out.meta.scalar,
        " does not match this build");
  out.meta.epoch = header.at("epoch").get<int>();
  out.meta.best_epoch = header.at("best_epoch").get<int>();
  out.meta.best_val = header.at("best_val").get<double>();
  out.meta.config = header.at("config");
  out.meta.config_hash = header.at("config_hash").get<std::uint64_t>();

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::size_t size = entry.at("size").get<std::size_t>();
    std::vector<T> vec(size);
    in.read(reinterpret_cast<char*>(vec.data()), std::streamsize(size * sizeof(T)));
    check(in.good(), "truncated checkpoint tensor ", name, " in ", path);
    out.tensors.emplace(name, std::move(vec));
  }
  return out;
}

}  // namespace bml::train
