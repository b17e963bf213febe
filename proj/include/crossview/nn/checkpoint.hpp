#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "crossview/nn/param_store.hpp"

namespace crossview::nn {

// Checkpoint layout: magic "CVCK", u64 little-endian JSON header length, the
// JSON header, then raw little-endian tensor payloads in header order.
// Round-trips are bit-exact.

inline constexpr char kCheckpointMagic[4] = {'C', 'V', 'C', 'K'};
inline constexpr int kCheckpointVersion = 1;

template <class T>
const char* precision_tag() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <class T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path,
                     const nlohmann::ordered_json& meta = {}) {
  nlohmann::ordered_json header;
  header["version"] = kCheckpointVersion;
  header["precision"] = precision_tag<T>();
  auto parts = nlohmann::ordered_json::array();
  for (const auto& [name, tensors] : store.partitions) {
    nlohmann::ordered_json p;
    p["name"] = name;
    auto ts = nlohmann::ordered_json::array();
    for (const auto& nt : tensors)
      ts.push_back({{"name", nt.name}, {"shape", nt.value.shape()}});
    p["tensors"] = std::move(ts);
    parts.push_back(std::move(p));
  }
  header["partitions"] = std::move(parts);
  if (!meta.is_null() && !meta.empty()) header["meta"] = meta;

  std::string hjson = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot open checkpoint for writing: " + path);
  f.write(kCheckpointMagic, 4);
  uint64_t len = hjson.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  for (const auto& [name, tensors] : store.partitions) {
    (void)name;
    for (const auto& nt : tensors)
      f.write(reinterpret_cast<const char*>(nt.value.data()),
              static_cast<std::streamsize>(sizeof(T)) * nt.value.numel());
  }
  if (!f) throw io_error("short write while saving checkpoint: " + path);
}

template <class T>
ParamStore<T> load_checkpoint(const std::string& path,
                              nlohmann::ordered_json* meta_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw io_error("bad checkpoint magic in " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f || len == 0 || len > (1ULL << 30)) throw io_error("corrupt checkpoint header length");
  std::string hjson(len, '\0');
  f.read(hjson.data(), static_cast<std::streamsize>(len));
  if (!f) throw io_error("truncated checkpoint header in " + path);

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(hjson);
  } catch (const std::exception& e) {
    throw io_error(std::string("unparsable checkpoint header: ") + e.what());
  }
  if (header.value("version", -1) != kCheckpointVersion)
    throw io_error("unsupported checkpoint version in " + path);
  if (header.value("precision", "") != precision_tag<T>())
    throw io_error("checkpoint precision mismatch: file is " +
                   header.value("precision", "?") + ", expected " + precision_tag<T>());

  ParamStore<T> store;
  for (const auto& p : header.at("partitions")) {
    std::string pname = p.at("name").get<std::string>();
    for (const auto& t : p.at("tensors")) {
      std::vector<int> shape = t.at("shape").get<std::vector<int>>();
      Tensor<T> tensor(shape);
      f.read(reinterpret_cast<char*>(tensor.data()),
             static_cast<std::streamsize>(sizeof(T)) * tensor.numel());
      if (!f) throw io_error("truncated checkpoint payload in " + path);
      store.add(pname, t.at("name").get<std::string>(), std::move(tensor));
    }
  }
  if (meta_out) *meta_out = header.value("meta", nlohmann::ordered_json::object());
  return store;
}

}  // namespace crossview::nn
