#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "gmrl/ad/param_store.hpp"
#include "json.hpp"

namespace gmrl::ad {

// Checkpoint layout (JSON):
//   {
//     "format": "gmrl-checkpoint-v1",
//     "step": <optimizer step counter>,
//     "metadata": { ... caller supplied, e.g. head registry ... },
//     "params": [ {"name": str, "shape": [rows, cols],
//                  "data": [...], "m": [...], "v": [...]}, ... ]
//   }
// Values are written as shortest round-trip decimals so reloading is exact.
inline constexpr const char* kCheckpointFormat = "gmrl-checkpoint-v1";

template <typename T>
nlohmann::json store_to_json(const ParamStore<T>& store) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& e : store.entries()) {
    const auto& v = e.param.value();
    nlohmann::json p;
    p["name"] = e.name;
    p["shape"] = {v.rows(), v.cols()};
    p["data"] = v.values();
    p["m"] = e.first_moment.values();
    p["v"] = e.second_moment.values();
    params.push_back(std::move(p));
  }
  return params;
}

template <typename T>
void store_from_json(ParamStore<T>& store, const nlohmann::json& params) {
  for (const auto& p : params) {
    const std::string name = p.at("name").get<std::string>();
    const auto rows = p.at("shape").at(0).get<std::size_t>();
    const auto cols = p.at("shape").at(1).get<std::size_t>();
    Tensor<T> value(rows, cols, p.at("data").get<std::vector<T>>());
    Tensor<T> m(rows, cols, p.at("m").get<std::vector<T>>());
    Tensor<T> v(rows, cols, p.at("v").get<std::vector<T>>());
    if (store.contains(name)) {
      for (auto& e : store.entries()) {
        if (e.name != name) continue;
        if (!e.param.value().same_shape(value)) {
          throw std::runtime_error("checkpoint: shape mismatch for '" + name +
                                   "': " + value.shape_string() + " vs " +
                                   e.param.value().shape_string());
        }
        e.param.mutable_value() = std::move(value);
        e.first_moment = std::move(m);
        e.second_moment = std::move(v);
      }
    } else {
      store.add(name, std::move(value));
      auto& e = store.entries().back();
      e.first_moment = std::move(m);
      e.second_moment = std::move(v);
    }
  }
}

template <typename T>
nlohmann::json checkpoint_json(const ParamStore<T>& store,
                               const nlohmann::json& metadata) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["step"] = store.step();
  j["metadata"] = metadata;
  j["params"] = store_to_json(store);
  return j;
}

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const nlohmann::json& metadata,
                     const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_json(store, metadata).dump() << "\n";
}

// Loads into `store`, matching parameters by name. Returns the metadata.
template <typename T>
nlohmann::json load_checkpoint(ParamStore<T>& store, const nlohmann::json& j) {
  if (j.value("format", "") != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: unsupported format");
  }
  store_from_json(store, j.at("params"));
  store.set_step(j.at("step").get<std::int64_t>());
  return j.value("metadata", nlohmann::json::object());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

}  // namespace gmrl::ad
