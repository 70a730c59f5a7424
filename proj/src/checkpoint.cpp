#include "ritw/checkpoint.hpp"

#include <fstream>

#include "ritw/error.hpp"

namespace ritw {

nlohmann::json checkpoint_to_json(const ModelCheckpoint& ckpt) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, arr] : ckpt.params.all()) {
    params[name] = {{"shape", arr.shape()}, {"data", arr.data()}};
  }
  return {{"format_version", ckpt.format_version},
          {"model_kind", ckpt.model_kind},
          {"meta", ckpt.meta},
          {"params", params}};
}

ModelCheckpoint checkpoint_from_json(const nlohmann::json& j) {
  ModelCheckpoint ckpt;
  ckpt.format_version = j.at("format_version").get<int>();
  require(ckpt.format_version == 1, "checkpoint: unsupported format version ",
          ckpt.format_version);
  ckpt.model_kind = j.at("model_kind").get<std::string>();
  ckpt.meta = j.at("meta");
  for (const auto& [name, entry] : j.at("params").items()) {
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    auto data = entry.at("data").get<std::vector<double>>();
    ckpt.params.create(name, Array(std::move(shape), std::move(data)));
  }
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "checkpoint: cannot open '", path, "' for writing");
  out << checkpoint_to_json(ckpt).dump(2) << "\n";
  require(out.good(), "checkpoint: write to '", path, "' failed");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "checkpoint: cannot open '", path, "'");
  nlohmann::json j;
  in >> j;
  return checkpoint_from_json(j);
}

}  // namespace ritw
