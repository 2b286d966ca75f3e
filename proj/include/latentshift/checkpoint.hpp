#pragma once

#include "latentshift/graph.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latentshift {

using json = nlohmann::json;

/// Tensor container file:
///
///   bytes 0..7   magic "LSCKPT01"
///   bytes 8..15  header length N, uint64 little-endian
///   next N bytes JSON header: {"endianness": "little", "dtype": "float64",
///                "metadata": {...}, "tensors": [{"name", "shape", "offset", "nbytes"}]}
///   remainder    raw little-endian float64 blobs in header order; offsets
///                are relative to the first blob byte.
struct Container {
  json metadata = json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

json layer_to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const json& j);

/// Graph checkpoint: layer specs under metadata["graph"], one blob per parameter.
void save_graph(const std::filesystem::path& path, const ModelGraph& graph, json extra = json::object());
ModelGraph load_graph(const std::filesystem::path& path, json* extra = nullptr);

}  // namespace latentshift
