#include "latentshift/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace latentshift {

namespace {

constexpr char kMagic[8] = {'L', 'S', 'C', 'K', 'P', 'T', '0', '1'};

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_doubles_le(std::ostream& os, const Tensor& t) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  } else {
    for (Index i = 0; i < t.size(); ++i) put_u64_le(os, std::bit_cast<std::uint64_t>(t[i]));
  }
}

const char* padding_name(Padding p) { return p == Padding::Same ? "same" : "valid"; }

}  // namespace

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("container has no tensor '" + name + "'");
}

void write_container(const std::filesystem::path& path, const Container& c) {
  json header;
  header["format"] = "latentshift-container";
  header["version"] = 1;
  header["endianness"] = "little";
  header["dtype"] = "float64";
  header["metadata"] = c.metadata;
  header["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(t.size()) * 8;
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_u64_le(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : c.tensors) write_doubles_le(os, t);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError(path.string() + ": not a latentshift container");
  }
  const std::uint64_t hlen = get_u64_le(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw FormatError(path.string() + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  if (header.value("endianness", "") != "little" || header.value("dtype", "") != "float64") {
    throw FormatError(path.string() + ": unsupported endianness/dtype");
  }
  const std::size_t base = 16 + hlen;
  Container c;
  c.metadata = header.value("metadata", json::object());
  for (const auto& e : header.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(shape_size(shape)) * 8 || base + offset + nbytes > bytes.size()) {
      throw FormatError(path.string() + ": tensor '" + e.at("name").get<std::string>() + "' out of bounds");
    }
    Tensor t(shape);
    const unsigned char* src = bytes.data() + base + offset;
    for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<double>(get_u64_le(src + 8 * i));
    c.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

json layer_to_json(const LayerSpec& l) {
  json j{{"name", l.name}, {"kind", std::string(to_string(l.kind))}};
  if (!l.inputs.empty()) j["inputs"] = l.inputs;
  switch (l.kind) {
    case LayerKind::Dense:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::Conv2d:
    case LayerKind::TransposedConv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = padding_name(l.padding);
      break;
    case LayerKind::Reshape:
      j["target_shape"] = l.target_shape;
      break;
    case LayerKind::Scale:
      j["factor"] = l.factor;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const auto name = j.at("name").get<std::string>();
  const LayerKind kind = layer_kind_from_string(j.at("kind").get<std::string>());
  LayerSpec l;
  switch (kind) {
    case LayerKind::Dense:
      l = dense(name, j.at("in_features").get<Index>(), j.at("out_features").get<Index>());
      break;
    case LayerKind::Conv2d:
    case LayerKind::TransposedConv2d: {
      const Padding pad = j.value("padding", "same") == "valid" ? Padding::Valid : Padding::Same;
      auto make = kind == LayerKind::Conv2d ? conv2d : transposed_conv2d;
      l = make(name, j.at("in_channels").get<Index>(), j.at("out_channels").get<Index>(),
               j.at("kernel").get<Index>(), j.at("stride").get<Index>(), pad);
      break;
    }
    case LayerKind::Reshape:
      l = reshape(name, j.at("target_shape").get<Shape>());
      break;
    case LayerKind::Scale:
      l = scale(name, j.at("factor").get<double>());
      break;
    default:
      l.name = name;
      l.kind = kind;
  }
  l.inputs = j.value("inputs", std::vector<std::string>{});
  return l;
}

void save_graph(const std::filesystem::path& path, const ModelGraph& graph, json extra) {
  Container c;
  c.metadata = std::move(extra);
  json layers = json::array();
  for (const auto& l : graph.layers()) layers.push_back(layer_to_json(l));
  c.metadata["graph"] = {{"input_shape", graph.input_shape()}, {"layers", layers}};
  graph.for_each_parameter([&](const std::string& key, const Tensor& t) { c.tensors.emplace_back(key, t); });
  write_container(path, c);
}

ModelGraph load_graph(const std::filesystem::path& path, json* extra) {
  Container c = read_container(path);
  if (!c.metadata.contains("graph")) throw FormatError(path.string() + ": container holds no graph");
  const json& g = c.metadata["graph"];
  ModelGraph graph(g.at("input_shape").get<Shape>());
  for (const auto& lj : g.at("layers")) {
    LayerSpec l = layer_from_json(lj);
    for (auto& p : l.params) {
      const Tensor& stored = c.tensor(l.name + "/" + p.name);
      if (stored.shape() != p.value.shape()) {
        throw FormatError(path.string() + ": parameter " + l.name + "/" + p.name + " has shape " +
                          shape_string(stored.shape()) + ", expected " + shape_string(p.value.shape()));
      }
      p.value = stored;
    }
    graph.add(std::move(l));
  }
  if (extra) {
    c.metadata.erase("graph");
    *extra = std::move(c.metadata);
  }
  return graph;
}

}  // namespace latentshift
