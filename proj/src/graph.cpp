#include "latentshift/graph.hpp"

#include "latentshift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace latentshift {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::Dense, "dense"},
    {LayerKind::Conv2d, "conv2d"},
    {LayerKind::TransposedConv2d, "transposed-conv2d"},
    {LayerKind::Relu, "relu"},
    {LayerKind::Sigmoid, "sigmoid"},
    {LayerKind::ResidualAdd, "residual-add"},
    {LayerKind::AvgPool2, "avgpool2"},
    {LayerKind::Upsample2x, "upsample2x"},
    {LayerKind::Flatten, "flatten"},
    {LayerKind::Reshape, "reshape"},
    {LayerKind::Scale, "scale"},
};

Index conv_pad(const LayerSpec& l) { return l.padding == Padding::Same ? (l.kernel - 1) / 2 : 0; }

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

Tensor& LayerSpec::param(std::string_view pname) {
  for (auto& p : params)
    if (p.name == pname) return p.value;
  throw std::out_of_range("layer '" + name + "' has no parameter '" + std::string(pname) + "'");
}

const Tensor& LayerSpec::param(std::string_view pname) const {
  return const_cast<LayerSpec*>(this)->param(pname);
}

Index LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::Dense:
      return in_features;
    case LayerKind::Conv2d:
    case LayerKind::TransposedConv2d:
      return in_channels * kernel * kernel;
    default:
      return 1;
  }
}

LayerSpec dense(std::string name, Index in, Index out) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Dense;
  l.in_features = in;
  l.out_features = out;
  l.params = {{"weight", Tensor({out, in})}, {"bias", Tensor({out})}};
  return l;
}

LayerSpec conv2d(std::string name, Index in_ch, Index out_ch, Index kernel, Index stride,
                 Padding padding) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv2d;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.params = {{"weight", Tensor({out_ch, in_ch, kernel, kernel})}, {"bias", Tensor({out_ch})}};
  return l;
}

LayerSpec transposed_conv2d(std::string name, Index in_ch, Index out_ch, Index kernel,
                            Index stride, Padding padding) {
  LayerSpec l = conv2d(std::move(name), in_ch, out_ch, kernel, stride, padding);
  l.kind = LayerKind::TransposedConv2d;
  l.params = {{"weight", Tensor({in_ch, out_ch, kernel, kernel})}, {"bias", Tensor({out_ch})}};
  return l;
}

namespace {
LayerSpec simple(std::string name, LayerKind kind) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  return l;
}
}  // namespace

LayerSpec relu(std::string name) { return simple(std::move(name), LayerKind::Relu); }
LayerSpec sigmoid(std::string name) { return simple(std::move(name), LayerKind::Sigmoid); }
LayerSpec avgpool2(std::string name) { return simple(std::move(name), LayerKind::AvgPool2); }
LayerSpec upsample2x(std::string name) { return simple(std::move(name), LayerKind::Upsample2x); }
LayerSpec flatten(std::string name) { return simple(std::move(name), LayerKind::Flatten); }

LayerSpec residual_add(std::string name, std::string a, std::string b) {
  LayerSpec l = simple(std::move(name), LayerKind::ResidualAdd);
  l.inputs = {std::move(a), std::move(b)};
  return l;
}

LayerSpec reshape(std::string name, Shape target) {
  LayerSpec l = simple(std::move(name), LayerKind::Reshape);
  l.target_shape = std::move(target);
  return l;
}

LayerSpec scale(std::string name, double factor) {
  LayerSpec l = simple(std::move(name), LayerKind::Scale);
  l.factor = factor;
  return l;
}

Shape infer_output_shape(const LayerSpec& l, const std::vector<Shape>& in) {
  const std::size_t want = l.kind == LayerKind::ResidualAdd ? 2 : 1;
  if (in.size() != want) {
    throw ShapeError(l.name, "expects " + std::to_string(want) + " input(s), got " +
                                 std::to_string(in.size()));
  }
  const Shape& s = in.front();
  auto require_chw = [&](Index channels) {
    if (s.size() != 3) throw ShapeError(l.name, "expects a C×H×W input, got " + shape_string(s));
    if (channels > 0 && s[0] != channels) {
      throw ShapeError(l.name, "expects " + std::to_string(channels) + " channels, got " +
                                   shape_string(s));
    }
  };
  switch (l.kind) {
    case LayerKind::Dense:
      if (s.size() != 1 || s[0] != l.in_features) {
        throw ShapeError(l.name, "expects input [" + std::to_string(l.in_features) + "], got " +
                                     shape_string(s));
      }
      return {l.out_features};
    case LayerKind::Conv2d: {
      require_chw(l.in_channels);
      const Index p = conv_pad(l);
      const Index ho = (s[1] + 2 * p - l.kernel) / l.stride + 1;
      const Index wo = (s[2] + 2 * p - l.kernel) / l.stride + 1;
      if (s[1] + 2 * p < l.kernel || s[2] + 2 * p < l.kernel || ho <= 0 || wo <= 0) {
        throw ShapeError(l.name, "kernel larger than padded input " + shape_string(s));
      }
      return {l.out_channels, ho, wo};
    }
    case LayerKind::TransposedConv2d: {
      require_chw(l.in_channels);
      if (l.padding == Padding::Same) {
        if (l.kernel < l.stride) throw ShapeError(l.name, "same padding requires kernel >= stride");
        return {l.out_channels, s[1] * l.stride, s[2] * l.stride};
      }
      return {l.out_channels, (s[1] - 1) * l.stride + l.kernel, (s[2] - 1) * l.stride + l.kernel};
    }
    case LayerKind::Relu:
    case LayerKind::Sigmoid:
    case LayerKind::Scale:
      return s;
    case LayerKind::ResidualAdd:
      if (in[0] != in[1]) {
        throw ShapeError(l.name, "operand shapes differ: " + shape_string(in[0]) + " vs " +
                                     shape_string(in[1]));
      }
      return s;
    case LayerKind::AvgPool2:
      require_chw(0);
      if (s[1] % 2 || s[2] % 2) throw ShapeError(l.name, "spatial size must be even, got " + shape_string(s));
      return {s[0], s[1] / 2, s[2] / 2};
    case LayerKind::Upsample2x:
      require_chw(0);
      return {s[0], s[1] * 2, s[2] * 2};
    case LayerKind::Flatten:
      return {shape_size(s)};
    case LayerKind::Reshape:
      if (shape_size(l.target_shape) != shape_size(s)) {
        throw ShapeError(l.name, "cannot reshape " + shape_string(s) + " to " +
                                     shape_string(l.target_shape));
      }
      return l.target_shape;
  }
  throw ShapeError(l.name, "unsupported layer kind");
}

ModelGraph& ModelGraph::add(LayerSpec layer) {
  if (layer.name.empty() || layer.name == kInputName) {
    throw std::invalid_argument("invalid layer name '" + layer.name + "'");
  }
  if (index_.count(layer.name)) throw std::invalid_argument("duplicate layer name '" + layer.name + "'");
  std::vector<Index> src;
  if (layer.inputs.empty()) {
    src.push_back(static_cast<Index>(layers_.size()) - 1);
  } else {
    for (const auto& n : layer.inputs) {
      if (n == kInputName) {
        src.push_back(-1);
        continue;
      }
      auto it = index_.find(n);
      if (it == index_.end()) {
        throw std::invalid_argument("layer '" + layer.name + "' consumes unknown or later layer '" + n + "'");
      }
      src.push_back(it->second);
    }
  }
  std::vector<Shape> in_shapes;
  for (Index s : src) in_shapes.push_back(s < 0 ? input_shape_ : shapes_[static_cast<std::size_t>(s)]);
  Shape out = infer_output_shape(layer, in_shapes);
  for (const auto& p : layer.params) {
    if (!p.value.all_finite()) throw std::invalid_argument("layer '" + layer.name + "' has non-finite parameters");
  }
  index_.emplace(layer.name, static_cast<Index>(layers_.size()));
  layers_.push_back(std::move(layer));
  sources_.push_back(std::move(src));
  shapes_.push_back(std::move(out));
  return *this;
}

const Shape& ModelGraph::output_shape() const {
  if (layers_.empty()) return input_shape_;
  return shapes_.back();
}

Index ModelGraph::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no layer named '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> ModelGraph::layer_order() const {
  std::vector<std::string> order;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    if (it->parameterized()) order.push_back(it->name);
  return order;
}

Index ModelGraph::parameter_count() const {
  Index n = 0;
  for_each_parameter([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
  if (a.name != b.name || a.kind != b.kind || a.inputs != b.inputs ||
      a.in_features != b.in_features || a.out_features != b.out_features ||
      a.in_channels != b.in_channels || a.out_channels != b.out_channels || a.kernel != b.kernel ||
      a.stride != b.stride || a.padding != b.padding || a.target_shape != b.target_shape ||
      a.factor != b.factor || a.params.size() != b.params.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    if (a.params[i].name != b.params[i].name || !bit_equal(a.params[i].value, b.params[i].value)) {
      return false;
    }
  }
  return true;
}

bool operator==(const ModelGraph& a, const ModelGraph& b) {
  return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_;
}

bool weights_bit_equal(const ModelGraph& a, const ModelGraph& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    const auto& pa = a.layer(i).params;
    const auto& pb = b.layer(i).params;
    if (pa.size() != pb.size()) return false;
    for (std::size_t j = 0; j < pa.size(); ++j)
      if (!bit_equal(pa[j].value, pb[j].value)) return false;
  }
  return true;
}

void initialize_layer(LayerSpec& layer, std::uint64_t seed) {
  if (!layer.parameterized()) return;
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<Index>(1, layer.fan_in())));
  Rng rng(derive_seed(seed, layer.name));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& p : layer.params)
    for (Index i = 0; i < p.value.size(); ++i) p.value[i] = dist(rng);
}

void initialize(ModelGraph& graph, std::uint64_t seed) {
  for (Index i = 0; i < graph.size(); ++i) initialize_layer(graph.layer(i), seed);
}

}  // namespace latentshift
