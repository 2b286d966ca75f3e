#pragma once

#include "latentshift/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace latentshift {

enum class LayerKind {
  Dense,
  Conv2d,
  TransposedConv2d,
  Relu,
  Sigmoid,
  ResidualAdd,
  AvgPool2,
  Upsample2x,
  Flatten,
  Reshape,
  Scale,
};

enum class Padding { Same, Valid };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// Raised when a layer cannot accept the shape(s) flowing into it.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& layer, const std::string& what)
      : std::invalid_argument("layer '" + layer + "': " + what), layer_(layer) {}
  const std::string& layer() const { return layer_; }

 private:
  std::string layer_;
};

struct Parameter {
  std::string name;
  Tensor value;
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  /// Names of producing layers; "input" is the graph input. Empty means the
  /// previous layer (or the graph input for the first layer).
  std::vector<std::string> inputs;

  // dense
  Index in_features = 0;
  Index out_features = 0;
  // conv2d / transposed-conv2d
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 3;
  Index stride = 1;
  Padding padding = Padding::Same;
  // reshape
  Shape target_shape;
  // scale
  double factor = 1.0;

  std::vector<Parameter> params;

  bool parameterized() const { return !params.empty(); }
  Tensor& param(std::string_view pname);
  const Tensor& param(std::string_view pname) const;

  /// Number of inputs feeding one output unit; drives initialization bounds.
  Index fan_in() const;
};

LayerSpec dense(std::string name, Index in, Index out);
LayerSpec conv2d(std::string name, Index in_ch, Index out_ch, Index kernel, Index stride = 1,
                 Padding padding = Padding::Same);
LayerSpec transposed_conv2d(std::string name, Index in_ch, Index out_ch, Index kernel,
                            Index stride = 2, Padding padding = Padding::Same);
LayerSpec relu(std::string name);
LayerSpec sigmoid(std::string name);
LayerSpec residual_add(std::string name, std::string a, std::string b);
LayerSpec avgpool2(std::string name);
LayerSpec upsample2x(std::string name);
LayerSpec flatten(std::string name);
LayerSpec reshape(std::string name, Shape target);
LayerSpec scale(std::string name, double factor);

/// Output shape of `layer` given the shapes of its inputs; throws ShapeError.
Shape infer_output_shape(const LayerSpec& layer, const std::vector<Shape>& inputs);

/// Ordered, acyclic graph of named layers. Layers may only consume the graph
/// input or layers declared before them, so declaration order is a
/// topological order. The graph output is the last layer.
class ModelGraph {
 public:
  static constexpr std::string_view kInputName = "input";

  ModelGraph() = default;
  explicit ModelGraph(Shape input_shape) : input_shape_(std::move(input_shape)) {}

  ModelGraph& add(LayerSpec layer);

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const;
  const Shape& shape_of(Index layer) const { return shapes_.at(static_cast<std::size_t>(layer)); }

  Index size() const { return static_cast<Index>(layers_.size()); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(Index i) const { return layers_.at(static_cast<std::size_t>(i)); }
  LayerSpec& layer(Index i) { return layers_.at(static_cast<std::size_t>(i)); }
  Index index_of(std::string_view name) const;
  LayerSpec& layer(std::string_view name) { return layer(index_of(name)); }
  const LayerSpec& layer(std::string_view name) const { return layer(index_of(name)); }

  /// Producer indices of layer i; -1 denotes the graph input.
  const std::vector<Index>& sources(Index i) const {
    return sources_.at(static_cast<std::size_t>(i));
  }

  /// Parameterized layer names, output end first.
  std::vector<std::string> layer_order() const;

  Index parameter_count() const;

  /// Visit every parameter as ("layer/param", tensor).
  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto& l : layers_)
      for (auto& p : l.params) f(l.name + "/" + p.name, p.value);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    for (const auto& l : layers_)
      for (const auto& p : l.params) f(l.name + "/" + p.name, p.value);
  }

  friend bool operator==(const ModelGraph& a, const ModelGraph& b);

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<std::vector<Index>> sources_;
  std::vector<Shape> shapes_;
  std::map<std::string, Index, std::less<>> index_;
};

bool operator==(const LayerSpec& a, const LayerSpec& b);

/// Every parameter of two graphs compared bit-for-bit.
bool weights_bit_equal(const ModelGraph& a, const ModelGraph& b);

/// Uniform ±sqrt(6 / fan_in) for every parameter tensor of `layer`.
void initialize_layer(LayerSpec& layer, std::uint64_t seed);
/// Initializes every parameterized layer; layer i draws from a stream derived from (seed, i).
void initialize(ModelGraph& graph, std::uint64_t seed);

}  // namespace latentshift
