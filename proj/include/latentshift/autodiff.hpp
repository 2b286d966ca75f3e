#pragma once

#include "latentshift/graph.hpp"

#include <functional>
#include <map>
#include <string>
#include <string_view>

namespace latentshift {

enum class GradientMode {
  Standard,
  /// ReLU passes gradient only where forward input > 0 and upstream gradient > 0.
  Guided,
};

/// Activations recorded by one forward pass; `outputs[i]` belongs to layer i.
struct Tape {
  Tensor input;
  std::vector<Tensor> outputs;

  const Tensor& output() const { return outputs.back(); }
  const Tensor& value(Index source) const {
    return source < 0 ? input : outputs[static_cast<std::size_t>(source)];
  }
};

Tape forward_tape(const ModelGraph& model, const Tensor& input);
Tensor forward(const ModelGraph& model, const Tensor& input);

/// Parameter gradients keyed "layer/param", matching ModelGraph::for_each_parameter.
using GradientSet = std::map<std::string, Tensor>;

struct BackwardResult {
  Tensor input;
  GradientSet params;
};

struct BackwardOptions {
  GradientMode mode = GradientMode::Standard;
  bool parameters = false;
  /// Node where `upstream` is injected; empty selects the graph output.
  std::string node;
};

/// Reverse pass seeded with `upstream` = dL/d(node output). Layers that do not
/// feed the seeded node receive zero parameter gradients.
BackwardResult backward(const ModelGraph& model, const Tape& tape, const Tensor& upstream,
                        const BackwardOptions& options = {});

/// d output[output_index] / d input. `node` selects a layer other than the
/// graph output, e.g. the logits feeding a final sigmoid.
Tensor input_gradient(const ModelGraph& model, const Tensor& input, Index output_index,
                      GradientMode mode = GradientMode::Standard, std::string_view node = {});

/// Scalar loss of the graph output: returns the value and writes dloss/doutput.
using LossFunction = std::function<double(const Tensor& output, Tensor& grad_output)>;

struct LossGradients {
  double loss = 0.0;
  GradientSet params;
};

LossGradients parameter_gradients(const ModelGraph& model, const Tensor& input,
                                  const LossFunction& loss);

}  // namespace latentshift
