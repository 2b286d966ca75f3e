#pragma once

#include "latentshift/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentshift {

/// Encoder/decoder pair with a vector bottleneck: E(x) has shape [bottleneck_size]
/// and D(E(x)) has the shape of x.
struct Autoencoder {
  ModelGraph encoder;
  ModelGraph decoder;
  Index bottleneck_size = 0;

  Tensor encode(const Tensor& x) const { return forward(encoder, x); }
  Tensor decode(const Tensor& z) const { return forward(decoder, z); }
  Tensor reconstruct(const Tensor& x) const { return decode(encode(x)); }

  /// Throws unless the encoder/decoder interface is consistent.
  void validate() const;
};

/// Multi-task classifier. The graph ends in a sigmoid so every output is a
/// probability; `logit_node` names the pre-sigmoid layer.
struct Classifier {
  ModelGraph graph;
  std::vector<std::string> task_names;
  std::string logit_node = "logits";
  /// Per-task operating point on validation data; empty until calibrated.
  std::vector<double> thresholds;

  Index task_index(std::string_view task) const;
  Tensor predict(const Tensor& x) const { return forward(graph, x); }
  double predict(const Tensor& x, Index task) const { return predict(x)[task]; }

  void validate() const;
};

/// Scales between image units ([-1024, 1024]) and network units.
inline constexpr double kImageRange = 1024.0;

struct ArchitectureConfig {
  Index image_size = 64;
  Index bottleneck = 256;
  std::vector<Index> encoder_channels{8, 16, 16};
  std::vector<Index> decoder_channels{16, 8, 4};
  std::vector<Index> classifier_channels{8, 16, 16};
};

/// Three stride-2 conv blocks with residual adds, then dense to the bottleneck;
/// the decoder mirrors it with upsample2x + conv blocks.
Autoencoder make_autoencoder(const ArchitectureConfig& arch, std::uint64_t seed);

/// Three conv + relu + avgpool blocks, dense to one logit per task, sigmoid.
Classifier make_classifier(const ArchitectureConfig& arch, std::vector<std::string> task_names,
                           std::uint64_t seed);

/// mean(d² + |d|) with d = x - x_hat.
double elastic_loss(const Tensor& x, const Tensor& x_hat);
/// Elastic loss of (x - x_hat) / unit; writes d loss / d x_hat into `grad`.
double elastic_loss(const Tensor& x, const Tensor& x_hat, double unit, Tensor& grad);
double mean_absolute_error(const Tensor& x, const Tensor& x_hat);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Bias-corrected two-moment adaptive optimizer.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}
  /// Applies one update to every parameter of `graph` present in `grads`;
  /// `prefix` keeps moment state of several graphs apart.
  void step(ModelGraph& graph, const GradientSet& grads, const std::string& prefix = {});
  void advance() { ++t_; }

 private:
  struct Moments {
    Eigen::VectorXd m, v;
  };
  TrainConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct AutoencoderTraining {
  Autoencoder model;
  /// Index 0 is the untrained model; entry e follows epoch e.
  std::vector<double> train_loss;
  std::vector<double> train_mae;
  std::vector<double> validation_mae;
};

using EpochCallback = std::function<void(int epoch, const Autoencoder&)>;

AutoencoderTraining train_autoencoder(std::span<const Tensor> train, std::span<const Tensor> validation,
                                      Autoencoder model, const TrainConfig& cfg,
                                      const EpochCallback& on_epoch = {});

struct ClassifierTraining {
  Classifier model;
  std::vector<double> train_loss;
};

/// Binary cross-entropy per task; labels[i][t] ∈ {0, 1}.
ClassifierTraining train_classifier(std::span<const Tensor> images, std::span<const std::vector<int>> labels,
                                    Classifier model, const TrainConfig& cfg);

double binary_cross_entropy(const Tensor& probabilities, const std::vector<int>& labels);

/// Copy of `model` whose first `first_k` layers in layer_order() (output end
/// first) are redrawn from the initialization distribution.
ModelGraph reinitialize_layers(const ModelGraph& model, Index first_k, std::uint64_t seed);

}  // namespace latentshift
