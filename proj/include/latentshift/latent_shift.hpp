#pragma once

#include "latentshift/models.hpp"

#include <Eigen/Core>

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace latentshift {

using LatentVector = Eigen::VectorXd;

/// Which classifier node the latent gradient differentiates.
enum class GradientTarget { Probability, Logit };

/// d f_task(D(z)) / dz, backpropagated through the classifier and then the decoder.
LatentVector latent_gradient(const Autoencoder& ae, const Classifier& clf, const LatentVector& z,
                             std::string_view task, GradientTarget target = GradientTarget::Probability);

/// z + lambda * g.
LatentVector shift(const LatentVector& z, const LatentVector& g, double lambda);

/// D(z) for a latent vector.
Tensor reconstruct(const Autoencoder& ae, const LatentVector& z);

LatentVector encode_latent(const Autoencoder& ae, const Tensor& x);

enum class StopReason {
  Plateau,       // prediction stopped moving in the search direction
  Halved,        // prediction fell below initial - drop
  Increased,     // prediction rose to initial + rise
  Cap,           // |lambda| reached the limit
  ZeroGradient,  // the latent gradient is exactly zero
};

std::string_view to_string(StopReason reason);

struct SearchOptions {
  double step = 10.0;
  double limit = 1000.0;
  /// Absolute drop on the [0,1] scale that ends the downward search.
  double drop = 0.5;
  /// Absolute rise on the [0,1] scale that ends the upward search.
  double rise = 0.05;
};

struct SearchResult {
  double lambda = 0.0;
  StopReason reason = StopReason::Plateau;
  int evaluations = 0;  // classifier calls, including the one at lambda = 0
  std::vector<double> lambdas;
  std::vector<double> predictions;
};

/// Prediction of the task along the latent path, as a function of lambda.
using PredictionPath = std::function<double(double lambda)>;

/// Walks lambda = 0, -step, -2 step, ... and stops at the first lambda whose
/// prediction does not fall below the previous one (plateau), falls below
/// initial - drop (halved), or reaches -limit (cap). The returned bound is
/// the lambda at which the loop stopped.
SearchResult search_lambda_low(const PredictionPath& predict, const SearchOptions& options = {});
/// Mirror of search_lambda_low: +step increments, success at initial + rise.
SearchResult search_lambda_high(const PredictionPath& predict, const SearchOptions& options = {});

/// Maps lambda to the latent code. The fixed path reuses the gradient at the
/// original code; the curved path re-evaluates the gradient every `step`.
class LatentPath {
 public:
  LatentPath(const Autoencoder& ae, const Classifier& clf, LatentVector z, std::string task,
             GradientTarget target = GradientTarget::Probability, bool curved = false, double step = 10.0);

  const LatentVector& origin() const { return z_; }
  const LatentVector& base_gradient() const { return g_; }
  bool zero_gradient() const { return g_.squaredNorm() == 0.0; }
  LatentVector at(double lambda) const;
  double predict(double lambda) const;
  Index task_index() const { return task_; }

 private:
  const Autoencoder* ae_;
  const Classifier* clf_;
  LatentVector z_, g_;
  std::string task_name_;
  Index task_;
  GradientTarget target_;
  bool curved_;
  double step_;
};

SearchResult search_lambda_low(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                               const SearchOptions& options = {});
SearchResult search_lambda_high(const Autoencoder& ae, const Classifier& clf, const Tensor& x,
                                std::string_view task, const SearchOptions& options = {});

struct SweepOptions {
  int n_frames = 21;
  SearchOptions search;
  GradientTarget target = GradientTarget::Probability;
  bool curved_path = false;
};

struct LambdaSweep {
  std::string task;
  std::vector<double> lambdas;  // ascending, contains 0
  std::vector<Tensor> frames;
  std::vector<double> predictions;
  LatentVector latent;
  LatentVector base_gradient;
  SearchResult low, high;

  std::size_t zero_index() const;
  const Tensor& zero_frame() const { return frames.at(zero_index()); }
};

/// n_frames - 1 points spaced linearly over [low, high], with 0 inserted.
std::vector<double> lambda_grid(double low, double high, int n_frames);

LambdaSweep sweep(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                  const SweepOptions& options = {});

/// Single shifted frame and its prediction (the interactive slider path).
struct ShiftedFrame {
  Tensor frame;
  double prediction;
};
ShiftedFrame shifted_frame(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                           double lambda, const SweepOptions& options = {});

}  // namespace latentshift
