#pragma once

#include "latentshift/image.hpp"
#include "latentshift/latent_shift.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace latentshift {

enum class Method {
  Grad,
  Guided,
  Integrated,
  LatentShiftMax,
  LatentShiftMean,
  LatentShiftMinMax,
  LatentShiftSliding,
};

std::string_view to_string(Method m);
/// Throws std::invalid_argument listing the valid names.
Method method_from_string(std::string_view name);
const std::vector<Method>& all_methods();
bool is_latent_shift(Method m);
std::string method_names();

/// Nonnegative H×W importance map.
struct AttributionMap {
  Map2D values;
  Method method = Method::Grad;
  std::string task;
  std::string source_id;
};

/// Sum of absolute values over channels of a C×H×W tensor.
Map2D reduce_channels(const Tensor& signed_attribution);

AttributionMap attr_grad(const Classifier& clf, const Tensor& x, std::string_view task,
                         GradientTarget target = GradientTarget::Probability);
AttributionMap attr_guided(const Classifier& clf, const Tensor& x, std::string_view task,
                           GradientTarget target = GradientTarget::Probability);

/// Signed x ⊙ mean of gradients at the midpoints (j + 1/2) / steps of the
/// straight path from the all-zero image to x.
Tensor integrated_gradients(const Classifier& clf, const Tensor& x, std::string_view task, int steps,
                            GradientTarget target = GradientTarget::Probability);
AttributionMap attr_integrated(const Classifier& clf, const Tensor& x, std::string_view task, int steps = 64,
                               GradientTarget target = GradientTarget::Probability);

/// Reductions of a sweep's frames relative to the lambda = 0 frame x0:
///   max      max over lambda of |x_l - x0|
///   mean     mean over lambda != 0 of |x_l - x0|
///   minmax   |x_{lambda_min} - x_{lambda_max}|
///   sliding  mean over consecutive frames of |x_{i+1} - x_i|
AttributionMap attr_latentshift(const LambdaSweep& sweep, Method variant);

/// Exactly k pixels set: descending value, ties to the lower raster index.
Mask binarize_topk(const Map2D& values, Index k);

/// Separable Gaussian blur with edge clamping.
Map2D gaussian_smooth(const Map2D& values, double sigma);

struct ExplainOptions {
  int ig_steps = 64;
  SweepOptions sweep;
  GradientTarget target = GradientTarget::Probability;
  /// Post-process blur; 0 leaves maps untouched.
  double smooth_sigma = 0.0;
};

/// Any method on one image. Latent-shift methods need `ae`; `sweep_out`
/// receives the sweep when non-null.
AttributionMap explain(Method method, const Classifier& clf, const Autoencoder* ae, const Tensor& x,
                       std::string_view task, const ExplainOptions& options = {}, LambdaSweep* sweep_out = nullptr);

}  // namespace latentshift
