#pragma once

#include "latentshift/attribution.hpp"
#include "latentshift/metrics.hpp"
#include "latentshift/rng.hpp"
#include "latentshift/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace latentshift {

struct EvalRow {
  std::string task;
  std::string method;
  std::string model_id;
  std::string metric;
  double mean = 0;
  std::optional<double> std;
  Index n = 0;
  /// Extra key/value columns (depth, scale, bottleneck, ...), kept in insertion order.
  std::vector<std::pair<std::string, std::string>> extra;
  /// Non-empty when the row could not be computed; mean/std are then meaningless.
  std::string skipped;
};

struct EvalReport {
  std::string suite;
  std::vector<EvalRow> rows;
  nlohmann::json config = nlohmann::json::object();

  EvalRow& add(EvalRow row);
  std::string config_hash() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  /// Writes <dir>/<suite>.csv and <dir>/<suite>.json.
  void write(const std::filesystem::path& dir) const;
};

/// 16 hex digits of a 64-bit FNV-1a over the compact JSON dump.
std::string config_hash(const nlohmann::json& config);

EvalRow summary_row(std::string task, std::string method, std::string model_id, std::string metric,
                    std::span<const double> values);

/// Uniform random map on the given grid.
Map2D random_map(Index height, Index width, Rng& rng);

struct MapRequest {
  Method method = Method::Grad;
  ExplainOptions options;
};

/// Map for one image, or nullopt when the method has nothing to attribute
/// (a latent-shift sweep with a zero gradient).
std::optional<Map2D> try_explain(const MapRequest& req, const Classifier& clf, const Autoencoder* ae,
                                 const Tensor& x, std::string_view task);

/// First `limit` samples (dataset order) with a positive label and a mask for `task`.
std::vector<const Sample*> positives_with_masks(const std::vector<Sample>& samples, std::string_view task,
                                                std::size_t limit);

struct IouSuiteOptions {
  std::vector<Method> methods;  // empty = all
  std::vector<std::string> tasks;  // empty = classifier tasks
  std::size_t samples_per_task = 80;
  ExplainOptions explain;
  bool random_baseline = false;
  std::uint64_t seed = 0;
  std::string model_id = "model";
};

/// One "iou" row per (task, method), optionally plus a "random" row per task.
EvalReport iou_suite(const Classifier& clf, const Autoencoder* ae, const std::vector<Sample>& samples,
                     const IouSuiteOptions& options);

/// Held-out AUC per task.
EvalReport auc_suite(const Classifier& clf, const std::vector<Sample>& samples, std::string model_id = "model");

struct CascadePoint {
  Index depth = 0;
  std::string layer;  // last layer randomized at this depth; empty at depth 0
  std::vector<std::optional<double>> correlations;  // per image; nullopt = constant map
  MeanStd summary;
  Index missing = 0;
};

struct CascadeOptions {
  Method method = Method::Grad;
  ExplainOptions explain;
  std::string task;
  std::uint64_t seed = 0;
};

/// Randomizes the classifier from the output end one parameterized layer at a
/// time and correlates each image's absolute map with its depth-0 map.
std::vector<CascadePoint> cascading_randomization(const Classifier& clf, const Autoencoder* ae,
                                                  const std::vector<Tensor>& images, const CascadeOptions& options);

enum class Perturbation { GaussianNoise, GaussianBlur };
std::string_view to_string(Perturbation p);
Perturbation perturbation_from_string(std::string_view s);

/// Noise adds N(0, scale²) per pixel; blur smooths with sigma = scale. The
/// result is clamped to the image range. Scale 0 returns x unchanged.
Tensor perturb(const Tensor& x, Perturbation p, double scale, Rng& rng);

struct RobustnessPoint {
  double scale = 0;
  MeanStd spearman;  // vs the clean map
  MeanStd iou;       // vs the ground-truth mask
  Index missing = 0;
};

struct RobustnessOptions {
  Method method = Method::Grad;
  ExplainOptions explain;
  std::string task;
  Perturbation perturbation = Perturbation::GaussianNoise;
  std::vector<double> scales;
  std::uint64_t seed = 0;
};

std::vector<RobustnessPoint> robustness(const Classifier& clf, const Autoencoder* ae,
                                        const std::vector<const Sample*>& samples, const RobustnessOptions& options);

struct BottleneckOptions {
  std::vector<Index> bottlenecks{8, 32, 128, 512};
  ArchitectureConfig arch;
  TrainConfig train;
  std::string task = "bigheart";
  ExplainOptions explain;
  std::uint64_t seed = 0;
};

struct BottleneckPoint {
  Index bottleneck = 0;
  double mae = 0;  // held-out, image units
  MeanStd iou;     // latentshift-max vs masks
  Index missing = 0;
};

/// Trains one autoencoder per bottleneck size and evaluates it with a fixed classifier.
std::vector<BottleneckPoint> bottleneck_sweep(std::span<const Tensor> train, std::span<const Tensor> validation,
                                              const Classifier& clf, const std::vector<const Sample*>& eval,
                                              const BottleneckOptions& options);

}  // namespace latentshift
