#pragma once

#include "latentshift/attribution.hpp"
#include "latentshift/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace latentshift {

/// Dataset order split: first 80% train, next 10% validation, last 10% test.
struct DataSplit {
  std::vector<Sample> train, validation, test;
};
DataSplit split_dataset(const std::vector<Sample>& samples);

std::vector<Tensor> images_of(const std::vector<Sample>& samples);
std::vector<std::vector<int>> label_rows(const std::vector<Sample>& samples, const std::vector<std::string>& tasks);

/// Per-task operating points (Youden) on `validation`, stored in clf.thresholds.
void calibrate_classifier(Classifier& clf, const std::vector<Sample>& validation);

/// Prediction remapped so that the task's operating point sits at 0.5;
/// the raw probability when the classifier is uncalibrated.
double calibrated_prediction(const Classifier& clf, const Tensor& x, Index task);

nlohmann::json sweep_to_json(const LambdaSweep& sweep);

struct ExplainExport {
  nlohmann::json summary;
  std::vector<std::string> warnings;
};

/// Writes, under `out`:
///   maps/<method>.png + .json   16-bit map and its range
///   overlays/<method>.png       image with the top 5% of the map in white
///   sweep.json                  lambda bounds, stop reasons, prediction curve
///   frames.ckpt                 full-precision sweep frames (container format)
///   strip.png                   frames side by side, 16-bit over the image range
///   sweep.gif                   boomerang animation
///   explain.json                predictions, map paths, warnings, `provenance`
/// The sweep files are written whenever `ae` is given.
ExplainExport export_explanation(const Sample& sample, const Classifier& clf, const Autoencoder* ae,
                                 const std::string& task, const std::vector<Method>& methods,
                                 const ExplainOptions& options, const std::filesystem::path& out,
                                 const nlohmann::json& provenance = nullptr);

}  // namespace latentshift
