#pragma once

#include "latentshift/models.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentshift {

/// A referenced checkpoint, dataset, or sample does not exist.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An output directory is already in use and overwriting was not requested.
class OutputExists : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model directory layout:
///   manifest.json   {"kind", "model_id", "image_size", ...}
///   classifier:     model.ckpt; manifest adds task_names, logit_node,
///                   thresholds, held_out_auc
///   autoencoder:    encoder.ckpt, decoder.ckpt; manifest adds bottleneck_size
struct ModelManifest {
  std::string kind;  // "classifier" or "autoencoder"
  std::string model_id;
  nlohmann::json data = nlohmann::json::object();
};

ModelManifest read_manifest(const std::filesystem::path& dir);

void save_classifier(const std::filesystem::path& dir, const Classifier& clf,
                     nlohmann::json extra = nlohmann::json::object());
Classifier load_classifier(const std::filesystem::path& dir, ModelManifest* manifest = nullptr);

void save_autoencoder(const std::filesystem::path& dir, const Autoencoder& ae,
                      nlohmann::json extra = nlohmann::json::object());
Autoencoder load_autoencoder(const std::filesystem::path& dir, ModelManifest* manifest = nullptr);

/// Subdirectories of `root` holding a manifest, sorted by id. A missing root
/// lists nothing.
std::vector<ModelManifest> list_models(const std::filesystem::path& root);

/// Throws OutputExists for a non-empty directory unless `overwrite`, in
/// which case it is emptied first.
void prepare_output_dir(const std::filesystem::path& dir, bool overwrite);

}  // namespace latentshift
