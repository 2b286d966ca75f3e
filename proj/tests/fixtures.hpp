// On-disk data directory with a small dataset and quickly trained models.
#pragma once

#include "latentshift/artifacts.hpp"
#include "latentshift/pipeline.hpp"
#include "latentshift/rng.hpp"

#include "toy_models.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>

namespace fixture {

using namespace latentshift;
namespace fs = std::filesystem;

constexpr Index kSize = 32;
constexpr Index kCount = 400;
constexpr std::uint64_t kSeed = 5;

inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latentshift_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline ArchitectureConfig arch() { return toy::tiny_arch(kSize, 16); }

/// dataset/, models/clf (trained, calibrated), models/ae (trained); built once.
inline const fs::path& data_dir() {
  static const fs::path dir = [] {
    const fs::path d = scratch("data");
    const auto samples = generate(kSeed, kCount, kSize);
    write_dataset(d / "dataset", samples, kSeed);
    const auto loaded = ingest_external(d / "dataset").samples;
    const DataSplit split = split_dataset(loaded);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.learning_rate = 3e-3;
    const auto images = images_of(split.train);
    const auto labels = label_rows(split.train, kFindings);
    Classifier clf = train_classifier(images, labels, make_classifier(arch(), kFindings, 1), cfg).model;
    calibrate_classifier(clf, split.validation);
    save_classifier(d / "models" / "clf", clf);
    cfg.epochs = 1;
    const auto val = images_of(split.validation);
    save_autoencoder(d / "models" / "ae",
                     train_autoencoder(images, val, make_autoencoder(arch(), 2), cfg).model);
    return d;
  }();
  return dir;
}

}  // namespace fixture
