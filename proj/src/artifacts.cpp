#include "latentshift/artifacts.hpp"

#include "latentshift/checkpoint.hpp"

#include <algorithm>
#include <fstream>

namespace latentshift {

namespace fs = std::filesystem;

namespace {

void write_manifest(const fs::path& dir, const json& j) {
  std::ofstream f(dir / "manifest.json", std::ios::binary);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("failed to write " + (dir / "manifest.json").string());
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingArtifact("missing " + p.string());
}

}  // namespace

ModelManifest read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  require_file(p);
  std::ifstream f(p);
  ModelManifest m;
  try {
    m.data = json::parse(f);
    m.kind = m.data.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("invalid manifest " + p.string() + ": " + e.what());
  }
  m.model_id = m.data.value("model_id", dir.filename().string());
  return m;
}

void save_classifier(const fs::path& dir, const Classifier& clf, json extra) {
  clf.validate();
  fs::create_directories(dir);
  save_graph(dir / "model.ckpt", clf.graph);
  json m = extra.is_object() ? std::move(extra) : json::object();
  m["kind"] = "classifier";
  if (!m.contains("model_id")) m["model_id"] = dir.filename().string();
  m["task_names"] = clf.task_names;
  m["logit_node"] = clf.logit_node;
  m["thresholds"] = clf.thresholds;
  m["image_size"] = clf.graph.input_shape().back();
  write_manifest(dir, m);
}

Classifier load_classifier(const fs::path& dir, ModelManifest* manifest) {
  ModelManifest m = read_manifest(dir);
  if (m.kind != "classifier") throw FormatError(dir.string() + " holds a " + m.kind + ", not a classifier");
  require_file(dir / "model.ckpt");
  Classifier clf;
  clf.graph = load_graph(dir / "model.ckpt");
  clf.task_names = m.data.at("task_names").get<std::vector<std::string>>();
  clf.logit_node = m.data.value("logit_node", "logits");
  clf.thresholds = m.data.value("thresholds", std::vector<double>{});
  clf.validate();
  if (manifest) *manifest = std::move(m);
  return clf;
}

void save_autoencoder(const fs::path& dir, const Autoencoder& ae, json extra) {
  ae.validate();
  fs::create_directories(dir);
  save_graph(dir / "encoder.ckpt", ae.encoder);
  save_graph(dir / "decoder.ckpt", ae.decoder);
  json m = extra.is_object() ? std::move(extra) : json::object();
  m["kind"] = "autoencoder";
  if (!m.contains("model_id")) m["model_id"] = dir.filename().string();
  m["bottleneck_size"] = ae.bottleneck_size;
  m["image_size"] = ae.encoder.input_shape().back();
  write_manifest(dir, m);
}

Autoencoder load_autoencoder(const fs::path& dir, ModelManifest* manifest) {
  ModelManifest m = read_manifest(dir);
  if (m.kind != "autoencoder") throw FormatError(dir.string() + " holds a " + m.kind + ", not an autoencoder");
  require_file(dir / "encoder.ckpt");
  require_file(dir / "decoder.ckpt");
  Autoencoder ae;
  ae.encoder = load_graph(dir / "encoder.ckpt");
  ae.decoder = load_graph(dir / "decoder.ckpt");
  ae.bottleneck_size = m.data.at("bottleneck_size").get<Index>();
  ae.validate();
  if (manifest) *manifest = std::move(m);
  return ae;
}

std::vector<ModelManifest> list_models(const fs::path& root) {
  std::vector<ModelManifest> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory() || !fs::is_regular_file(entry.path() / "manifest.json")) continue;
    ModelManifest m = read_manifest(entry.path());
    m.model_id = entry.path().filename().string();
    out.push_back(std::move(m));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.model_id < b.model_id; });
  return out;
}

void prepare_output_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw OutputExists(dir.string() + " exists and is not a directory");
  if (fs::is_directory(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw OutputExists(dir.string() + " is not empty; pass --overwrite to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

}  // namespace latentshift
