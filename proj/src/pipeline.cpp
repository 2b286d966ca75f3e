#include "latentshift/pipeline.hpp"

#include "latentshift/checkpoint.hpp"
#include "latentshift/export.hpp"
#include "latentshift/metrics.hpp"

#include <cstdio>
#include <fstream>

namespace latentshift {

namespace fs = std::filesystem;

DataSplit split_dataset(const std::vector<Sample>& samples) {
  const std::size_t n = samples.size();
  const std::size_t a = n * 8 / 10, b = n * 9 / 10;
  DataSplit s;
  s.train.assign(samples.begin(), samples.begin() + static_cast<long>(a));
  s.validation.assign(samples.begin() + static_cast<long>(a), samples.begin() + static_cast<long>(b));
  s.test.assign(samples.begin() + static_cast<long>(b), samples.end());
  return s;
}

std::vector<Tensor> images_of(const std::vector<Sample>& samples) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

std::vector<std::vector<int>> label_rows(const std::vector<Sample>& samples, const std::vector<std::string>& tasks) {
  std::vector<std::vector<int>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label_row(tasks));
  return out;
}

void calibrate_classifier(Classifier& clf, const std::vector<Sample>& validation) {
  std::vector<Tensor> preds;
  for (const auto& s : validation) preds.push_back(clf.predict(s.image));
  clf.thresholds.clear();
  for (std::size_t t = 0; t < clf.task_names.size(); ++t) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < validation.size(); ++i) {
      scores.push_back(preds[i][static_cast<Index>(t)]);
      labels.push_back(validation[i].label(clf.task_names[t]));
    }
    clf.thresholds.push_back(operating_point(scores, labels));
  }
}

double calibrated_prediction(const Classifier& clf, const Tensor& x, Index task) {
  const double p = clf.predict(x, task);
  if (clf.thresholds.empty()) return p;
  return calibrate(p, clf.thresholds.at(static_cast<std::size_t>(task)));
}

nlohmann::json sweep_to_json(const LambdaSweep& s) {
  return {{"task", s.task},
          {"lambda_low", s.low.lambda},
          {"lambda_high", s.high.lambda},
          {"low_stop_reason", to_string(s.low.reason)},
          {"high_stop_reason", to_string(s.high.reason)},
          {"low_evaluations", s.low.evaluations},
          {"high_evaluations", s.high.evaluations},
          {"zero_gradient", s.frames.size() == 1},
          {"lambdas", s.lambdas},
          {"predictions", s.predictions}};
}

ExplainExport export_explanation(const Sample& sample, const Classifier& clf, const Autoencoder* ae,
                                 const std::string& task, const std::vector<Method>& methods,
                                 const ExplainOptions& options, const fs::path& out,
                                 const nlohmann::json& provenance) {
  const Index t = clf.task_index(task);
  for (Method m : methods)
    if (is_latent_shift(m) && !ae) throw std::invalid_argument(std::string(to_string(m)) + " requires an autoencoder");
  ExplainExport result;
  auto& summary = result.summary;
  summary["sample_id"] = sample.id;
  summary["task"] = task;
  summary["prediction"] = clf.predict(sample.image, t);
  summary["calibrated_prediction"] = calibrated_prediction(clf, sample.image, t);

  std::optional<LambdaSweep> sw;
  if (ae) {
    SweepOptions so = options.sweep;
    so.target = options.target;
    sw = sweep(*ae, clf, sample.image, task, so);
    fs::create_directories(out);
    nlohmann::json sj = sweep_to_json(*sw);
    sj["sample_id"] = sample.id;
    std::ofstream(out / "sweep.json", std::ios::binary) << sj.dump(2) << '\n';
    Container frames;
    frames.metadata = {{"sample_id", sample.id}, {"task", task}, {"lambdas", sw->lambdas}};
    for (std::size_t i = 0; i < sw->frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu", i);
      frames.tensors.emplace_back(name, sw->frames[i]);
    }
    write_container(out / "frames.ckpt", frames);
    write_png(out / "strip.png", frame_strip(sw->frames));
    std::ofstream(out / "sweep.gif", std::ios::binary) << sweep_gif(*sw);
    summary["sweep"] = {{"lambda_low", sw->low.lambda},
                        {"lambda_high", sw->high.lambda},
                        {"frames", sw->frames.size()},
                        {"gif_frames", boomerang_order(sw->frames.size()).size()}};
    if (sw->frames.size() == 1)
      result.warnings.push_back("latent gradient is zero for " + sample.id + "/" + task +
                                "; the animation has a single frame");
  }

  nlohmann::json maps = nlohmann::json::object();
  for (Method m : methods) {
    const std::string name(to_string(m));
    Map2D values;
    if (is_latent_shift(m)) {
      if (sw->frames.size() < 2) {
        result.warnings.push_back(name + " skipped: the sweep has a single frame");
        continue;
      }
      values = attr_latentshift(*sw, m).values;
      if (options.smooth_sigma > 0) values = gaussian_smooth(values, options.smooth_sigma);
    } else {
      values = explain(m, clf, nullptr, sample.image, task, options).values;
    }
    fs::create_directories(out / "maps");
    fs::create_directories(out / "overlays");
    const fs::path png = out / "maps" / (name + ".png");
    write_map(png, values, {{"method", name}, {"task", task}, {"sample_id", sample.id}});
    write_png(out / "overlays" / (name + ".png"), overlay(sample.image, values));
    maps[name] = png.lexically_relative(out).generic_string();
  }
  summary["maps"] = maps;
  summary["warnings"] = result.warnings;
  if (!provenance.is_null()) summary["provenance"] = provenance;
  fs::create_directories(out);
  std::ofstream(out / "explain.json", std::ios::binary) << summary.dump(2) << '\n';
  return result;
}

}  // namespace latentshift
