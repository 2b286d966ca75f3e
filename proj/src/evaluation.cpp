#include "latentshift/evaluation.hpp"

#include "latentshift/rng.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latentshift {

using json = nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Map2D abs_map(const Map2D& m) { return m.abs(); }

std::span<const double> flat(const Map2D& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

std::optional<double> safe_spearman(const Map2D& a, const Map2D& b) {
  const Map2D aa = abs_map(a), bb = abs_map(b);
  if ((aa == aa(0, 0)).all() || (bb == bb(0, 0)).all()) return std::nullopt;
  return spearman(flat(aa), flat(bb));
}

}  // namespace

std::string config_hash(const json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config.dump())));
  return buf;
}

EvalRow& EvalReport::add(EvalRow row) {
  if (row.skipped.empty() && row.n < 1) throw std::invalid_argument("report row needs n >= 1 or a skip reason");
  rows.push_back(std::move(row));
  return rows.back();
}

std::string EvalReport::config_hash() const { return latentshift::config_hash(config); }

std::string EvalReport::to_csv() const {
  std::vector<std::string> extra_keys;
  for (const auto& r : rows)
    for (const auto& [k, v] : r.extra)
      if (std::find(extra_keys.begin(), extra_keys.end(), k) == extra_keys.end()) extra_keys.push_back(k);
  std::ostringstream os;
  os << "suite,task,method,model_id,metric";
  for (const auto& k : extra_keys) os << ',' << csv_field(k);
  os << ",mean,std,n,skipped,config_hash\n";
  const std::string hash = config_hash();
  for (const auto& r : rows) {
    os << csv_field(suite) << ',' << csv_field(r.task) << ',' << csv_field(r.method) << ',' << csv_field(r.model_id)
       << ',' << csv_field(r.metric);
    for (const auto& k : extra_keys) {
      std::string v;
      for (const auto& [kk, vv] : r.extra)
        if (kk == k) v = vv;
      os << ',' << csv_field(v);
    }
    if (r.skipped.empty()) {
      os << ',' << format_double(r.mean) << ',' << (r.std ? format_double(*r.std) : "") << ',' << r.n << ",,";
    } else {
      os << ",,," << r.n << ',' << csv_field(r.skipped) << ',';
    }
    os << hash << '\n';
  }
  return os.str();
}

json EvalReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json j = {{"task", r.task}, {"method", r.method}, {"model_id", r.model_id}, {"metric", r.metric}, {"n", r.n}};
    for (const auto& [k, v] : r.extra) j[k] = v;
    if (r.skipped.empty()) {
      j["mean"] = r.mean;
      j["std"] = r.std ? json(*r.std) : json(nullptr);
    } else {
      j["skipped"] = r.skipped;
    }
    rows_json.push_back(std::move(j));
  }
  return {{"suite", suite}, {"rows", rows_json}, {"provenance", {{"config", config}, {"config_hash", config_hash()}}}};
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / (suite + ".csv"), std::ios::binary);
  csv << to_csv();
  std::ofstream js(dir / (suite + ".json"), std::ios::binary);
  js << to_json().dump(2) << '\n';
  if (!csv || !js) throw std::runtime_error("failed to write report to " + dir.string());
}

EvalRow summary_row(std::string task, std::string method, std::string model_id, std::string metric,
                    std::span<const double> values) {
  EvalRow r;
  r.task = std::move(task);
  r.method = std::move(method);
  r.model_id = std::move(model_id);
  r.metric = std::move(metric);
  const MeanStd m = mean_std(values);
  r.n = m.n;
  r.mean = m.mean;
  r.std = m.std;
  if (m.n == 0) r.skipped = "no evaluable samples";
  return r;
}

Map2D random_map(Index height, Index width, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Map2D m(height, width);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

std::optional<Map2D> try_explain(const MapRequest& req, const Classifier& clf, const Autoencoder* ae,
                                 const Tensor& x, std::string_view task) {
  if (!is_latent_shift(req.method)) return explain(req.method, clf, ae, x, task, req.options).values;
  if (!ae) throw std::invalid_argument(std::string(to_string(req.method)) + " requires an autoencoder");
  SweepOptions so = req.options.sweep;
  so.target = req.options.target;
  const LambdaSweep s = sweep(*ae, clf, x, task, so);
  if (s.frames.size() < 2) return std::nullopt;
  Map2D m = attr_latentshift(s, req.method).values;
  if (req.options.smooth_sigma > 0) m = gaussian_smooth(m, req.options.smooth_sigma);
  return m;
}

std::vector<const Sample*> positives_with_masks(const std::vector<Sample>& samples, std::string_view task,
                                                std::size_t limit) {
  std::vector<const Sample*> out;
  const std::string t(task);
  for (const auto& s : samples) {
    if (out.size() >= limit) break;
    const auto it = s.masks.find(t);
    if (s.label(t) == 1 && it != s.masks.end() && (it->second != 0).any()) out.push_back(&s);
  }
  return out;
}

EvalReport iou_suite(const Classifier& clf, const Autoencoder* ae, const std::vector<Sample>& samples,
                     const IouSuiteOptions& options) {
  EvalReport report;
  report.suite = "iou";
  const std::vector<Method> methods = options.methods.empty() ? all_methods() : options.methods;
  const std::vector<std::string> tasks = options.tasks.empty() ? clf.task_names : options.tasks;
  for (const auto& task : tasks) {
    const auto chosen = positives_with_masks(samples, task, options.samples_per_task);
    for (Method m : methods) {
      if (chosen.empty()) {
        EvalRow r;
        r.task = task;
        r.method = std::string(to_string(m));
        r.model_id = options.model_id;
        r.metric = "iou";
        r.skipped = "no positive samples with masks";
        report.add(std::move(r));
        continue;
      }
      std::vector<double> values;
      Index missing = 0;
      for (const Sample* s : chosen) {
        const auto map = try_explain({m, options.explain}, clf, ae, s->image, task);
        if (!map) {
          ++missing;
          continue;
        }
        values.push_back(iou_score(*map, s->masks.at(task)));
      }
      EvalRow r = summary_row(task, std::string(to_string(m)), options.model_id, "iou", values);
      r.extra.emplace_back("missing", std::to_string(missing));
      report.add(std::move(r));
    }
    if (options.random_baseline && !chosen.empty()) {
      Rng rng(derive_seed(options.seed, "random-baseline/" + task));
      std::vector<double> values;
      for (const Sample* s : chosen) {
        const Mask& mask = s->masks.at(task);
        values.push_back(iou_score(random_map(mask.rows(), mask.cols(), rng), mask));
      }
      EvalRow r = summary_row(task, "random", options.model_id, "iou", values);
      r.extra.emplace_back("missing", "0");
      report.add(std::move(r));
    }
  }
  return report;
}

EvalReport auc_suite(const Classifier& clf, const std::vector<Sample>& samples, std::string model_id) {
  EvalReport report;
  report.suite = "auc";
  std::vector<Tensor> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples) preds.push_back(clf.predict(s.image));
  for (std::size_t t = 0; t < clf.task_names.size(); ++t) {
    const std::string& task = clf.task_names[t];
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto it = samples[i].labels.find(task);
      if (it == samples[i].labels.end()) continue;
      scores.push_back(preds[i][static_cast<Index>(t)]);
      labels.push_back(it->second);
    }
    EvalRow r;
    r.task = task;
    r.method = "classifier";
    r.model_id = model_id;
    r.metric = "auc";
    r.n = static_cast<Index>(scores.size());
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) {
      r.mean = auc(scores, labels);
    } else {
      r.skipped = "single-class labels";
    }
    report.add(std::move(r));
  }
  return report;
}

std::vector<CascadePoint> cascading_randomization(const Classifier& clf, const Autoencoder* ae,
                                                  const std::vector<Tensor>& images, const CascadeOptions& options) {
  if (images.empty()) throw std::invalid_argument("cascading randomization needs at least one image");
  const MapRequest req{options.method, options.explain};
  const auto order = clf.graph.layer_order();
  std::vector<std::optional<Map2D>> reference;
  for (const auto& x : images) reference.push_back(try_explain(req, clf, ae, x, options.task));

  std::vector<CascadePoint> curve;
  for (Index depth = 0; depth <= static_cast<Index>(order.size()); ++depth) {
    Classifier randomized = clf;
    randomized.graph = reinitialize_layers(clf.graph, depth, options.seed);
    CascadePoint p;
    p.depth = depth;
    if (depth > 0) p.layer = order[static_cast<std::size_t>(depth - 1)];
    std::vector<double> values;
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::optional<double> c;
      if (reference[i]) {
        const auto map = depth == 0 ? reference[i] : try_explain(req, randomized, ae, images[i], options.task);
        if (map) c = safe_spearman(*reference[i], *map);
      }
      if (c) values.push_back(*c);
      else ++p.missing;
      p.correlations.push_back(c);
    }
    p.summary = mean_std(values);
    curve.push_back(std::move(p));
  }
  return curve;
}

std::string_view to_string(Perturbation p) { return p == Perturbation::GaussianNoise ? "gaussian-noise" : "gaussian-blur"; }

Perturbation perturbation_from_string(std::string_view s) {
  if (s == "gaussian-noise") return Perturbation::GaussianNoise;
  if (s == "gaussian-blur") return Perturbation::GaussianBlur;
  throw std::invalid_argument("unknown perturbation '" + std::string(s) + "'; valid: gaussian-noise, gaussian-blur");
}

Tensor perturb(const Tensor& x, Perturbation p, double scale, Rng& rng) {
  if (!(scale >= 0) || !std::isfinite(scale)) throw std::invalid_argument("perturbation scale must be finite and >= 0");
  if (scale == 0) return x;
  Tensor out = x;
  if (p == Perturbation::GaussianNoise) {
    std::normal_distribution<double> n(0.0, scale);
    for (Index i = 0; i < out.size(); ++i) out[i] += n(rng);
  } else {
    for (Index c = 0; c < x.dim(0); ++c) {
      const Map2D blurred = gaussian_smooth(channel(x, c), scale);
      const Index plane = x.dim(1) * x.dim(2);
      for (Index i = 0; i < plane; ++i) out[c * plane + i] = blurred.data()[i];
    }
  }
  out.vec() = out.vec().cwiseMax(-kImageRange).cwiseMin(kImageRange);
  return out;
}

std::vector<RobustnessPoint> robustness(const Classifier& clf, const Autoencoder* ae,
                                        const std::vector<const Sample*>& samples, const RobustnessOptions& options) {
  const MapRequest req{options.method, options.explain};
  std::vector<std::optional<Map2D>> clean;
  for (const Sample* s : samples) clean.push_back(try_explain(req, clf, ae, s->image, options.task));
  std::vector<RobustnessPoint> curve;
  for (std::size_t k = 0; k < options.scales.size(); ++k) {
    RobustnessPoint p;
    p.scale = options.scales[k];
    std::vector<double> rho, ious;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      Rng rng(derive_seed(derive_seed(options.seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(k)));
      const Tensor x = perturb(samples[i]->image, options.perturbation, p.scale, rng);
      const auto map = p.scale == 0 ? clean[i] : try_explain(req, clf, ae, x, options.task);
      std::optional<double> c;
      if (map && clean[i]) c = safe_spearman(*clean[i], *map);
      if (!c) {
        ++p.missing;
        continue;
      }
      rho.push_back(*c);
      ious.push_back(iou_score(*map, samples[i]->masks.at(options.task)));
    }
    p.spearman = mean_std(rho);
    p.iou = mean_std(ious);
    curve.push_back(p);
  }
  return curve;
}

std::vector<BottleneckPoint> bottleneck_sweep(std::span<const Tensor> train, std::span<const Tensor> validation,
                                              const Classifier& clf, const std::vector<const Sample*>& eval,
                                              const BottleneckOptions& options) {
  if (validation.empty()) throw std::invalid_argument("bottleneck sweep needs validation images");
  std::vector<BottleneckPoint> out;
  for (Index b : options.bottlenecks) {
    ArchitectureConfig arch = options.arch;
    arch.bottleneck = b;
    TrainConfig cfg = options.train;
    const auto trained = train_autoencoder(train, validation, make_autoencoder(arch, derive_seed(options.seed, b)), cfg);
    BottleneckPoint p;
    p.bottleneck = b;
    p.mae = trained.validation_mae.back();
    std::vector<double> ious;
    for (const Sample* s : eval) {
      const auto map = try_explain({Method::LatentShiftMax, options.explain}, clf, &trained.model, s->image, options.task);
      if (!map) {
        ++p.missing;
        continue;
      }
      ious.push_back(iou_score(*map, s->masks.at(options.task)));
    }
    p.iou = mean_std(ious);
    out.push_back(p);
  }
  return out;
}

}  // namespace latentshift
