// Command-line entry points: dataset synthesis, training, explanation export,
// evaluation suites, and the HTTP server.

#include "latentshift/artifacts.hpp"
#include "latentshift/checkpoint.hpp"
#include "latentshift/evaluation.hpp"
#include "latentshift/pipeline.hpp"
#include "latentshift/server.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

using namespace latentshift;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfigError = 2, kMissingArtifact = 3, kRuntimeFailure = 4 };

/// Effective settings of a subcommand; output locations are left out so that
/// the same run into two directories hashes alike.
json effective_config(const CLI::App& cmd) {
  json j = {{"command", cmd.get_name()}};
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames()[0];
    if (name == "help" || name == "config" || name == "out" || name == "overwrite") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r[0]) : json(r);
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

json provenance(const CLI::App& cmd) {
  const json c = effective_config(cmd);
  return {{"config", c}, {"config_hash", config_hash(c)}};
}

std::vector<Sample> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "images")) throw MissingArtifact("no dataset at " + dir.string());
  auto r = ingest_external(dir);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  if (r.samples.empty()) throw MissingArtifact("dataset at " + dir.string() + " is empty");
  return std::move(r.samples);
}

std::vector<Method> parse_methods(const std::vector<std::string>& names, bool have_ae) {
  std::vector<Method> out;
  for (const auto& n : names) out.push_back(method_from_string(n));
  if (names.empty())
    for (Method m : all_methods())
      if (have_ae || !is_latent_shift(m)) out.push_back(m);
  return out;
}

ArchitectureConfig arch_for(const std::vector<Sample>& samples) {
  ArchitectureConfig a;
  a.image_size = samples.front().image.dim(2);
  return a;
}

struct TrainFlags {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;

  void add(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch-size", batch_size, "Minibatch size")->check(CLI::PositiveNumber);
    cmd->add_option("--lr", learning_rate, "Learning rate")->check(CLI::PositiveNumber);
  }
  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.seed = seed;
    return c;
  }
};

struct Options {
  std::uint64_t seed = 0;
  fs::path out, data, model, ae;
  bool overwrite = false;

  // synth
  Index count = 2000, size = 64;
  // training
  TrainFlags train;
  Index bottleneck = ArchitectureConfig{}.bottleneck;
  // explain / eval
  std::string sample;
  std::vector<std::string> tasks, methods;
  int frames = 21;
  int ig_steps = 64;
  double smooth = 0.0;
  bool logit = false;
  std::size_t samples = 80, images = 20;
  std::vector<std::string> perturbations;
  std::vector<double> scales;
  std::vector<Index> bottlenecks{8, 32, 128, 512};
  std::string suite;
  // serve
  fs::path data_dir;
  int port = -1;
  int cases = 24;
  std::string host = "127.0.0.1";

  ExplainOptions explain() const {
    ExplainOptions e;
    e.ig_steps = ig_steps;
    e.sweep.n_frames = frames;
    e.smooth_sigma = smooth;
    e.target = logit ? GradientTarget::Logit : GradientTarget::Probability;
    return e;
  }
};

int cmd_synth(const Options& o, const CLI::App&) {
  prepare_output_dir(o.out, o.overwrite);
  const auto samples = generate(o.seed, o.count, o.size);
  write_dataset(o.out, samples, o.seed);
  std::map<std::string, int> positives;
  for (const auto& s : samples)
    for (const auto& f : kFindings) positives[f] += s.label(f);
  std::cout << "wrote " << samples.size() << " images of " << o.size << "x" << o.size << " to " << o.out.string()
            << "\n";
  for (const auto& f : kFindings) std::cout << "  " << f << ": " << positives[f] << " positive\n";
  return kOk;
}

int cmd_train_ae(const Options& o, const CLI::App& cmd) {
  const auto samples = load_dataset(o.data);
  prepare_output_dir(o.out, o.overwrite);
  const DataSplit split = split_dataset(samples);
  ArchitectureConfig arch = arch_for(samples);
  arch.bottleneck = o.bottleneck;
  const auto train = images_of(split.train), val = images_of(split.validation);
  const auto result = train_autoencoder(train, val, make_autoencoder(arch, derive_seed(o.seed, "autoencoder")),
                                        o.train.config(derive_seed(o.seed, "ae-train")),
                                        [](int epoch, const Autoencoder&) { std::cerr << "epoch " << epoch << "\n"; });
  json extra = provenance(cmd);
  extra["train_loss"] = result.train_loss;
  extra["train_mae"] = result.train_mae;
  extra["validation_mae"] = result.validation_mae;
  save_autoencoder(o.out, result.model, extra);
  std::cout << "final train loss " << result.train_loss.back() << ", train MAE " << result.train_mae.back()
            << ", validation MAE " << result.validation_mae.back() << "\n";
  return kOk;
}

int cmd_train_clf(const Options& o, const CLI::App& cmd) {
  const auto samples = load_dataset(o.data);
  prepare_output_dir(o.out, o.overwrite);
  const DataSplit split = split_dataset(samples);
  const auto arch = arch_for(samples);
  const auto images = images_of(split.train);
  const auto labels = label_rows(split.train, kFindings);
  auto result = train_classifier(images, labels, make_classifier(arch, kFindings, derive_seed(o.seed, "classifier")),
                                 o.train.config(derive_seed(o.seed, "clf-train")));
  Classifier clf = std::move(result.model);
  calibrate_classifier(clf, split.validation);
  const EvalReport aucs = auc_suite(clf, split.test);
  json extra = provenance(cmd);
  extra["train_loss"] = result.train_loss;
  json held_out = json::object();
  for (const auto& r : aucs.rows) held_out[r.task] = r.skipped.empty() ? json(r.mean) : json(nullptr);
  extra["held_out_auc"] = held_out;
  save_classifier(o.out, clf, extra);
  std::cout << "final train loss " << result.train_loss.back() << "\n";
  for (std::size_t t = 0; t < aucs.rows.size(); ++t) {
    const auto& r = aucs.rows[t];
    std::cout << "  " << r.task << ": held-out AUC ";
    if (r.skipped.empty()) std::cout << r.mean;
    else std::cout << "n/a (" << r.skipped << ")";
    std::cout << ", threshold " << clf.thresholds[t] << "\n";
  }
  return kOk;
}

int cmd_explain(const Options& o, const CLI::App& cmd) {
  const auto samples = load_dataset(o.data);
  const Classifier clf = load_classifier(o.model);
  std::optional<Autoencoder> ae;
  if (!o.ae.empty()) ae = load_autoencoder(o.ae);
  const auto methods = parse_methods(o.methods, ae.has_value());
  if (o.tasks.size() != 1) throw std::invalid_argument("explain takes exactly one --task");
  const std::string& task = o.tasks[0];
  clf.task_index(task);
  const Sample* sample = nullptr;
  for (const auto& s : samples)
    if (s.id == o.sample) sample = &s;
  if (!sample) throw MissingArtifact("no sample '" + o.sample + "' in " + o.data.string());
  prepare_output_dir(o.out, o.overwrite);
  const auto r = export_explanation(*sample, clf, ae ? &*ae : nullptr, task, methods, o.explain(), o.out,
                                    provenance(cmd));
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "prediction " << r.summary["prediction"].get<double>() << " for " << task << " on " << sample->id
            << "\n";
  if (r.summary.contains("sweep"))
    std::cout << "lambda range [" << r.summary["sweep"]["lambda_low"].get<double>() << ", "
              << r.summary["sweep"]["lambda_high"].get<double>() << "], "
              << r.summary["sweep"]["gif_frames"].get<std::size_t>() << " GIF frames\n";
  std::cout << "wrote " << o.out.string() << "\n";
  return kOk;
}

std::vector<std::string> eval_tasks(const Options& o, const Classifier& clf) {
  for (const auto& t : o.tasks) clf.task_index(t);
  return o.tasks.empty() ? clf.task_names : o.tasks;
}

std::vector<Tensor> first_images(const std::vector<const Sample*>& chosen) {
  std::vector<Tensor> out;
  for (const Sample* s : chosen) out.push_back(s->image);
  return out;
}

EvalReport eval_cascade(const Options& o, const Classifier& clf, const Autoencoder* ae, const DataSplit& split) {
  EvalReport rep;
  rep.suite = "cascade";
  const auto methods = parse_methods(o.methods, ae != nullptr);
  for (const auto& task : eval_tasks(o, clf)) {
    const auto chosen = positives_with_masks(split.test, task, o.images);
    if (chosen.empty()) {
      EvalRow r;
      r.task = task;
      r.metric = "spearman";
      r.model_id = o.model.filename().string();
      r.skipped = "no positive samples with masks";
      rep.add(std::move(r));
      continue;
    }
    for (Method m : methods) {
      CascadeOptions co;
      co.method = m;
      co.explain = o.explain();
      co.task = task;
      co.seed = derive_seed(o.seed, "cascade");
      for (const auto& p : cascading_randomization(clf, ae, first_images(chosen), co)) {
        std::vector<double> values;
        for (const auto& c : p.correlations)
          if (c) values.push_back(*c);
        EvalRow r = summary_row(task, std::string(to_string(m)), o.model.filename().string(), "spearman", values);
        r.extra = {{"depth", std::to_string(p.depth)}, {"layer", p.layer}, {"missing", std::to_string(p.missing)}};
        rep.add(std::move(r));
      }
    }
  }
  return rep;
}

EvalReport eval_robust(const Options& o, const Classifier& clf, const Autoencoder* ae, const DataSplit& split) {
  EvalReport rep;
  rep.suite = "robust";
  const auto methods = o.methods.empty() ? std::vector<Method>{Method::LatentShiftMax} : parse_methods(o.methods, ae);
  std::vector<Perturbation> kinds;
  for (const auto& p : o.perturbations) kinds.push_back(perturbation_from_string(p));
  if (kinds.empty()) kinds = {Perturbation::GaussianNoise, Perturbation::GaussianBlur};
  for (const auto& task : eval_tasks(o, clf)) {
    const auto chosen = positives_with_masks(split.test, task, o.images);
    for (Method m : methods)
      for (Perturbation kind : kinds) {
        RobustnessOptions ro;
        ro.method = m;
        ro.explain = o.explain();
        ro.task = task;
        ro.perturbation = kind;
        ro.seed = derive_seed(o.seed, "robust");
        ro.scales = o.scales;
        if (ro.scales.empty())
          ro.scales = kind == Perturbation::GaussianNoise ? std::vector<double>{0, 25, 50, 100, 200}
                                                          : std::vector<double>{0, 0.5, 1, 2, 4};
        for (const auto& p : robustness(clf, ae, chosen, ro)) {
          for (const auto& [metric, ms] : {std::pair{"spearman", p.spearman}, std::pair{"iou", p.iou}}) {
            EvalRow r;
            r.task = task;
            r.method = std::string(to_string(m));
            r.model_id = o.model.filename().string();
            r.metric = metric;
            r.mean = ms.mean;
            r.std = ms.std;
            r.n = ms.n;
            if (ms.n == 0) r.skipped = "no evaluable samples";
            char scale[32];
            std::snprintf(scale, sizeof scale, "%g", p.scale);
            r.extra = {{"perturbation", std::string(to_string(kind))},
                       {"scale", scale},
                       {"missing", std::to_string(p.missing)}};
            rep.add(std::move(r));
          }
        }
      }
  }
  return rep;
}

EvalReport eval_bottleneck(const Options& o, const Classifier& clf, const DataSplit& split) {
  EvalReport rep;
  rep.suite = "bottleneck-sweep";
  BottleneckOptions bo;
  bo.bottlenecks = o.bottlenecks;
  bo.arch = arch_for(split.train);
  bo.train = o.train.config(derive_seed(o.seed, "bottleneck-train"));
  bo.task = o.tasks.empty() ? "bigheart" : o.tasks[0];
  clf.task_index(bo.task);
  bo.explain = o.explain();
  bo.seed = derive_seed(o.seed, "bottleneck");
  const auto train = images_of(split.train), val = images_of(split.validation);
  const auto eval = positives_with_masks(split.test, bo.task, o.samples);
  for (const auto& p : bottleneck_sweep(train, val, clf, eval, bo)) {
    const std::string b = std::to_string(p.bottleneck);
    EvalRow mae;
    mae.task = bo.task;
    mae.method = "autoencoder";
    mae.model_id = o.model.filename().string();
    mae.metric = "mae";
    mae.mean = p.mae;
    mae.n = static_cast<Index>(val.size());
    mae.extra = {{"bottleneck", b}, {"missing", "0"}};
    rep.add(std::move(mae));
    EvalRow iou;
    iou.task = bo.task;
    iou.method = std::string(to_string(Method::LatentShiftMax));
    iou.model_id = o.model.filename().string();
    iou.metric = "iou";
    iou.mean = p.iou.mean;
    iou.std = p.iou.std;
    iou.n = p.iou.n;
    if (p.iou.n == 0) iou.skipped = "no evaluable samples";
    iou.extra = {{"bottleneck", b}, {"missing", std::to_string(p.missing)}};
    rep.add(std::move(iou));
  }
  return rep;
}

int cmd_eval(const Options& o, const CLI::App& cmd) {
  static const std::vector<std::string> suites{"iou", "auc", "cascade", "robust", "bottleneck-sweep"};
  if (std::find(suites.begin(), suites.end(), o.suite) == suites.end())
    throw std::invalid_argument("unknown suite '" + o.suite + "'; valid: iou, auc, cascade, robust, bottleneck-sweep");
  const auto samples = load_dataset(o.data);
  const DataSplit split = split_dataset(samples);
  const Classifier clf = load_classifier(o.model);
  std::optional<Autoencoder> ae;
  if (!o.ae.empty()) ae = load_autoencoder(o.ae);
  const Autoencoder* aep = ae ? &*ae : nullptr;
  const std::string model_id = o.model.filename().string();
  prepare_output_dir(o.out, o.overwrite);

  EvalReport rep;
  if (o.suite == "iou") {
    IouSuiteOptions io;
    io.methods = parse_methods(o.methods, aep);
    io.tasks = eval_tasks(o, clf);
    io.samples_per_task = o.samples;
    io.explain = o.explain();
    io.random_baseline = true;
    io.seed = derive_seed(o.seed, "iou");
    io.model_id = model_id;
    rep = iou_suite(clf, aep, split.test, io);
  } else if (o.suite == "auc") {
    rep = auc_suite(clf, split.test, model_id);
  } else if (o.suite == "cascade") {
    rep = eval_cascade(o, clf, aep, split);
  } else if (o.suite == "robust") {
    rep = eval_robust(o, clf, aep, split);
  } else {
    rep = eval_bottleneck(o, clf, split);
  }
  rep.config = effective_config(cmd);
  rep.write(o.out);
  std::cout << rep.to_csv();
  return kOk;
}

int cmd_serve(const Options& o, const CLI::App&) {
  ServiceConfig cfg = config_from_env();
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  cfg.default_cases = o.cases;
  cfg.seed = o.seed;
  cfg.explain = o.explain();
  const int port = o.port >= 0 ? o.port : port_from_env();

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service service(cfg);
  HttpServer server(service);
  const int bound = server.bind(o.host, port);
  if (bound < 0) throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(port));
  std::cout << "listening on http://" << o.host << ":" << bound << " (data " << cfg.data_dir.string() << ")"
            << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

/// Moves --config ahead of the subcommand so that subcommand requirements
/// see values from the file. Returned in reverse order, as CLI11 expects.
std::vector<std::string> config_first(int argc, char** argv) {
  std::vector<std::string> front, rest;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) {
      front.push_back(a);
      front.emplace_back(argv[++i]);
    } else if (a.rfind("--config=", 0) == 0) {
      front.push_back(a);
    } else {
      rest.push_back(a);
    }
  }
  front.insert(front.end(), rest.begin(), rest.end());
  return {front.rbegin(), front.rend()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent Shift: counterfactual explanations by traversing an autoencoder's latent space"};
  app.set_config("--config", "", "TOML config file; keys are option names, per-command sections allowed");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Options o;

  auto common = [&](CLI::App* cmd, bool out_required = true) {
    cmd->add_option("--seed", o.seed, "Random seed");
    auto* out = cmd->add_option("--out", o.out, "Output directory");
    if (out_required) out->required();
    cmd->add_flag("--overwrite", o.overwrite, "Replace a non-empty output directory");
  };
  auto data = [&](CLI::App* cmd) { cmd->add_option("--data", o.data, "Dataset directory")->required(); };
  auto explain_flags = [&](CLI::App* cmd) {
    cmd->add_option("--frames", o.frames, "Frames per lambda sweep (odd)");
    cmd->add_option("--ig-steps", o.ig_steps, "Integrated-gradient steps")->check(CLI::PositiveNumber);
    cmd->add_option("--smooth", o.smooth, "Gaussian blur sigma applied to maps")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--logit", o.logit, "Differentiate the pre-sigmoid logit instead of the probability");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth);
  synth->add_option("--count", o.count, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", o.size, "Image side (32, 64 or 128)")->check(CLI::IsMember({32, 64, 128}));

  auto* train_ae = app.add_subcommand("train-ae", "Train an autoencoder");
  common(train_ae);
  data(train_ae);
  o.train.epochs = 20;
  o.train.add(train_ae);
  train_ae->add_option("--bottleneck", o.bottleneck, "Latent size")->check(CLI::PositiveNumber);

  auto* train_clf = app.add_subcommand("train-clf", "Train and calibrate a classifier");
  common(train_clf);
  data(train_clf);
  TrainFlags clf_train;
  clf_train.add(train_clf);

  auto* explain = app.add_subcommand("explain", "Export maps, sweep frames and an animation for one image");
  common(explain);
  data(explain);
  explain->add_option("--model", o.model, "Classifier directory")->required();
  explain->add_option("--ae", o.ae, "Autoencoder directory (needed for latent-shift methods)");
  explain->add_option("--sample", o.sample, "Sample id")->required();
  explain->add_option("--task", o.tasks, "Finding to explain")->required();
  explain->add_option("--method", o.methods, "Attribution method, repeatable; default: all available");
  explain_flags(explain);

  auto* eval = app.add_subcommand("eval", "Run an evaluation suite");
  eval->add_option("suite", o.suite, "iou | auc | cascade | robust | bottleneck-sweep")->required();
  common(eval);
  data(eval);
  eval->add_option("--model", o.model, "Classifier directory")->required();
  eval->add_option("--ae", o.ae, "Autoencoder directory");
  eval->add_option("--task", o.tasks, "Finding, repeatable; default: all classifier tasks");
  eval->add_option("--method", o.methods, "Attribution method, repeatable");
  eval->add_option("--samples", o.samples, "Positive samples per task (iou, bottleneck-sweep)");
  eval->add_option("--images", o.images, "Images per task (cascade, robust)");
  eval->add_option("--perturbation", o.perturbations, "gaussian-noise | gaussian-blur, repeatable (robust)");
  eval->add_option("--scales", o.scales, "Perturbation scales (robust)");
  eval->add_option("--bottlenecks", o.bottlenecks, "Latent sizes (bottleneck-sweep)");
  TrainFlags sweep_train;
  sweep_train.epochs = 5;
  sweep_train.add(eval);
  explain_flags(eval);

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
  serve->add_option("--seed", o.seed, "Default study session seed");
  serve->add_option("--data-dir", o.data_dir, "Data directory; default LS_DATA_DIR or ./data");
  serve->add_option("--port", o.port, "Port; default LS_PORT or 8080");
  serve->add_option("--host", o.host, "Listen address");
  serve->add_option("--cases", o.cases, "Default cases per study session");
  explain_flags(serve);

  try {
    app.parse(config_first(argc, argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (train_clf->parsed()) o.train = clf_train;
    if (eval->parsed()) o.train = sweep_train;
    if (synth->parsed()) return cmd_synth(o, *synth);
    if (train_ae->parsed()) return cmd_train_ae(o, *train_ae);
    if (train_clf->parsed()) return cmd_train_clf(o, *train_clf);
    if (explain->parsed()) return cmd_explain(o, *explain);
    if (eval->parsed()) return cmd_eval(o, *eval);
    if (serve->parsed()) return cmd_serve(o, *serve);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const OutputExists& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kConfigError;
}
