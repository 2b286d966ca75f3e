#include "latentshift/models.hpp"

#include "latentshift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latentshift {

void Autoencoder::validate() const {
  if (bottleneck_size <= 0) throw std::invalid_argument("bottleneck size must be positive");
  if (encoder.output_shape() != Shape{bottleneck_size}) {
    throw std::invalid_argument("encoder output " + shape_string(encoder.output_shape()) +
                                " does not match bottleneck " + std::to_string(bottleneck_size));
  }
  if (decoder.input_shape() != Shape{bottleneck_size}) {
    throw std::invalid_argument("decoder input " + shape_string(decoder.input_shape()) +
                                " does not match bottleneck " + std::to_string(bottleneck_size));
  }
  if (decoder.output_shape() != encoder.input_shape()) {
    throw std::invalid_argument("decoder output " + shape_string(decoder.output_shape()) +
                                " does not match image shape " + shape_string(encoder.input_shape()));
  }
}

Index Classifier::task_index(std::string_view task) const {
  for (std::size_t i = 0; i < task_names.size(); ++i)
    if (task_names[i] == task) return static_cast<Index>(i);
  throw std::invalid_argument("unknown task '" + std::string(task) + "'");
}

void Classifier::validate() const {
  if (graph.output_shape() != Shape{static_cast<Index>(task_names.size())}) {
    throw std::invalid_argument("classifier output " + shape_string(graph.output_shape()) + " does not match " +
                                std::to_string(task_names.size()) + " task names");
  }
  if (graph.size() == 0 || graph.layer(graph.size() - 1).kind != LayerKind::Sigmoid) {
    throw std::invalid_argument("classifier graph must end in a sigmoid");
  }
  graph.index_of(logit_node);
  if (!thresholds.empty() && thresholds.size() != task_names.size()) {
    throw std::invalid_argument("one threshold per task required");
  }
}

namespace {

Index check_image_size(Index size) {
  if (size < 8 || size % 8 != 0) {
    throw std::invalid_argument("image size must be a positive multiple of 8, got " + std::to_string(size));
  }
  return size;
}

}  // namespace

Autoencoder make_autoencoder(const ArchitectureConfig& arch, std::uint64_t seed) {
  const Index size = check_image_size(arch.image_size);
  if (arch.encoder_channels.size() != 3 || arch.decoder_channels.size() != 3) {
    throw std::invalid_argument("autoencoder expects three channel widths per side");
  }
  Autoencoder ae;
  ae.bottleneck_size = arch.bottleneck;

  ModelGraph enc({1, size, size});
  enc.add(scale("normalize", 1.0 / kImageRange));
  Index ch = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string b = "enc" + std::to_string(i + 1);
    const Index out = arch.encoder_channels[i];
    enc.add(conv2d(b + "_down", ch, out, 3, 2));
    enc.add(relu(b + "_down_act"));
    enc.add(conv2d(b + "_conv", out, out, 3));
    enc.add(residual_add(b + "_add", b + "_down_act", b + "_conv"));
    enc.add(relu(b + "_out"));
    ch = out;
  }
  // A bottleneck that tiles the final grid stays spatial (1×1 conv); any
  // other size goes through a dense layer.
  const Index side = size / 8;
  const bool spatial = arch.bottleneck % (side * side) == 0;
  const Index latent_ch = arch.bottleneck / (side * side);
  if (spatial) {
    enc.add(conv2d("to_latent", ch, latent_ch, 1));
    enc.add(flatten("flatten"));
  } else {
    enc.add(flatten("flatten"));
    enc.add(dense("to_latent", ch * side * side, arch.bottleneck));
  }

  const Index start = arch.decoder_channels.front();
  ModelGraph dec({arch.bottleneck});
  if (spatial) {
    dec.add(reshape("unflatten", {latent_ch, side, side}));
    dec.add(conv2d("from_latent", latent_ch, start, 1));
  } else {
    dec.add(dense("from_latent", arch.bottleneck, start * side * side));
    dec.add(reshape("unflatten", {start, side, side}));
  }
  dec.add(relu("unflatten_act"));
  ch = start;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string b = "dec" + std::to_string(i + 1);
    const Index out = arch.decoder_channels[i];
    dec.add(upsample2x(b + "_up"));
    dec.add(conv2d(b + "_up_conv", ch, out, 3));
    dec.add(relu(b + "_up_act"));
    dec.add(conv2d(b + "_conv", out, out, 3));
    dec.add(residual_add(b + "_add", b + "_up_act", b + "_conv"));
    dec.add(relu(b + "_out"));
    ch = out;
  }
  dec.add(conv2d("to_image", ch, 1, 3));
  dec.add(scale("denormalize", kImageRange));

  initialize(enc, derive_seed(seed, "encoder"));
  initialize(dec, derive_seed(seed, "decoder"));
  ae.encoder = std::move(enc);
  ae.decoder = std::move(dec);
  ae.validate();
  return ae;
}

Classifier make_classifier(const ArchitectureConfig& arch, std::vector<std::string> task_names,
                           std::uint64_t seed) {
  const Index size = check_image_size(arch.image_size);
  if (task_names.empty()) throw std::invalid_argument("classifier needs at least one task");
  if (arch.classifier_channels.size() != 3) throw std::invalid_argument("classifier expects three channel widths");
  ModelGraph g({1, size, size});
  g.add(scale("normalize", 1.0 / kImageRange));
  Index ch = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string b = "block" + std::to_string(i + 1);
    g.add(conv2d(b + "_conv", ch, arch.classifier_channels[i], 3));
    g.add(relu(b + "_act"));
    g.add(avgpool2(b + "_pool"));
    ch = arch.classifier_channels[i];
  }
  const Index side = size / 8;
  g.add(flatten("flatten"));
  g.add(dense("logits", ch * side * side, static_cast<Index>(task_names.size())));
  g.add(sigmoid("probabilities"));
  initialize(g, derive_seed(seed, "classifier"));
  Classifier c;
  c.graph = std::move(g);
  c.task_names = std::move(task_names);
  c.validate();
  return c;
}

double elastic_loss(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) {
    throw std::invalid_argument("elastic loss shape mismatch: " + shape_string(x.shape()) + " vs " +
                                shape_string(x_hat.shape()));
  }
  const auto d = (x.vec() - x_hat.vec()).array();
  return (d.square() + d.abs()).mean();
}

double elastic_loss(const Tensor& x, const Tensor& x_hat, double unit, Tensor& grad) {
  if (x.shape() != x_hat.shape()) {
    throw std::invalid_argument("elastic loss shape mismatch: " + shape_string(x.shape()) + " vs " +
                                shape_string(x_hat.shape()));
  }
  const Eigen::ArrayXd d = (x.vec() - x_hat.vec()).array() / unit;
  const double n = static_cast<double>(d.size());
  grad = Tensor(x.shape());
  grad.vec().array() = -(2.0 * d + d.sign()) / (unit * n);
  return (d.square() + d.abs()).mean();
}

double mean_absolute_error(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) throw std::invalid_argument("MAE shape mismatch");
  return (x.vec() - x_hat.vec()).cwiseAbs().mean();
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0) || !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1) || !(epsilon > 0)) {
    throw std::invalid_argument("optimizer settings must be positive (betas in (0,1))");
  }
}

void Adam::step(ModelGraph& graph, const GradientSet& grads, const std::string& prefix) {
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  graph.for_each_parameter([&](const std::string& key, Tensor& p) {
    auto it = grads.find(key);
    if (it == grads.end()) return;
    const Eigen::VectorXd& g = it->second.vec();
    Moments& s = state_[prefix + key];
    if (s.m.size() == 0) {
      s.m = Eigen::VectorXd::Zero(g.size());
      s.v = Eigen::VectorXd::Zero(g.size());
    }
    s.m = cfg_.beta1 * s.m + (1 - cfg_.beta1) * g;
    s.v = cfg_.beta2 * s.v + (1 - cfg_.beta2) * g.cwiseAbs2();
    p.vec().array() -= cfg_.learning_rate * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg_.epsilon);
  });
}

namespace {

void accumulate(GradientSet& into, const GradientSet& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  for (const auto& [k, t] : g) into.at(k).vec() += t.vec();
}

void scale_all(GradientSet& g, double s) {
  for (auto& [k, t] : g) t.vec() *= s;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct AeEval {
  double loss = 0, mae = 0;
};

AeEval evaluate_autoencoder(const Autoencoder& ae, std::span<const Tensor> data) {
  AeEval e;
  Tensor unused;
  for (const auto& x : data) {
    const Tensor r = ae.reconstruct(x);
    e.loss += elastic_loss(x, r, kImageRange, unused);
    e.mae += mean_absolute_error(x, r);
  }
  e.loss /= static_cast<double>(data.size());
  e.mae /= static_cast<double>(data.size());
  return e;
}

}  // namespace

AutoencoderTraining train_autoencoder(std::span<const Tensor> train, std::span<const Tensor> validation,
                                      Autoencoder model, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  model.validate();
  if (train.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& x : train)
    if (x.shape() != model.encoder.input_shape()) {
      throw std::invalid_argument("training image shape " + shape_string(x.shape()) + " does not match model input " +
                                  shape_string(model.encoder.input_shape()));
    }

  AutoencoderTraining out;
  auto record = [&](int epoch) {
    const AeEval t = evaluate_autoencoder(model, train);
    if (!std::isfinite(t.loss)) throw TrainingDiverged(epoch, "training loss is not finite");
    out.train_loss.push_back(t.loss);
    out.train_mae.push_back(t.mae);
    if (!validation.empty()) out.validation_mae.push_back(evaluate_autoencoder(model, validation).mae);
    if (on_epoch) on_epoch(epoch, model);
  };
  record(0);

  Adam adam(cfg);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      GradientSet enc_grads, dec_grads;
      for (std::size_t b = start; b < end; ++b) {
        const Tensor& x = train[order[b]];
        const Tape enc_tape = forward_tape(model.encoder, x);
        const Tape dec_tape = forward_tape(model.decoder, enc_tape.output());
        Tensor grad_out;
        const double loss = elastic_loss(x, dec_tape.output(), kImageRange, grad_out);
        if (!std::isfinite(loss)) throw TrainingDiverged(epoch, "loss is not finite");
        BackwardOptions opts;
        opts.parameters = true;
        BackwardResult dec_back = backward(model.decoder, dec_tape, grad_out, opts);
        BackwardResult enc_back = backward(model.encoder, enc_tape, dec_back.input, opts);
        accumulate(dec_grads, dec_back.params);
        accumulate(enc_grads, enc_back.params);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      scale_all(enc_grads, inv);
      scale_all(dec_grads, inv);
      adam.advance();
      adam.step(model.encoder, enc_grads, "encoder/");
      adam.step(model.decoder, dec_grads, "decoder/");
    }
    record(epoch);
  }
  out.model = std::move(model);
  return out;
}

double binary_cross_entropy(const Tensor& p, const std::vector<int>& labels) {
  constexpr double kFloor = 1e-12;
  double loss = 0;
  for (Index t = 0; t < p.size(); ++t) {
    const double q = labels[static_cast<std::size_t>(t)] ? p[t] : 1.0 - p[t];
    loss -= std::log(std::max(q, kFloor));
  }
  return loss / static_cast<double>(p.size());
}

ClassifierTraining train_classifier(std::span<const Tensor> images, std::span<const std::vector<int>> labels,
                                    Classifier model, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (images.empty()) throw std::invalid_argument("training set is empty");
  if (images.size() != labels.size()) throw std::invalid_argument("one label row per image required");
  const std::size_t tasks = model.task_names.size();
  for (const auto& row : labels)
    if (row.size() != tasks) throw std::invalid_argument("label row width does not match task count");

  ClassifierTraining out;
  auto mean_loss = [&] {
    double total = 0;
    for (std::size_t i = 0; i < images.size(); ++i) total += binary_cross_entropy(model.predict(images[i]), labels[i]);
    return total / static_cast<double>(images.size());
  };
  out.train_loss.push_back(mean_loss());

  Adam adam(cfg);
  const Index logits = model.graph.index_of(model.logit_node);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(images.size(), cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      GradientSet grads;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Tape tape = forward_tape(model.graph, images[i]);
        const Tensor& p = tape.output();
        // d BCE / d logit = p - y, averaged over tasks.
        Tensor upstream(model.graph.shape_of(logits));
        for (std::size_t t = 0; t < tasks; ++t) {
          upstream[static_cast<Index>(t)] = (p[static_cast<Index>(t)] - labels[i][t]) / static_cast<double>(tasks);
        }
        BackwardOptions opts;
        opts.parameters = true;
        opts.node = model.logit_node;
        accumulate(grads, backward(model.graph, tape, upstream, opts).params);
      }
      scale_all(grads, 1.0 / static_cast<double>(end - start));
      adam.advance();
      adam.step(model.graph, grads);
    }
    const double loss = mean_loss();
    if (!std::isfinite(loss)) throw TrainingDiverged(epoch, "loss is not finite");
    out.train_loss.push_back(loss);
  }
  out.model = std::move(model);
  return out;
}

ModelGraph reinitialize_layers(const ModelGraph& model, Index first_k, std::uint64_t seed) {
  const auto order = model.layer_order();
  if (first_k < 0 || first_k > static_cast<Index>(order.size())) {
    throw std::out_of_range("first_k " + std::to_string(first_k) + " outside [0, " + std::to_string(order.size()) +
                            "]");
  }
  ModelGraph copy = model;
  for (Index k = 0; k < first_k; ++k) initialize_layer(copy.layer(order[static_cast<std::size_t>(k)]), seed);
  return copy;
}

}  // namespace latentshift
