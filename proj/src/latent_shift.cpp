#include "latentshift/latent_shift.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace latentshift {

namespace {

Tensor as_tensor(const LatentVector& z) { return Tensor({z.size()}, z); }

}  // namespace

LatentVector encode_latent(const Autoencoder& ae, const Tensor& x) { return ae.encode(x).vec(); }

Tensor reconstruct(const Autoencoder& ae, const LatentVector& z) {
  if (z.size() != ae.bottleneck_size) {
    throw std::invalid_argument("latent dimension " + std::to_string(z.size()) + " does not match bottleneck " +
                                std::to_string(ae.bottleneck_size));
  }
  return ae.decode(as_tensor(z));
}

LatentVector latent_gradient(const Autoencoder& ae, const Classifier& clf, const LatentVector& z,
                             std::string_view task, GradientTarget target) {
  const Index t = clf.task_index(task);
  if (z.size() != ae.bottleneck_size) throw std::invalid_argument("latent dimension does not match bottleneck");
  const Tape dec = forward_tape(ae.decoder, as_tensor(z));
  const Tape cls = forward_tape(clf.graph, dec.output());
  BackwardOptions opts;
  if (target == GradientTarget::Logit) opts.node = clf.logit_node;
  const Index seed = opts.node.empty() ? clf.graph.size() - 1 : clf.graph.index_of(opts.node);
  Tensor upstream(clf.graph.shape_of(seed));
  upstream[t] = 1.0;
  const Tensor dx = backward(clf.graph, cls, upstream, opts).input;
  return backward(ae.decoder, dec, dx).input.vec();
}

LatentVector shift(const LatentVector& z, const LatentVector& g, double lambda) {
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  if (z.size() != g.size()) throw std::invalid_argument("latent and gradient dimensions differ");
  return z + lambda * g;
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Plateau:
      return "plateau";
    case StopReason::Halved:
      return "halved";
    case StopReason::Increased:
      return "increased";
    case StopReason::Cap:
      return "cap";
    case StopReason::ZeroGradient:
      return "zero-gradient";
  }
  return "unknown";
}

namespace {

// direction = -1 walks toward lower predictions, +1 toward higher ones.
SearchResult search(const PredictionPath& predict, const SearchOptions& o, int direction) {
  if (!(o.step > 0) || !(o.limit > 0)) throw std::invalid_argument("search step and limit must be positive");
  SearchResult r;
  const double initial = predict(0.0);
  r.evaluations = 1;
  r.lambdas.push_back(0.0);
  r.predictions.push_back(initial);
  double previous = initial;
  for (long i = 1;; ++i) {
    const double lambda = direction * std::min(o.limit, static_cast<double>(i) * o.step);
    const double current = predict(lambda);
    ++r.evaluations;
    r.lambdas.push_back(lambda);
    r.predictions.push_back(current);
    r.lambda = lambda;
    const bool moved = direction < 0 ? current < previous : current > previous;
    if (!moved) {
      r.reason = StopReason::Plateau;
      return r;
    }
    if (direction < 0 ? current < initial - o.drop : current >= initial + o.rise) {
      r.reason = direction < 0 ? StopReason::Halved : StopReason::Increased;
      return r;
    }
    if (std::abs(lambda) >= o.limit) {
      r.reason = StopReason::Cap;
      return r;
    }
    previous = current;
  }
}

SearchResult zero_gradient_result(double initial) {
  SearchResult r;
  r.lambda = 0.0;
  r.reason = StopReason::ZeroGradient;
  r.evaluations = 1;
  r.lambdas = {0.0};
  r.predictions = {initial};
  return r;
}

}  // namespace

SearchResult search_lambda_low(const PredictionPath& predict, const SearchOptions& options) {
  return search(predict, options, -1);
}

SearchResult search_lambda_high(const PredictionPath& predict, const SearchOptions& options) {
  return search(predict, options, +1);
}

LatentPath::LatentPath(const Autoencoder& ae, const Classifier& clf, LatentVector z, std::string task,
                       GradientTarget target, bool curved, double step)
    : ae_(&ae),
      clf_(&clf),
      z_(std::move(z)),
      task_name_(std::move(task)),
      task_(clf.task_index(task_name_)),
      target_(target),
      curved_(curved),
      step_(step) {
  g_ = latent_gradient(ae, clf, z_, task_name_, target_);
}

LatentVector LatentPath::at(double lambda) const {
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  if (lambda == 0.0) return z_;
  if (!curved_) return shift(z_, g_, lambda);
  // Euler integration of dz/dlambda = grad f(D(z)), re-evaluated every step.
  LatentVector z = z_;
  LatentVector g = g_;
  double done = 0.0;
  const double sign = lambda < 0 ? -1.0 : 1.0;
  while (std::abs(lambda - done) > 0.0) {
    const double h = sign * std::min(step_, std::abs(lambda - done));
    z += h * g;
    done += h;
    if (std::abs(lambda - done) > 0.0) g = latent_gradient(*ae_, *clf_, z, task_name_, target_);
  }
  return z;
}

double LatentPath::predict(double lambda) const { return clf_->predict(reconstruct(*ae_, at(lambda)), task_); }

namespace {

SearchResult model_search(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                          const SearchOptions& options, int direction) {
  const LatentPath path(ae, clf, encode_latent(ae, x), std::string(task), GradientTarget::Probability, false,
                        options.step);
  if (path.zero_gradient()) return zero_gradient_result(path.predict(0.0));
  return search([&](double l) { return path.predict(l); }, options, direction);
}

}  // namespace

SearchResult search_lambda_low(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                               const SearchOptions& options) {
  return model_search(ae, clf, x, task, options, -1);
}

SearchResult search_lambda_high(const Autoencoder& ae, const Classifier& clf, const Tensor& x,
                                std::string_view task, const SearchOptions& options) {
  return model_search(ae, clf, x, task, options, +1);
}

std::size_t LambdaSweep::zero_index() const {
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    if (lambdas[i] == 0.0) return i;
  throw std::logic_error("sweep has no lambda = 0 frame");
}

std::vector<double> lambda_grid(double low, double high, int n_frames) {
  if (n_frames < 3 || n_frames % 2 == 0) throw std::invalid_argument("n_frames must be odd and at least 3");
  if (!(low <= 0 && high >= 0)) throw std::invalid_argument("lambda range must contain 0");
  const int n = n_frames - 1;
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n; ++i) {
    grid.push_back(i == n - 1 ? high : low + (high - low) * static_cast<double>(i) / (n - 1));
  }
  grid.push_back(0.0);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

LambdaSweep sweep(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                  const SweepOptions& options) {
  if (options.n_frames < 3 || options.n_frames % 2 == 0) {
    throw std::invalid_argument("n_frames must be odd and at least 3");
  }
  LambdaSweep s;
  s.task = std::string(task);
  const LatentPath path(ae, clf, encode_latent(ae, x), s.task, options.target, options.curved_path,
                        options.search.step);
  s.latent = path.origin();
  s.base_gradient = path.base_gradient();
  if (path.zero_gradient()) {
    s.low = s.high = zero_gradient_result(path.predict(0.0));
    s.lambdas = {0.0};
  } else {
    const PredictionPath predict = [&](double l) { return path.predict(l); };
    s.low = search_lambda_low(predict, options.search);
    s.high = search_lambda_high(predict, options.search);
    s.lambdas = lambda_grid(s.low.lambda, s.high.lambda, options.n_frames);
  }
  for (double l : s.lambdas) {
    Tensor frame = reconstruct(ae, path.at(l));
    s.predictions.push_back(clf.predict(frame, path.task_index()));
    s.frames.push_back(std::move(frame));
  }
  return s;
}

ShiftedFrame shifted_frame(const Autoencoder& ae, const Classifier& clf, const Tensor& x, std::string_view task,
                           double lambda, const SweepOptions& options) {
  if (!std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite");
  const LatentPath path(ae, clf, encode_latent(ae, x), std::string(task), options.target, options.curved_path,
                        options.search.step);
  Tensor frame = reconstruct(ae, path.at(lambda));
  const double p = clf.predict(frame, path.task_index());
  return {std::move(frame), p};
}

}  // namespace latentshift
