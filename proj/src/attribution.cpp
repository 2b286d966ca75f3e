#include "latentshift/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace latentshift {

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::Grad, "grad"},
    {Method::Guided, "guided"},
    {Method::Integrated, "integrated"},
    {Method::LatentShiftMax, "latentshift-max"},
    {Method::LatentShiftMean, "latentshift-mean"},
    {Method::LatentShiftMinMax, "latentshift-minmax"},
    {Method::LatentShiftSliding, "latentshift-sliding"},
};

std::string_view node_for(const Classifier& clf, GradientTarget target) {
  return target == GradientTarget::Logit ? std::string_view(clf.logit_node) : std::string_view();
}

AttributionMap make_map(Map2D values, Method m, std::string_view task) {
  AttributionMap a;
  a.values = std::move(values);
  a.method = m;
  a.task = std::string(task);
  return a;
}

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& [k, n] : kMethodNames)
    if (k == m) return n;
  return "unknown";
}

std::string method_names() {
  std::string s;
  for (const auto& [k, n] : kMethodNames) {
    if (!s.empty()) s += ", ";
    s += n;
  }
  return s;
}

Method method_from_string(std::string_view name) {
  for (const auto& [k, n] : kMethodNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'; valid methods: " + method_names());
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = [] {
    std::vector<Method> v;
    for (const auto& [k, n] : kMethodNames) v.push_back(k);
    return v;
  }();
  return methods;
}

bool is_latent_shift(Method m) {
  return m == Method::LatentShiftMax || m == Method::LatentShiftMean || m == Method::LatentShiftMinMax ||
         m == Method::LatentShiftSliding;
}

Map2D reduce_channels(const Tensor& t) {
  if (t.rank() != 3) throw std::invalid_argument("expected C×H×W, got " + shape_string(t.shape()));
  Map2D out = Map2D::Zero(t.dim(1), t.dim(2));
  for (Index c = 0; c < t.dim(0); ++c) out += channel(t, c).abs();
  return out;
}

AttributionMap attr_grad(const Classifier& clf, const Tensor& x, std::string_view task, GradientTarget target) {
  const Tensor g = input_gradient(clf.graph, x, clf.task_index(task), GradientMode::Standard, node_for(clf, target));
  return make_map(reduce_channels(g), Method::Grad, task);
}

AttributionMap attr_guided(const Classifier& clf, const Tensor& x, std::string_view task, GradientTarget target) {
  const Tensor g = input_gradient(clf.graph, x, clf.task_index(task), GradientMode::Guided, node_for(clf, target));
  return make_map(reduce_channels(g), Method::Guided, task);
}

Tensor integrated_gradients(const Classifier& clf, const Tensor& x, std::string_view task, int steps,
                            GradientTarget target) {
  if (steps < 1) throw std::invalid_argument("integrated gradients needs at least one step");
  const Index t = clf.task_index(task);
  Tensor sum(x.shape());
  for (int j = 0; j < steps; ++j) {
    const double alpha = (j + 0.5) / steps;
    Tensor point(x.shape(), alpha * x.vec());
    sum.vec() += input_gradient(clf.graph, point, t, GradientMode::Standard, node_for(clf, target)).vec();
  }
  Tensor out(x.shape());
  out.vec() = x.vec().cwiseProduct(sum.vec()) / static_cast<double>(steps);
  return out;
}

AttributionMap attr_integrated(const Classifier& clf, const Tensor& x, std::string_view task, int steps,
                               GradientTarget target) {
  return make_map(reduce_channels(integrated_gradients(clf, x, task, steps, target)), Method::Integrated, task);
}

AttributionMap attr_latentshift(const LambdaSweep& sweep, Method variant) {
  if (!is_latent_shift(variant)) throw std::invalid_argument("not a latent-shift variant");
  if (sweep.frames.size() < 2) throw std::invalid_argument("sweep has a single frame; nothing varies to attribute");
  if (sweep.frames.size() != sweep.lambdas.size()) throw std::invalid_argument("sweep frames and lambdas differ in length");
  const std::size_t zero = sweep.zero_index();
  const Tensor& x0 = sweep.frames[zero];
  auto diff = [](const Tensor& a, const Tensor& b) {
    Tensor d(a.shape(), a.vec() - b.vec());
    return reduce_channels(d);
  };
  Map2D out = Map2D::Zero(x0.dim(1), x0.dim(2));
  switch (variant) {
    case Method::LatentShiftMax:
      for (const auto& f : sweep.frames) out = out.max(diff(f, x0));
      break;
    case Method::LatentShiftMean: {
      for (std::size_t i = 0; i < sweep.frames.size(); ++i)
        if (i != zero) out += diff(sweep.frames[i], x0);
      out /= static_cast<double>(sweep.frames.size() - 1);
      break;
    }
    case Method::LatentShiftMinMax: {
      const auto [lo, hi] = std::minmax_element(sweep.lambdas.begin(), sweep.lambdas.end());
      out = diff(sweep.frames[static_cast<std::size_t>(lo - sweep.lambdas.begin())],
                 sweep.frames[static_cast<std::size_t>(hi - sweep.lambdas.begin())]);
      break;
    }
    case Method::LatentShiftSliding:
      for (std::size_t i = 0; i + 1 < sweep.frames.size(); ++i) out += diff(sweep.frames[i + 1], sweep.frames[i]);
      out /= static_cast<double>(sweep.frames.size() - 1);
      break;
    default:
      break;
  }
  return make_map(std::move(out), variant, sweep.task);
}

Mask binarize_topk(const Map2D& values, Index k) {
  const Index n = values.size();
  if (k < 1 || k > n) throw std::out_of_range("k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const double* v = values.data();
  std::stable_sort(order.begin(), order.end(), [v](Index a, Index b) { return v[a] > v[b]; });
  Mask m = Mask::Zero(values.rows(), values.cols());
  for (Index i = 0; i < k; ++i) m.data()[order[static_cast<std::size_t>(i)]] = 1;
  return m;
}

Map2D gaussian_smooth(const Map2D& values, double sigma) {
  if (!(sigma > 0)) return values;
  const Index radius = static_cast<Index>(std::ceil(3 * sigma));
  Eigen::ArrayXd kernel(2 * radius + 1);
  for (Index i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  kernel /= kernel.sum();
  const Index h = values.rows(), w = values.cols();
  Map2D tmp(h, w), out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * values(y, std::clamp<Index>(x + k, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(std::clamp<Index>(y + k, 0, h - 1), x);
      out(y, x) = acc;
    }
  return out;
}

AttributionMap explain(Method method, const Classifier& clf, const Autoencoder* ae, const Tensor& x,
                       std::string_view task, const ExplainOptions& options, LambdaSweep* sweep_out) {
  AttributionMap map;
  switch (method) {
    case Method::Grad:
      map = attr_grad(clf, x, task, options.target);
      break;
    case Method::Guided:
      map = attr_guided(clf, x, task, options.target);
      break;
    case Method::Integrated:
      map = attr_integrated(clf, x, task, options.ig_steps, options.target);
      break;
    default: {
      if (!ae) throw std::invalid_argument(std::string(to_string(method)) + " requires an autoencoder");
      SweepOptions so = options.sweep;
      so.target = options.target;
      LambdaSweep s = sweep(*ae, clf, x, task, so);
      map = attr_latentshift(s, method);
      if (sweep_out) *sweep_out = std::move(s);
    }
  }
  if (options.smooth_sigma > 0) map.values = gaussian_smooth(map.values, options.smooth_sigma);
  return map;
}

}  // namespace latentshift
