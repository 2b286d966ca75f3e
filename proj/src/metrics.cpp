#include "latentshift/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace latentshift {

double iou(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("iou: mask shapes differ");
  const auto in_a = a != 0, in_b = b != 0;
  const Index uni = (in_a || in_b).count();
  if (uni == 0) throw std::invalid_argument("iou: both masks empty (0/0)");
  return static_cast<double>((in_a && in_b).count()) / static_cast<double>(uni);
}

double iou_score(const Map2D& map, const Mask& mask) {
  if (map.rows() != mask.rows() || map.cols() != mask.cols()) throw std::invalid_argument("iou_score: shapes differ");
  const Index k = (mask != 0).count();
  if (k == 0) throw std::invalid_argument("iou_score: empty mask");
  return iou(binarize_topk(map, k), mask);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: need equal lengths >= 2");
  const Eigen::Map<const Eigen::ArrayXd> x(a.data(), static_cast<Index>(a.size()));
  const Eigen::Map<const Eigen::ArrayXd> y(b.data(), static_cast<Index>(b.size()));
  const Eigen::ArrayXd dx = x - x.mean(), dy = y - y.mean();
  const double sxx = dx.square().sum(), syy = dy.square().sum();
  if (sxx == 0 || syy == 0) throw std::invalid_argument("correlation undefined for constant input");
  return std::clamp((dx * dy).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need equal lengths >= 2");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  return pearson(ra, rb);
}

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
    pos += l == 1;
  }
  if (pos == 0 || pos == labels.size()) throw std::invalid_argument("both classes must be present");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels);
  const auto ranks = average_ranks(scores);
  double rank_sum = 0, pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) {
      rank_sum += ranks[i];
      pos += 1;
    }
  const double neg = static_cast<double>(labels.size()) - pos;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

double operating_point(std::span<const double> scores, std::span<const int> labels, OperatingRule rule) {
  check_binary(scores, labels);
  std::vector<double> distinct(scores.begin(), scores.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) return distinct.front();
  double pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg) += 1;
  double best_t = 0, best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
    const double t = (distinct[i] + distinct[i + 1]) / 2;
    double tp = 0, tn = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1 && scores[j] > t) tp += 1;
      if (labels[j] == 0 && scores[j] <= t) tn += 1;
    }
    const double sens = tp / pos, spec = tn / neg;
    const double value = rule == OperatingRule::Youden
                             ? sens + spec - 1
                             : -std::hypot(1 - sens, 1 - spec);
    if (value >= best) {  // ascending scan: ties move to the larger threshold
      best = value;
      best_t = t;
    }
  }
  return best_t;
}

double calibrate(double score, double t) {
  if (!(t > 0 && t < 1)) throw std::invalid_argument("calibration threshold must lie in (0, 1)");
  if (score == t) return 0.5;
  if (score < t) return 0.5 * score / t;
  return 0.5 + 0.5 * (score - t) / (1 - t);
}

namespace {

struct SignedRanks {
  std::vector<long> doubled_ranks;  // 2 × average rank, always an integer
  std::vector<int> positive;
  std::vector<std::size_t> tie_sizes;
};

SignedRanks signed_ranks(std::span<const double> deltas) {
  std::vector<double> mags;
  SignedRanks s;
  for (double d : deltas) {
    if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon: non-finite delta");
    if (d == 0) continue;
    mags.push_back(std::abs(d));
    s.positive.push_back(d > 0);
  }
  if (mags.empty()) throw std::invalid_argument("wilcoxon: all deltas are zero");
  for (double r : average_ranks(mags)) s.doubled_ranks.push_back(std::lround(2 * r));
  std::vector<double> sorted = mags;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    s.tie_sizes.push_back(j - i);
    i = j;
  }
  return s;
}

}  // namespace

WilcoxonResult wilcoxon_normal_approximation(std::span<const double> deltas) {
  const SignedRanks s = signed_ranks(deltas);
  const double n = static_cast<double>(s.positive.size());
  double w = 0;
  for (std::size_t i = 0; i < s.positive.size(); ++i)
    if (s.positive[i]) w += s.doubled_ranks[i] / 2.0;
  double ties = 0;
  for (auto t : s.tie_sizes) ties += std::pow(static_cast<double>(t), 3) - static_cast<double>(t);
  const double mean = n * (n + 1) / 4;
  const double var = n * (n + 1) * (2 * n + 1) / 24 - ties / 48;
  WilcoxonResult r;
  r.statistic = w;
  r.n = static_cast<Index>(n);
  if (var <= 0) {
    r.p_value = 1;
    return r;
  }
  const double dev = std::max(0.0, std::abs(w - mean) - 0.5);
  r.p_value = std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)));
  return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> deltas) {
  const SignedRanks s = signed_ranks(deltas);
  const std::size_t n = s.positive.size();
  if (n > 20) return wilcoxon_normal_approximation(deltas);
  // Null distribution of 2·W+ over all 2^n sign assignments, by counting.
  long total = 0;
  for (long r : s.doubled_ranks) total += r;
  std::vector<double> counts(static_cast<std::size_t>(total + 1), 0.0);
  counts[0] = 1;
  for (long r : s.doubled_ranks)
    for (long v = total; v >= r; --v) counts[static_cast<std::size_t>(v)] += counts[static_cast<std::size_t>(v - r)];
  long observed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (s.positive[i]) observed += s.doubled_ranks[i];
  // Compare |2W - total| to keep everything in integers.
  const long dev = std::abs(2 * observed - total);
  double extreme = 0, all = 0;
  for (long v = 0; v <= total; ++v) {
    all += counts[static_cast<std::size_t>(v)];
    if (std::abs(2 * v - total) >= dev) extreme += counts[static_cast<std::size_t>(v)];
  }
  WilcoxonResult r;
  r.statistic = observed / 2.0;
  r.p_value = std::min(1.0, extreme / all);
  r.n = static_cast<Index>(n);
  r.exact = true;
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  m.n = static_cast<Index>(values.size());
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double ss = 0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

}  // namespace latentshift
