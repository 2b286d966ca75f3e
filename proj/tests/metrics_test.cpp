#include "latentshift/metrics.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace latentshift;

namespace {

Mask mask_from(Index rows, Index cols, std::initializer_list<std::pair<Index, Index>> on) {
  Mask m = Mask::Zero(rows, cols);
  for (auto [r, c] : on) m(r, c) = 1;
  return m;
}

std::vector<double> draw(Rng& rng, std::size_t n, int levels) {
  // Few levels force ties; levels = 0 draws continuous values.
  std::uniform_int_distribution<int> lv(0, std::max(levels - 1, 0));
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = levels > 0 ? lv(rng) : g(rng);
  return v;
}

}  // namespace

TEST(Iou, Examples) {
  const Mask a = mask_from(2, 2, {{0, 0}, {0, 1}}), b = mask_from(2, 2, {{0, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, mask_from(2, 2, {{1, 0}, {1, 1}})), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_EQ(iou(a, b), iou(b, a));
  EXPECT_THROW(iou(Mask::Zero(2, 2), Mask::Zero(2, 2)), std::invalid_argument);
  EXPECT_THROW(iou(a, Mask::Zero(3, 2)), std::invalid_argument);
}

TEST(IouScore, Examples) {
  Map2D m = Map2D::Zero(3, 3);
  const Mask mask = mask_from(3, 3, {{1, 1}, {2, 0}});
  m(1, 1) = 2;
  m(2, 0) = 1;
  EXPECT_DOUBLE_EQ(iou_score(m, mask), 1.0);
  EXPECT_THROW(iou_score(m, Mask::Zero(3, 3)), std::invalid_argument);
}

TEST(IouScore, UniformMapFollowsRasterRule) {
  // The top-k of a uniform map is the first k raster pixels; enumerate every
  // mask position and compare against the tie-break expectation k / (2n - k).
  const Index n = 6, k = 2;
  const Map2D flat = Map2D::Constant(2, 3, 0.4);
  double total = 0;
  int count = 0;
  for (Index a = 0; a < n; ++a)
    for (Index b = a + 1; b < n; ++b) {
      Mask m = Mask::Zero(2, 3);
      m.data()[a] = m.data()[b] = 1;
      const double expected = static_cast<double>((a < k) + (b < k)) / static_cast<double>(2 * k - (a < k) - (b < k));
      EXPECT_DOUBLE_EQ(iou_score(flat, m), expected);
      total += expected;
      ++count;
    }
  EXPECT_GT(total / count, 0.0);
}

TEST(IouScore, MatchesSortOracle) {
  Rng rng(1);
  std::bernoulli_distribution on(0.3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto vals = draw(rng, 64, trial % 2 ? 6 : 0);
    Map2D m(8, 8);
    Mask mask(8, 8);
    std::vector<int> flat_mask(64);
    for (Index i = 0; i < 64; ++i) {
      m.data()[i] = vals[static_cast<std::size_t>(i)];
      mask.data()[i] = on(rng);
      flat_mask[static_cast<std::size_t>(i)] = mask.data()[i];
    }
    if ((mask != 0).count() == 0) continue;
    EXPECT_EQ(iou_score(m, mask), oracle::iou_topk(vals, flat_mask));
  }
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 1, 0}), 1.0);
  EXPECT_EQ(auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{1, 0, 1, 0}), 0.5);
  EXPECT_EQ(auc(std::vector<double>{0.2, 0.7, 0.5, 0.9}, std::vector<int>{0, 1, 0, 1}), 1.0);
  EXPECT_THROW(auc(std::vector<double>{0.2, 0.7}, std::vector<int>{1, 1}), std::invalid_argument);
  EXPECT_THROW(auc(std::vector<double>{0.2, 0.7}, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST(Auc, MatchesPairOracleAndMonotoneInvariance) {
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> len(2, 30);
  std::bernoulli_distribution coin(0.5);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = len(rng);
    const auto s = draw(rng, n, trial % 3 == 0 ? 4 : 0);
    std::vector<int> l(n);
    for (auto& x : l) x = coin(rng);
    if (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0) continue;
    EXPECT_EQ(auc(s, l), oracle::auc(s, l));
    std::vector<double> t(n);
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::atan(v) * 7 - 3; });
    EXPECT_EQ(auc(t, l), auc(s, l));
    ++checked;
  }
  EXPECT_GE(checked, 200);
}

TEST(OperatingPoint, SeparatedGapMidpoint) {
  EXPECT_DOUBLE_EQ(operating_point(std::vector<double>{0.1, 0.2, 0.6, 0.9}, std::vector<int>{0, 0, 1, 1}), 0.4);
  EXPECT_THROW(operating_point(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), std::invalid_argument);
}

TEST(OperatingPoint, MatchesExhaustiveScan) {
  Rng rng(3);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = draw(rng, 6, trial % 2 ? 4 : 0);
    std::vector<int> l(6);
    for (auto& x : l) x = coin(rng);
    if (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0) continue;
    // Brute force: every midpoint candidate, J evaluated directly, largest best threshold kept.
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    double best_j = -2, best_t = std::nan("");
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      if (sorted[i] == sorted[i + 1]) continue;
      const double t = (sorted[i] + sorted[i + 1]) / 2;
      double tp = 0, fn = 0, tn = 0, fp = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        const bool pred = s[j] > t;
        if (l[j]) (pred ? tp : fn) += 1;
        else (pred ? fp : tn) += 1;
      }
      const double jj = tp / (tp + fn) + tn / (tn + fp) - 1;
      if (jj >= best_j) {
        best_j = jj;
        best_t = t;
      }
    }
    if (std::isnan(best_t)) continue;
    EXPECT_EQ(operating_point(s, l), best_t);
  }
}

TEST(Calibrate, Examples) {
  EXPECT_EQ(calibrate(0.3, 0.3), 0.5);
  EXPECT_EQ(calibrate(0.0, 0.3), 0.0);
  EXPECT_EQ(calibrate(1.0, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(calibrate(0.6, 0.2), 0.75);
  EXPECT_THROW(calibrate(0.5, 0.0), std::invalid_argument);
  EXPECT_THROW(calibrate(0.5, 1.0), std::invalid_argument);
  double prev = -1;
  for (int i = 0; i <= 1000; ++i) {
    const double c = calibrate(i / 1000.0, 0.37);
    EXPECT_GT(c, prev);
    prev = c;
  }
}

TEST(Spearman, Examples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_DOUBLE_EQ(spearman(a, a), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, std::vector<double>{3, 2, 1}), -1.0);
  const std::vector<double> tied{1, 1, 2};
  EXPECT_EQ(average_ranks(tied), oracle::average_ranks(tied));
  EXPECT_NEAR(spearman(tied, a), oracle::spearman(tied, a), 1e-12);
  EXPECT_THROW(spearman(std::vector<double>{2, 2, 2}, a), std::invalid_argument);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Spearman, MatchesRankOracle) {
  Rng rng(4);
  std::uniform_int_distribution<std::size_t> len(2, 25);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = len(rng);
    const auto a = draw(rng, n, trial % 2 ? 3 : 0), b = draw(rng, n, trial % 3 ? 0 : 4);
    EXPECT_EQ(average_ranks(a), oracle::average_ranks(a));
    if (std::adjacent_find(a.begin(), a.end(), std::not_equal_to<>()) == a.end() ||
        std::adjacent_find(b.begin(), b.end(), std::not_equal_to<>()) == b.end())
      continue;
    const double r = spearman(a, b);
    EXPECT_NEAR(r, oracle::spearman(a, b), 1e-12);
    std::vector<double> t(n);
    std::transform(a.begin(), a.end(), t.begin(), [](double v) { return std::exp(v); });
    EXPECT_NEAR(spearman(t, b), r, 1e-12);
    ++checked;
  }
  EXPECT_GE(checked, 200);
}

TEST(Wilcoxon, Examples) {
  EXPECT_THROW(wilcoxon_signed_rank(std::vector<double>{0, 0, 0}), std::invalid_argument);
  const auto r = wilcoxon_signed_rank(std::vector<double>{1, 2, 3});
  EXPECT_DOUBLE_EQ(r.p_value, 0.25);
  EXPECT_EQ(r.statistic, 6.0);
  EXPECT_TRUE(r.exact);
  EXPECT_DOUBLE_EQ(wilcoxon_signed_rank(std::vector<double>{-1, 1}).p_value, 1.0);
  EXPECT_EQ(wilcoxon_signed_rank(std::vector<double>{0, 1, 2, 3, 0}).n, 3);
}

TEST(Wilcoxon, MatchesSignEnumeration) {
  Rng rng(5);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  for (int trial = 0; trial < 300; ++trial) {
    auto d = draw(rng, len(rng), trial % 2 ? 0 : 5);
    for (auto& x : d) x -= trial % 2 ? -0.2 : 2;  // centred integers keep ties and zeros
    if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0; })) continue;
    EXPECT_EQ(wilcoxon_signed_rank(d).p_value, oracle::wilcoxon_exact(d)) << trial;
  }
}

TEST(Wilcoxon, NormalApproximationCloseAtTwenty) {
  Rng rng(6);
  std::normal_distribution<double> g(0.3, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d(20);
    for (auto& x : d) x = g(rng);
    const double exact = wilcoxon_signed_rank(d).p_value;
    const double approx = wilcoxon_normal_approximation(d).p_value;
    EXPECT_LT(std::abs(exact - approx), 0.05);
  }
  std::vector<double> big(40, 1.0);
  const auto r = wilcoxon_signed_rank(big);
  EXPECT_FALSE(r.exact);
  EXPECT_LT(r.p_value, 1e-6);
}

TEST(MeanStd, StdPresentFromTwo) {
  EXPECT_FALSE(mean_std(std::vector<double>{3}).std.has_value());
  const auto m = mean_std(std::vector<double>{1, 3});
  EXPECT_EQ(m.mean, 2);
  EXPECT_DOUBLE_EQ(*m.std, std::sqrt(2.0));
}
