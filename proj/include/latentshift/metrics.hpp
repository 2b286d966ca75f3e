#pragma once

#include "latentshift/attribution.hpp"
#include "latentshift/image.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace latentshift {

/// |a ∩ b| / |a ∪ b|; both-empty is rejected as undefined.
double iou(const Mask& a, const Mask& b);

/// iou(binarize_topk(map, |mask|), mask).
double iou_score(const Map2D& map, const Mask& mask);

/// Average ranks (1-based); ties receive the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> a, std::span<const double> b);

/// Pearson correlation of average ranks. Rejects constant inputs.
double spearman(std::span<const double> a, std::span<const double> b);

/// Mann-Whitney U / (n+ n-): P(score+ > score-) + 1/2 P(tie).
double auc(std::span<const double> scores, std::span<const int> labels);

enum class OperatingRule { Youden, ClosestToCorner };

/// Threshold t (positive iff score > t) chosen among midpoints between
/// consecutive distinct scores; Youden's J ties go to the larger threshold.
double operating_point(std::span<const double> scores, std::span<const int> labels,
                       OperatingRule rule = OperatingRule::Youden);

/// Piecewise-linear map sending [0, t] onto [0, 0.5] and [t, 1] onto [0.5, 1].
double calibrate(double score, double threshold);

struct WilcoxonResult {
  double statistic = 0;  // W+, sum of ranks of positive deltas
  double p_value = 1;
  Index n = 0;           // nonzero deltas
  bool exact = false;
};

/// Two-sided signed-rank test. Zeros are dropped; exact null distribution for
/// n <= 20, tie-corrected normal approximation with continuity correction above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> deltas);
WilcoxonResult wilcoxon_normal_approximation(std::span<const double> deltas);

struct MeanStd {
  double mean = 0;
  std::optional<double> std;  // sample std, present iff n >= 2
  Index n = 0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace latentshift
