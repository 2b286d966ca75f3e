#pragma once

#include "latentshift/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace latentshift {

enum class Group { A, B };
std::string_view to_string(Group g);
Group group_from_string(std::string_view s);

inline const std::string kConfidenceQuestion = "How confident are you in the model's prediction? (1-5)";
inline const std::string kFeatureQuestion = "Is the model looking at the correct feature? (1-5)";

class LikertError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws LikertError unless 1 <= v <= 5.
void check_likert(int v, std::string_view field);

struct StudyCase {
  std::string case_id;  // sample/finding/model
  std::string sample_id;
  std::string finding;
  std::string model_id;
  Group group = Group::A;
  double prediction = 0;  // calibrated, so 0.5 is the operating point
  int ground_truth = 0;

  bool predicted_positive() const { return prediction >= 0.5; }
  bool true_positive() const { return predicted_positive() && ground_truth == 1; }
  bool false_positive() const { return predicted_positive() && ground_truth == 0; }
};

std::string make_case_id(std::string_view sample_id, std::string_view finding, std::string_view model_id);

/// Picks n_cases / 2 true positives and n_cases / 2 false positives, splits
/// each stratum evenly between groups, and shuffles the result, all under
/// `seed`. `arm` = 1 swaps every group so that a second reader sees each case
/// under the other condition. Throws std::runtime_error if a stratum is short.
std::vector<StudyCase> stratified_cases(const std::vector<StudyCase>& candidates, int n_cases, std::uint64_t seed,
                                        int arm = 0);

struct StudyRecord {
  StudyCase study_case;
  std::string reader_id;
  std::string session_id;
  int confidence = 0;
  int correct_feature = 0;
  std::string timestamp;
  std::optional<double> iou;
};

nlohmann::json to_json(const StudyCase& c);
StudyCase case_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StudyRecord& r);
StudyRecord record_from_json(const nlohmann::json& j);

struct DeltaSummary {
  MeanStd delta;
  std::optional<WilcoxonResult> test;
  std::string note;  // "no effect measurable" when every delta is zero
};

struct QuestionSummary {
  DeltaSummary true_positive, false_positive, all;
};

struct Regression {
  double slope = 0;
  double intercept = 0;
  double pearson_r = 0;
  Index n = 0;
};

struct StudyReport {
  Index paired_cases = 0;
  std::vector<std::string> unpaired;  // case ids lacking one of the groups
  QuestionSummary confidence, correct_feature;
  std::map<std::string, QuestionSummary> per_finding_confidence, per_finding_correct_feature;
  std::optional<Regression> correct_feature_vs_iou;

  nlohmann::json to_json() const;
};

/// Per case, delta = mean(group B responses) - mean(group A responses).
StudyReport study_report(const std::vector<StudyRecord>& records);

}  // namespace latentshift
