#include "latentshift/study.hpp"

#include "latentshift/rng.hpp"

#include <algorithm>
#include <stdexcept>

namespace latentshift {

using json = nlohmann::json;

std::string_view to_string(Group g) { return g == Group::A ? "A" : "B"; }

Group group_from_string(std::string_view s) {
  if (s == "A") return Group::A;
  if (s == "B") return Group::B;
  throw std::invalid_argument("group must be A or B, got '" + std::string(s) + "'");
}

void check_likert(int v, std::string_view field) {
  if (v < 1 || v > 5) throw LikertError(std::string(field) + " must be an integer 1-5, got " + std::to_string(v));
}

std::string make_case_id(std::string_view sample_id, std::string_view finding, std::string_view model_id) {
  return std::string(sample_id) + "/" + std::string(finding) + "/" + std::string(model_id);
}

std::vector<StudyCase> stratified_cases(const std::vector<StudyCase>& candidates, int n_cases, std::uint64_t seed,
                                        int arm) {
  if (n_cases < 2 || n_cases % 2 != 0) throw std::invalid_argument("case count must be even and at least 2");
  std::vector<StudyCase> tp, fp;
  for (const auto& c : candidates) {
    if (c.true_positive()) tp.push_back(c);
    if (c.false_positive()) fp.push_back(c);
  }
  const std::size_t half = static_cast<std::size_t>(n_cases / 2);
  if (tp.size() < half || fp.size() < half) {
    throw std::runtime_error("need " + std::to_string(half) + " true and false positives, have " +
                             std::to_string(tp.size()) + " and " + std::to_string(fp.size()));
  }
  Rng tp_rng(derive_seed(seed, "tp")), fp_rng(derive_seed(seed, "fp"));
  std::shuffle(tp.begin(), tp.end(), tp_rng);
  std::shuffle(fp.begin(), fp.end(), fp_rng);
  std::vector<StudyCase> out;
  // An odd stratum gives its extra case to A for TPs and to B for FPs.
  const std::size_t tp_a = (half + 1) / 2, fp_a = half / 2;
  for (std::size_t i = 0; i < half; ++i) {
    tp[i].group = (i < tp_a) != (arm == 1) ? Group::A : Group::B;
    fp[i].group = (i < fp_a) != (arm == 1) ? Group::A : Group::B;
    out.push_back(tp[i]);
    out.push_back(fp[i]);
  }
  Rng order(derive_seed(seed, "order"));
  std::shuffle(out.begin(), out.end(), order);
  return out;
}

json to_json(const StudyCase& c) {
  return {{"case_id", c.case_id},   {"sample_id", c.sample_id},   {"finding", c.finding},
          {"model_id", c.model_id}, {"group", to_string(c.group)}, {"prediction", c.prediction},
          {"ground_truth", c.ground_truth}};
}

StudyCase case_from_json(const json& j) {
  StudyCase c;
  c.case_id = j.at("case_id").get<std::string>();
  c.sample_id = j.at("sample_id").get<std::string>();
  c.finding = j.at("finding").get<std::string>();
  c.model_id = j.at("model_id").get<std::string>();
  c.group = group_from_string(j.at("group").get<std::string>());
  c.prediction = j.at("prediction").get<double>();
  c.ground_truth = j.at("ground_truth").get<int>();
  return c;
}

json to_json(const StudyRecord& r) {
  json j = to_json(r.study_case);
  j["reader_id"] = r.reader_id;
  j["session_id"] = r.session_id;
  j["response_confidence"] = r.confidence;
  j["response_correct_feature"] = r.correct_feature;
  j["timestamp"] = r.timestamp;
  if (r.iou) j["iou"] = *r.iou;
  return j;
}

StudyRecord record_from_json(const json& j) {
  StudyRecord r;
  r.study_case = case_from_json(j);
  r.reader_id = j.value("reader_id", "");
  r.session_id = j.value("session_id", "");
  r.confidence = j.at("response_confidence").get<int>();
  r.correct_feature = j.at("response_correct_feature").get<int>();
  check_likert(r.confidence, "response_confidence");
  check_likert(r.correct_feature, "response_correct_feature");
  r.timestamp = j.value("timestamp", "");
  if (j.contains("iou") && !j["iou"].is_null()) r.iou = j["iou"].get<double>();
  return r;
}

namespace {

struct CaseDelta {
  std::string finding;
  bool tp = false, fp = false;
  double confidence = 0, correct_feature = 0;
};

DeltaSummary summarize(const std::vector<double>& deltas) {
  DeltaSummary s;
  s.delta = mean_std(deltas);
  if (deltas.empty()) {
    s.note = "no cases";
  } else if (std::all_of(deltas.begin(), deltas.end(), [](double d) { return d == 0; })) {
    s.note = "no effect measurable";
  } else {
    s.test = wilcoxon_signed_rank(deltas);
  }
  return s;
}

QuestionSummary summarize_question(const std::vector<CaseDelta>& cases, double CaseDelta::*field) {
  std::vector<double> tp, fp, all;
  for (const auto& c : cases) {
    all.push_back(c.*field);
    if (c.tp) tp.push_back(c.*field);
    if (c.fp) fp.push_back(c.*field);
  }
  return {summarize(tp), summarize(fp), summarize(all)};
}

json summary_json(const DeltaSummary& s) {
  json j = {{"mean", s.delta.mean}, {"n", s.delta.n}};
  j["std"] = s.delta.std ? json(*s.delta.std) : json(nullptr);
  if (s.test) {
    j["wilcoxon_statistic"] = s.test->statistic;
    j["p_value"] = s.test->p_value;
    j["exact"] = s.test->exact;
  } else {
    j["p_value"] = nullptr;
  }
  if (!s.note.empty()) j["note"] = s.note;
  return j;
}

json question_json(const QuestionSummary& q) {
  return {{"true_positive", summary_json(q.true_positive)},
          {"false_positive", summary_json(q.false_positive)},
          {"all", summary_json(q.all)}};
}

}  // namespace

StudyReport study_report(const std::vector<StudyRecord>& records) {
  struct Accum {
    const StudyCase* c = nullptr;
    double conf[2] = {0, 0}, feat[2] = {0, 0};
    int n[2] = {0, 0};
  };
  std::map<std::string, Accum> by_case;
  for (const auto& r : records) {
    auto& a = by_case[r.study_case.case_id];
    if (!a.c) a.c = &r.study_case;
    const int g = r.study_case.group == Group::A ? 0 : 1;
    a.conf[g] += r.confidence;
    a.feat[g] += r.correct_feature;
    ++a.n[g];
  }
  StudyReport report;
  std::vector<CaseDelta> deltas;
  for (const auto& [id, a] : by_case) {
    if (a.n[0] == 0 || a.n[1] == 0) {
      report.unpaired.push_back(id);
      continue;
    }
    CaseDelta d;
    d.finding = a.c->finding;
    d.tp = a.c->true_positive();
    d.fp = a.c->false_positive();
    d.confidence = a.conf[1] / a.n[1] - a.conf[0] / a.n[0];
    d.correct_feature = a.feat[1] / a.n[1] - a.feat[0] / a.n[0];
    deltas.push_back(d);
  }
  report.paired_cases = static_cast<Index>(deltas.size());
  report.confidence = summarize_question(deltas, &CaseDelta::confidence);
  report.correct_feature = summarize_question(deltas, &CaseDelta::correct_feature);
  std::map<std::string, std::vector<CaseDelta>> per;
  for (const auto& d : deltas) per[d.finding].push_back(d);
  for (const auto& [f, ds] : per) {
    report.per_finding_confidence[f] = summarize_question(ds, &CaseDelta::confidence);
    report.per_finding_correct_feature[f] = summarize_question(ds, &CaseDelta::correct_feature);
  }

  std::vector<double> x, y;
  for (const auto& r : records)
    if (r.iou) {
      x.push_back(*r.iou);
      y.push_back(r.correct_feature);
    }
  if (x.size() >= 2) {
    const MeanStd mx = mean_std(x), my = mean_std(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx.mean) * (y[i] - my.mean);
      sxx += (x[i] - mx.mean) * (x[i] - mx.mean);
      syy += (y[i] - my.mean) * (y[i] - my.mean);
    }
    if (sxx > 0 && syy > 0) {
      Regression reg;
      reg.slope = sxy / sxx;
      reg.intercept = my.mean - reg.slope * mx.mean;
      reg.pearson_r = sxy / std::sqrt(sxx * syy);
      reg.n = static_cast<Index>(x.size());
      report.correct_feature_vs_iou = reg;
    }
  }
  return report;
}

json StudyReport::to_json() const {
  json j;
  j["paired_cases"] = paired_cases;
  j["unpaired"] = unpaired;
  j["questions"] = {{"confidence", {{"text", kConfidenceQuestion}, {"deltas", question_json(confidence)}}},
                    {"correct_feature", {{"text", kFeatureQuestion}, {"deltas", question_json(correct_feature)}}}};
  json pf = json::object();
  for (const auto& [f, q] : per_finding_confidence)
    pf[f] = {{"confidence", question_json(q)}, {"correct_feature", question_json(per_finding_correct_feature.at(f))}};
  j["per_finding"] = pf;
  if (correct_feature_vs_iou) {
    j["correct_feature_vs_iou"] = {{"slope", correct_feature_vs_iou->slope},
                                   {"intercept", correct_feature_vs_iou->intercept},
                                   {"pearson_r", correct_feature_vs_iou->pearson_r},
                                   {"n", correct_feature_vs_iou->n}};
  } else {
    j["correct_feature_vs_iou"] = nullptr;
  }
  return j;
}

}  // namespace latentshift
