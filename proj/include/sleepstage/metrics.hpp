#pragma once

// Evaluation: confusion matrices (rows = ground truth), class-wise rates with
// explicit undefined markers, Cohen's kappa, macro F1, and the
// transition/non-transition stratified analysis, plus report serialization.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sleepstage/bundle.hpp"

namespace sleepstage {

struct ConfusionMatrix {
  int n_classes = kNumStages;
  std::vector<std::int64_t> counts;  // row-major; rows = ground truth

  explicit ConfusionMatrix(int n = kNumStages);
  std::int64_t& at(int truth, int pred);
  std::int64_t at(int truth, int pred) const;
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;
  void add(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const std::vector<Stage>& truth,
                          const std::vector<Stage>& pred);

struct ClassRates {
  std::optional<double> sensitivity;  // diag / row sum (truth support)
  std::optional<double> selectivity;  // diag / column sum (predicted support)
  std::optional<double> specificity;  // TN / (TN + FP)
  double f1 = 0.0;                    // 0 when degenerate, flagged below
  bool f1_degenerate = false;         // empty truth row or never predicted
};

std::vector<ClassRates> class_rates(const ConfusionMatrix& cm);
std::optional<double> cohen_kappa(const ConfusionMatrix& cm);

struct MetricSummary {
  ConfusionMatrix cm;
  std::int64_t epochs = 0;
  std::optional<double> overall_accuracy;
  std::optional<double> kappa;
  double macro_f1 = 0.0;
  std::optional<double> mean_sensitivity;
  std::optional<double> mean_specificity;
  std::vector<ClassRates> per_class;
  std::vector<int> degenerate_f1_classes;
};

MetricSummary summarize(const ConfusionMatrix& cm);

struct EvalReport {
  MetricSummary overall;
  // Present when the evaluation had recording structure to stratify on.
  std::optional<MetricSummary> non_transition;
  std::optional<MetricSummary> transition;
};

EvalReport evaluate_labels(const std::vector<Stage>& truth,
                           const std::vector<Stage>& pred);

// Per-recording stratified evaluation. An epoch is non-transition when both
// its neighbors exist (inside the recording) and carry the same label as the
// epoch itself; recording edges always count as transition.
std::vector<bool> non_transition_mask(const std::vector<Stage>& labels);
EvalReport evaluate_recordings(const std::vector<std::vector<Stage>>& truth,
                               const std::vector<std::vector<Stage>>& pred);

std::string report_text(const EvalReport& report);
std::string report_csv(const EvalReport& report);

}  // namespace sleepstage
