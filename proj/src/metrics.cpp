#include "sleepstage/metrics.hpp"

#include <cmath>
#include <sstream>

#include "sleepstage/common.hpp"

namespace sleepstage {

ConfusionMatrix::ConfusionMatrix(int n) : n_classes(n) {
  check(n >= 2, ErrorKind::validation, "confusion matrix: need >= 2 classes");
  counts.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0);
}

std::int64_t& ConfusionMatrix::at(int truth, int pred) {
  check(truth >= 0 && truth < n_classes && pred >= 0 && pred < n_classes,
        ErrorKind::validation, "confusion matrix: index out of range");
  return counts[static_cast<std::size_t>(truth * n_classes + pred)];
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
  return const_cast<ConfusionMatrix*>(this)->at(truth, pred);
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::int64_t c : counts) s += c;
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int c = 0; c < n_classes; ++c) s += at(c, c);
  return s;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int t = 0; t < n_classes; ++t) s += at(t, pred);
  return s;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  check(other.n_classes == n_classes, ErrorKind::validation,
        "confusion matrix: cannot add different class counts");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(const std::vector<Stage>& truth,
                          const std::vector<Stage>& pred) {
  check(truth.size() == pred.size(), ErrorKind::validation,
        "confusion: truth and prediction lengths differ");
  ConfusionMatrix cm(kNumStages);
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++cm.at(static_cast<int>(truth[i]), static_cast<int>(pred[i]));
  return cm;
}

std::vector<ClassRates> class_rates(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  std::vector<ClassRates> rates(static_cast<std::size_t>(cm.n_classes));
  for (int c = 0; c < cm.n_classes; ++c) {
    ClassRates& r = rates[static_cast<std::size_t>(c)];
    const std::int64_t row = cm.row_sum(c), col = cm.col_sum(c), diag = cm.at(c, c);
    if (row > 0)
      r.sensitivity = static_cast<double>(diag) / static_cast<double>(row);
    if (col > 0)
      r.selectivity = static_cast<double>(diag) / static_cast<double>(col);
    // TN = total - row - col + diag; FP = col - diag; TN + FP = total - row.
    if (total - row > 0)
      r.specificity = static_cast<double>(total - row - col + diag) /
                      static_cast<double>(total - row);
    if (diag > 0) {
      const double prec = static_cast<double>(diag) / static_cast<double>(col);
      const double rec = static_cast<double>(diag) / static_cast<double>(row);
      r.f1 = 2.0 * prec * rec / (prec + rec);
    } else {
      r.f1 = 0.0;
      r.f1_degenerate = (row == 0) || (col == 0);
    }
  }
  return rates;
}

std::optional<double> cohen_kappa(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  check(total > 0, ErrorKind::validation, "kappa: empty confusion matrix");
  const double n = static_cast<double>(total);
  const double po = static_cast<double>(cm.trace()) / n;
  double pe = 0.0;
  for (int c = 0; c < cm.n_classes; ++c)
    pe += (static_cast<double>(cm.row_sum(c)) / n) *
          (static_cast<double>(cm.col_sum(c)) / n);
  if (std::fabs(1.0 - pe) <= 1e-15) return std::nullopt;  // chance term saturated
  return (po - pe) / (1.0 - pe);
}

MetricSummary summarize(const ConfusionMatrix& cm) {
  MetricSummary s{cm, cm.total(), {}, {}, 0.0, {}, {}, {}, {}};
  if (s.epochs == 0) return s;
  s.overall_accuracy = static_cast<double>(cm.trace()) / static_cast<double>(s.epochs);
  s.kappa = cohen_kappa(cm);
  s.per_class = class_rates(cm);

  double f1_sum = 0.0, sen_sum = 0.0, spe_sum = 0.0;
  int sen_n = 0, spe_n = 0;
  for (int c = 0; c < cm.n_classes; ++c) {
    const ClassRates& r = s.per_class[static_cast<std::size_t>(c)];
    f1_sum += r.f1;
    if (r.f1_degenerate) s.degenerate_f1_classes.push_back(c);
    if (r.sensitivity) {
      sen_sum += *r.sensitivity;
      ++sen_n;
    }
    if (r.specificity) {
      spe_sum += *r.specificity;
      ++spe_n;
    }
  }
  s.macro_f1 = f1_sum / static_cast<double>(cm.n_classes);
  if (sen_n > 0) s.mean_sensitivity = sen_sum / static_cast<double>(sen_n);
  if (spe_n > 0) s.mean_specificity = spe_sum / static_cast<double>(spe_n);
  return s;
}

EvalReport evaluate_labels(const std::vector<Stage>& truth,
                           const std::vector<Stage>& pred) {
  EvalReport report;
  report.overall = summarize(confusion(truth, pred));
  return report;
}

std::vector<bool> non_transition_mask(const std::vector<Stage>& labels) {
  std::vector<bool> mask(labels.size(), false);
  for (std::size_t i = 1; i + 1 < labels.size(); ++i)
    mask[i] = labels[i - 1] == labels[i] && labels[i + 1] == labels[i];
  return mask;
}

EvalReport evaluate_recordings(const std::vector<std::vector<Stage>>& truth,
                               const std::vector<std::vector<Stage>>& pred) {
  check(truth.size() == pred.size(), ErrorKind::validation,
        "evaluate: recording counts differ");
  check(!truth.empty(), ErrorKind::validation, "evaluate: no recordings");
  ConfusionMatrix all(kNumStages), stable(kNumStages), moving(kNumStages);
  for (std::size_t r = 0; r < truth.size(); ++r) {
    check(truth[r].size() == pred[r].size(), ErrorKind::validation,
          "evaluate: recording " + std::to_string(r) + " lengths differ");
    const std::vector<bool> mask = non_transition_mask(truth[r]);
    for (std::size_t i = 0; i < truth[r].size(); ++i) {
      const int t = static_cast<int>(truth[r][i]), p = static_cast<int>(pred[r][i]);
      ++all.at(t, p);
      ++(mask[i] ? stable : moving).at(t, p);
    }
  }
  EvalReport report;
  report.overall = summarize(all);
  report.non_transition = summarize(stable);
  report.transition = summarize(moving);
  return report;
}

namespace {

std::string rate_str(const std::optional<double>& r) {
  return r ? format_f64(*r, 6) : std::string("n/a");
}

void summary_text(std::ostringstream& out, const MetricSummary& s) {
  out << "epochs = " << s.epochs << "\n";
  out << "overall_accuracy = " << rate_str(s.overall_accuracy) << "\n";
  out << "kappa = " << rate_str(s.kappa) << "\n";
  out << "macro_f1 = " << format_f64(s.macro_f1, 6) << "\n";
  out << "mean_sensitivity = " << rate_str(s.mean_sensitivity) << "\n";
  out << "mean_specificity = " << rate_str(s.mean_specificity) << "\n";
  if (!s.degenerate_f1_classes.empty()) {
    out << "degenerate_f1_classes =";
    for (int c : s.degenerate_f1_classes) out << " " << stage_name(static_cast<Stage>(c));
    out << "\n";
  }
  out << "confusion (rows = ground truth):\n";
  out << "      ";
  for (int p = 0; p < s.cm.n_classes; ++p) out << "\t" << stage_name(static_cast<Stage>(p));
  out << "\n";
  for (int t = 0; t < s.cm.n_classes; ++t) {
    out << stage_name(static_cast<Stage>(t));
    for (int p = 0; p < s.cm.n_classes; ++p) out << "\t" << s.cm.at(t, p);
    out << "\n";
  }
  out << "class\tsensitivity\tselectivity\tspecificity\tf1\n";
  for (int c = 0; c < s.cm.n_classes; ++c) {
    const ClassRates& r = s.per_class.empty() ? ClassRates{}
                                              : s.per_class[static_cast<std::size_t>(c)];
    out << stage_name(static_cast<Stage>(c)) << "\t" << rate_str(r.sensitivity) << "\t"
        << rate_str(r.selectivity) << "\t" << rate_str(r.specificity) << "\t"
        << format_f64(r.f1, 6) << (r.f1_degenerate ? " (degenerate)" : "") << "\n";
  }
}

void summary_csv(std::ostringstream& out, const std::string& section,
                 const MetricSummary& s) {
  out << section << ",epochs," << s.epochs << "\n";
  out << section << ",overall_accuracy," << rate_str(s.overall_accuracy) << "\n";
  out << section << ",kappa," << rate_str(s.kappa) << "\n";
  out << section << ",macro_f1," << format_f64(s.macro_f1, 6) << "\n";
  out << section << ",mean_sensitivity," << rate_str(s.mean_sensitivity) << "\n";
  out << section << ",mean_specificity," << rate_str(s.mean_specificity) << "\n";
  for (int c = 0; c < s.cm.n_classes; ++c) {
    const ClassRates& r = s.per_class.empty() ? ClassRates{}
                                              : s.per_class[static_cast<std::size_t>(c)];
    out << section << ",class_rates," << stage_name(static_cast<Stage>(c)) << ","
        << rate_str(r.sensitivity) << "," << rate_str(r.selectivity) << ","
        << rate_str(r.specificity) << "," << format_f64(r.f1, 6) << ","
        << (r.f1_degenerate ? 1 : 0) << "\n";
  }
  for (int t = 0; t < s.cm.n_classes; ++t) {
    out << section << ",confusion," << stage_name(static_cast<Stage>(t));
    for (int p = 0; p < s.cm.n_classes; ++p) out << "," << s.cm.at(t, p);
    out << "\n";
  }
}

}  // namespace

std::string report_text(const EvalReport& report) {
  std::ostringstream out;
  out << "== overall ==\n";
  summary_text(out, report.overall);
  if (report.non_transition) {
    out << "== non-transition (both neighbors share the label) ==\n";
    summary_text(out, *report.non_transition);
  }
  if (report.transition) {
    out << "== transition (label changes or recording edge) ==\n";
    summary_text(out, *report.transition);
  }
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "section,field,values...\n";
  summary_csv(out, "overall", report.overall);
  if (report.non_transition) summary_csv(out, "non_transition", *report.non_transition);
  if (report.transition) summary_csv(out, "transition", *report.transition);
  return out.str();
}

}  // namespace sleepstage
