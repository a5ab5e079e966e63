#pragma once

#include "affect/track.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace affect {

/// Moments behind one concordance correlation coefficient (population, 1/n).
struct CccBreakdown {
  double mu_t = 0.0;
  double mu_p = 0.0;
  double sigma_t = 0.0;
  double sigma_p = 0.0;
  double cov_tp = 0.0;
  double ccc = 0.0;
};

/// 2 cov / (var_t + var_p + (mu_t - mu_p)^2). Two equal constant series
/// score 1. Requires equal lengths >= 2.
CccBreakdown ccc(std::span<const double> truth, std::span<const double> pred);

/// Centered Pearson correlation; nullopt when either series is constant.
std::optional<double> pearson(std::span<const double> truth, std::span<const double> pred);

/// Mean of the valence and arousal CCCs.
double challenge_score_va(double ccc_valence, double ccc_arousal);

/// Fixed-point text with `decimals` digits, truncated toward zero. Reported
/// scores never round up past the measured value.
std::string format_score(double value, int decimals = 3);

/// Row-wise argmax, ties to the smallest column.
std::vector<int> argmax_rows(const Eigen::MatrixXd& scores);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  Task task = Task::kExpr;
  std::size_t n = 0;

  // EXPR
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double accuracy = 0.0;

  // VA
  double ccc_valence = 0.0;
  double ccc_arousal = 0.0;
  double ccc_mean = 0.0;

  /// The challenge measure: macro F1 for EXPR, mean CCC for VA.
  double challenge_score() const { return task == Task::kExpr ? macro_f1 : ccc_mean; }
};

/// Per-class precision/recall/F1 (0 where undefined) and their unweighted
/// means over all K classes. With exclude_absent, classes that neither occur
/// in the truth nor get predicted are left out of the macro means.
EvalReport classification_report(std::span<const int> y_true, std::span<const int> y_pred,
                                 std::size_t n_classes, bool exclude_absent = false);

/// Pooled CCC per column of two n x 2 matrices (valence, arousal).
EvalReport va_report(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred);

/// Mean CCC over all columns.
double mean_ccc(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred);

/// Challenge measure used for model selection on the development split.
enum class DevMetric { kMacroF1, kMeanCcc };

/// Development-split truth: class labels (macro F1) or a value matrix (mean CCC).
struct DevTargets {
  std::vector<int> labels;
  Eigen::MatrixXd values;
};

/// Macro F1 of the row-wise argmax, or mean CCC over columns.
double score_predictions(const Eigen::MatrixXd& scores, const DevTargets& truth, DevMetric metric,
                         std::size_t n_classes);

std::string report_text(const EvalReport& report);
/// `metric,value` rows, then `class,precision,recall,f1,support` for EXPR.
std::string report_csv(const EvalReport& report);

}  // namespace affect
