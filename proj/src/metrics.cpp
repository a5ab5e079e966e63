#include "affect/metrics.hpp"

#include "affect/csv_io.hpp"
#include "affect/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace affect {
namespace {

struct Moments {
  double mu_t = 0.0, mu_p = 0.0, var_t = 0.0, var_p = 0.0, cov = 0.0;
};

Moments moments(std::span<const double> t, std::span<const double> p) {
  if (t.size() != p.size()) {
    throw Error(ErrorKind::kInvalidArgument, "series lengths differ: " + std::to_string(t.size()) +
                                                 " vs " + std::to_string(p.size()));
  }
  if (t.size() < 2) throw Error(ErrorKind::kInvalidArgument, "need at least 2 values");
  const double n = static_cast<double>(t.size());
  Moments m;
  for (std::size_t i = 0; i < t.size(); ++i) {
    m.mu_t += t[i];
    m.mu_p += p[i];
  }
  m.mu_t /= n;
  m.mu_p /= n;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double dt = t[i] - m.mu_t;
    const double dp = p[i] - m.mu_p;
    m.var_t += dt * dt;
    m.var_p += dp * dp;
    m.cov += dt * dp;
  }
  m.var_t /= n;
  m.var_p /= n;
  m.cov /= n;
  return m;
}

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index j) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, j);
  return out;
}

}  // namespace

CccBreakdown ccc(std::span<const double> truth, std::span<const double> pred) {
  const Moments m = moments(truth, pred);
  CccBreakdown out;
  out.mu_t = m.mu_t;
  out.mu_p = m.mu_p;
  out.sigma_t = std::sqrt(m.var_t);
  out.sigma_p = std::sqrt(m.var_p);
  out.cov_tp = m.cov;
  const double diff = m.mu_t - m.mu_p;
  const double denom = m.var_t + m.var_p + diff * diff;
  out.ccc = denom > 0.0 ? std::clamp(2.0 * m.cov / denom, -1.0, 1.0) : 1.0;
  return out;
}

std::optional<double> pearson(std::span<const double> truth, std::span<const double> pred) {
  const Moments m = moments(truth, pred);
  if (!(m.var_t > 0.0) || !(m.var_p > 0.0)) return std::nullopt;
  return std::clamp(m.cov / std::sqrt(m.var_t * m.var_p), -1.0, 1.0);
}

double challenge_score_va(double ccc_valence, double ccc_arousal) {
  return (ccc_valence + ccc_arousal) / 2.0;
}

std::string format_score(double value, int decimals) {
  double scale = 1.0;
  for (int i = 0; i < decimals; ++i) scale *= 10.0;
  // Guard against representation error just below a representable boundary.
  const double scaled = value * scale;
  const double truncated = (scaled >= 0.0 ? std::floor(scaled + 1e-9) : std::ceil(scaled - 1e-9)) / scale;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, truncated == 0.0 ? 0.0 : truncated);
  return buf;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

EvalReport classification_report(std::span<const int> y_true, std::span<const int> y_pred,
                                 std::size_t n_classes, bool exclude_absent) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorKind::kInvalidArgument, "label vectors differ in length");
  }
  if (y_true.empty()) throw Error(ErrorKind::kInvalidArgument, "no labels to evaluate");
  const auto k = static_cast<int>(n_classes);
  std::vector<std::size_t> tp(n_classes), fp(n_classes), fn(n_classes), support(n_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if (t < 0 || t >= k || p < 0 || p >= k) {
      throw Error(ErrorKind::kInvalidArgument, "label out of range [0, " + std::to_string(k) + ") at position " +
                                                   std::to_string(i));
    }
    ++support[static_cast<std::size_t>(t)];
    if (t == p) {
      ++tp[static_cast<std::size_t>(t)];
      ++correct;
    } else {
      ++fn[static_cast<std::size_t>(t)];
      ++fp[static_cast<std::size_t>(p)];
    }
  }

  EvalReport report;
  report.task = Task::kExpr;
  report.n = y_true.size();
  report.accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    ClassMetrics m;
    m.support = support[c];
    m.precision = tp[c] + fp[c] == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]);
    m.recall = tp[c] + fn[c] == 0 ? 0.0 : static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fn[c]);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    report.per_class.push_back(m);
    if (exclude_absent && support[c] == 0 && fp[c] == 0) continue;
    report.macro_precision += m.precision;
    report.macro_recall += m.recall;
    report.macro_f1 += m.f1;
    ++counted;
  }
  if (counted > 0) {
    report.macro_precision /= static_cast<double>(counted);
    report.macro_recall /= static_cast<double>(counted);
    report.macro_f1 /= static_cast<double>(counted);
  }
  return report;
}

EvalReport va_report(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred) {
  if (truth.cols() != 2 || pred.cols() != 2 || truth.rows() != pred.rows()) {
    throw Error(ErrorKind::kInvalidArgument, "va_report needs two n x 2 matrices of equal size");
  }
  EvalReport report;
  report.task = Task::kVa;
  report.n = static_cast<std::size_t>(truth.rows());
  report.ccc_valence = ccc(column(truth, 0), column(pred, 0)).ccc;
  report.ccc_arousal = ccc(column(truth, 1), column(pred, 1)).ccc;
  report.ccc_mean = challenge_score_va(report.ccc_valence, report.ccc_arousal);
  return report;
}

double mean_ccc(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred) {
  if (truth.cols() != pred.cols() || truth.rows() != pred.rows() || truth.cols() == 0) {
    throw Error(ErrorKind::kInvalidArgument, "mean_ccc needs matrices of equal nonzero size");
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) total += ccc(column(truth, j), column(pred, j)).ccc;
  return total / static_cast<double>(truth.cols());
}

double score_predictions(const Eigen::MatrixXd& scores, const DevTargets& truth, DevMetric metric,
                         std::size_t n_classes) {
  if (metric == DevMetric::kMacroF1) return classification_report(truth.labels, argmax_rows(scores), n_classes).macro_f1;
  return mean_ccc(truth.values, scores);
}

std::string report_text(const EvalReport& r) {
  std::string out;
  auto line = [&](const std::string& name, double v) { out += name + ": " + format_score(v, 3) + "\n"; };
  out += std::string("task: ") + to_string(r.task) + "\n";
  out += "frames: " + std::to_string(r.n) + "\n";
  if (r.task == Task::kExpr) {
    line("macro F1", r.macro_f1);
    line("macro precision", r.macro_precision);
    line("macro recall", r.macro_recall);
    line("accuracy", r.accuracy);
    out += "class  precision  recall  f1     support\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      const auto& m = r.per_class[c];
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%-6zu %-10s %-7s %-6s %zu\n", c, format_score(m.precision).c_str(),
                    format_score(m.recall).c_str(), format_score(m.f1).c_str(), m.support);
      out += buf;
    }
  } else {
    line("CCC average", r.ccc_mean);
    line("CCC valence", r.ccc_valence);
    line("CCC arousal", r.ccc_arousal);
  }
  return out;
}

std::string report_csv(const EvalReport& r) {
  std::string out = "metric,value\n";
  auto row = [&](const std::string& name, double v) { out += name + "," + format_number(v) + "\n"; };
  out += std::string("task,") + to_string(r.task) + "\n";
  out += "frames," + std::to_string(r.n) + "\n";
  if (r.task == Task::kExpr) {
    row("macro_f1", r.macro_f1);
    row("macro_precision", r.macro_precision);
    row("macro_recall", r.macro_recall);
    row("accuracy", r.accuracy);
    out += "\nclass,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      const auto& m = r.per_class[c];
      out += std::to_string(c) + "," + format_number(m.precision) + "," + format_number(m.recall) + "," +
             format_number(m.f1) + "," + std::to_string(m.support) + "\n";
    }
  } else {
    row("ccc_mean", r.ccc_mean);
    row("ccc_valence", r.ccc_valence);
    row("ccc_arousal", r.ccc_arousal);
  }
  return out;
}

}  // namespace affect
