#pragma once

#include "affect/metrics.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace affect {

enum class KernelKind { kLinear, kRbf };

struct KernelSpec {
  KernelKind kind = KernelKind::kRbf;
  /// RBF width. Unset means 1 / d at training time.
  std::optional<double> gamma;

  double resolved_gamma(Eigen::Index dim) const;
};

/// 1 / median of the pairwise squared distances between rows of X.
double median_heuristic_gamma(const Eigen::MatrixXd& X);

/// a x b matrix of <x_i, y_j> (linear) or exp(-gamma ||x_i - y_j||^2) (rbf).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const KernelSpec& spec);

/// w_i = 1 / (training count of y_i's class).
Eigen::VectorXd class_weights(std::span<const int> labels);

/// n x m targets with +1 at the true class and -1 elsewhere.
Eigen::MatrixXd encode_targets(std::span<const int> labels, std::size_t n_classes);

enum class KelmTask { kClassification, kRegression };

/// Closed-form kernel ELM. beta solves (I/C + W K) beta = W T, W = diag(weights)
/// or the identity.
struct KelmModel {
  Eigen::MatrixXd train_inputs;  // D, n x d
  Eigen::MatrixXd beta;          // n x m
  double C = 1.0;
  KernelSpec kernel;             // gamma always resolved
  KelmTask task = KelmTask::kClassification;
  std::optional<Eigen::VectorXd> weights;

  Eigen::Index n_outputs() const { return beta.cols(); }
};

KelmModel train_kelm(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T, double C, const KernelSpec& kernel,
                     KelmTask task, const std::optional<Eigen::VectorXd>& weights = std::nullopt);

struct KelmPrediction {
  Eigen::MatrixXd scores;  // q x m; regression outputs clipped to [-1, 1]
  std::vector<int> labels;  // classification only
};

KelmPrediction predict_kelm(const KelmModel& model, const Eigen::MatrixXd& X_test);

struct CSelection {
  double C = 1.0;
  double dev_score = 0.0;
  std::vector<std::pair<double, double>> table;  // (C, score) in ascending C
};

/// Trains once per distinct candidate and keeps the best development score;
/// ties go to the smallest C.
CSelection select_C(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T, std::vector<double> candidates,
                    const Eigen::MatrixXd& dev_X, const DevTargets& dev_truth, DevMetric metric,
                    const KernelSpec& kernel, KelmTask task,
                    const std::optional<Eigen::VectorXd>& weights = std::nullopt);

/// {10^k : k = -3..3}
std::vector<double> default_c_grid();

std::string serialize_kelm(const KelmModel& model);
KelmModel deserialize_kelm(const std::string& text);
void save_kelm(const std::string& path, const KelmModel& model);
KelmModel load_kelm(const std::string& path);

}  // namespace affect
