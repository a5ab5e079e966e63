#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace affect {

enum class ForestTask { kClassification, kRegression };

/// Features tried per split: sqrt(d) and d/3 are floored, at least 1.
/// kDefault means sqrt for classification and third for regression.
enum class FeaturesPerSplit { kDefault, kSqrt, kThird, kAll };

struct ForestSpec {
  std::size_t n_trees = 10;
  std::optional<std::size_t> max_depth;  // unlimited when unset
  std::size_t min_leaf = 1;
  FeaturesPerSplit features_per_split = FeaturesPerSplit::kDefault;
  std::uint64_t seed = 0;
};

/// Preorder node array; a node with feature < 0 is a leaf. Samples with
/// x[feature] <= threshold go left.
struct DecisionTree {
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<double> value;  // class frequencies or {mean}
  };
  std::vector<Node> nodes;

  const std::vector<double>& leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
};

struct ForestModel {
  ForestTask task = ForestTask::kClassification;
  std::size_t n_classes = 0;  // classification only
  std::size_t n_features = 0;
  std::vector<DecisionTree> trees;
  /// Out-of-bag accuracy (classification) or negative mean squared error
  /// (regression). NaN when no sample was ever out of bag.
  double oob_score = 0.0;
  /// Fraction of training samples left out of each tree's bootstrap.
  std::vector<double> oob_fraction;

  std::size_t n_outputs() const { return task == ForestTask::kClassification ? n_classes : 1; }
};

/// Seed of tree `index` derived from the root seed (splitmix64 of a counter).
std::uint64_t tree_seed(std::uint64_t root, std::size_t index);

/// Bagged CART trees. Classification targets are class indices stored as
/// doubles; n_classes = 0 infers max(y) + 1.
ForestModel train_forest(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task,
                         const ForestSpec& spec, std::size_t n_classes = 0);

/// q x n_classes averaged leaf frequencies, or q x 1 mean tree outputs.
Eigen::MatrixXd predict_forest(const ForestModel& model, const Eigen::MatrixXd& X);

/// Argmax of predict_forest, ties to the smallest class.
std::vector<int> predict_forest_labels(const ForestModel& model, const Eigen::MatrixXd& X);

struct TreeCountSelection {
  std::size_t n_trees = 0;
  std::vector<std::pair<std::size_t, double>> oob_scores;  // per distinct grid point, ascending
  ForestModel model;                                        // truncated to n_trees
};

/// Grows max(grid) trees once and scores each prefix by out-of-bag
/// performance. Ties go to the fewest trees.
TreeCountSelection select_n_trees(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task,
                                  std::vector<std::size_t> grid, const ForestSpec& base_spec,
                                  std::size_t n_classes = 0);

/// {10, 20, 50, 100, 200}
std::vector<std::size_t> default_tree_grid();

std::string serialize_forest(const ForestModel& model);
ForestModel deserialize_forest(const std::string& text);
void save_forest(const std::string& path, const ForestModel& model);
ForestModel load_forest(const std::string& path);

}  // namespace affect
