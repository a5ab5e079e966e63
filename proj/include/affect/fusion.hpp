#pragma once

#include "affect/forest.hpp"
#include "affect/metrics.hpp"
#include "affect/track.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace affect {

/// M x K weights (M models, K outputs). Every column lies on the simplex.
class FusionMatrix {
 public:
  explicit FusionMatrix(Eigen::MatrixXd weights);

  /// Weight 1 on model `m` for every output.
  static FusionMatrix selector(std::size_t n_models, std::size_t n_outputs, std::size_t m);
  static FusionMatrix uniform(std::size_t n_models, std::size_t n_outputs);

  const Eigen::MatrixXd& weights() const { return weights_; }
  std::size_t n_models() const { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t n_outputs() const { return static_cast<std::size_t>(weights_.cols()); }

 private:
  Eigen::MatrixXd weights_;
};

struct FusionPool {
  std::vector<FusionMatrix> matrices;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  bool includes_selectors = true;
};

/// pool_size matrices whose columns are independent Dirichlet(alpha) draws
/// (normalised Gamma variates), followed by the M selector matrices.
FusionPool sample_pool(std::size_t n_models, std::size_t n_outputs, std::size_t pool_size, double alpha,
                       std::uint64_t seed, bool include_selectors = true);

/// fused[t][k] = sum_m w[m][k] * preds_m[t][k]. No renormalisation; set
/// clip_unit to clamp outputs to [-1, 1] (VA).
Eigen::MatrixXd apply_fusion(const std::vector<Eigen::MatrixXd>& preds, const FusionMatrix& matrix,
                             bool clip_unit = false);

/// Track version; tracks must share video, frames and width. VA tracks are clipped.
FrameTrack apply_fusion(const std::vector<FrameTrack>& preds, const FusionMatrix& matrix);

/// Throws kAlignment naming the video and first differing frame.
void check_aligned(const std::vector<FrameTrack>& preds);

struct DwfResult {
  std::size_t best_index = 0;
  double dev_score = 0.0;
  std::vector<double> scores;  // one per pool entry, pool order
};

/// Scores every pool matrix on the development predictions and keeps the
/// best; ties go to the earliest matrix.
DwfResult dwf_search(const FusionPool& pool, const std::vector<Eigen::MatrixXd>& dev_preds,
                     const DevTargets& dev_truth, DevMetric metric, std::size_t workers = 1);

/// `pool_index,score`
std::string score_table_csv(const DwfResult& result);

/// Header `model,<output names>` then one row per model.
std::string fusion_matrix_csv(const FusionMatrix& matrix, const std::vector<std::string>& model_names,
                              const std::vector<std::string>& output_names);
FusionMatrix read_fusion_matrix_csv(const std::string& path);

/// Unweighted per-frame mean.
FrameTrack mean_fusion(const std::vector<FrameTrack>& preds);

/// Frame-wise concatenation, q x (M * K).
Eigen::MatrixXd stack_features(const std::vector<Eigen::MatrixXd>& preds);

/// Random-forest stacker: one classification forest (EXPR) or one regression
/// forest per output (VA).
struct RfFusionModel {
  Task task = Task::kExpr;
  std::vector<ForestModel> forests;
  std::vector<TreeCountSelection> selections;  // model member left empty
  double fit_score = 0.0;      // challenge measure on the fit split itself
  double oob_score = 0.0;      // oob accuracy (EXPR) or mean over outputs of -MSE (VA)
  double fit_oob_units = 0.0;  // fit-split accuracy or -MSE, comparable with oob_score
};

RfFusionModel fit_rf_fusion(const std::vector<Eigen::MatrixXd>& preds, const DevTargets& truth, Task task,
                            const std::vector<std::size_t>& tree_grid, const ForestSpec& base_spec);

/// Class probabilities (EXPR) or clipped VA values.
Eigen::MatrixXd apply_rf_fusion(const RfFusionModel& model, const std::vector<Eigen::MatrixXd>& preds);

}  // namespace affect
