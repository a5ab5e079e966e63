#include "affect/fusion.hpp"

#include "affect/csv_io.hpp"
#include "affect/error.hpp"
#include "affect/parallel.hpp"

#include <cmath>
#include <random>

namespace affect {

FusionMatrix::FusionMatrix(Eigen::MatrixXd weights) : weights_(std::move(weights)) {
  if (weights_.rows() < 1 || weights_.cols() < 1) {
    throw Error(ErrorKind::kInvalidArgument, "fusion matrix needs at least one model and one output");
  }
  for (Eigen::Index k = 0; k < weights_.cols(); ++k) {
    if ((weights_.col(k).array() < 0.0).any() || !weights_.col(k).allFinite() ||
        std::abs(weights_.col(k).sum() - 1.0) > 1e-9) {
      throw Error(ErrorKind::kInvalidArgument,
                  "fusion matrix column " + std::to_string(k) + " is not on the probability simplex");
    }
  }
}

FusionMatrix FusionMatrix::selector(std::size_t n_models, std::size_t n_outputs, std::size_t m) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_models), static_cast<Eigen::Index>(n_outputs));
  w.row(static_cast<Eigen::Index>(m)).setOnes();
  return FusionMatrix(std::move(w));
}

FusionMatrix FusionMatrix::uniform(std::size_t n_models, std::size_t n_outputs) {
  return FusionMatrix(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_models),
                                                static_cast<Eigen::Index>(n_outputs),
                                                1.0 / static_cast<double>(n_models)));
}

FusionPool sample_pool(std::size_t n_models, std::size_t n_outputs, std::size_t pool_size, double alpha,
                       std::uint64_t seed, bool include_selectors) {
  if (n_models < 1 || n_outputs < 1) {
    throw Error(ErrorKind::kInvalidArgument, "sample_pool needs M >= 1 and K >= 1");
  }
  if (!(alpha > 0.0)) throw Error(ErrorKind::kInvalidArgument, "Dirichlet alpha must be positive");

  FusionPool pool;
  pool.alpha = alpha;
  pool.seed = seed;
  pool.includes_selectors = include_selectors;
  pool.matrices.reserve(pool_size + (include_selectors ? n_models : 0));

  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const auto M = static_cast<Eigen::Index>(n_models);
  const auto K = static_cast<Eigen::Index>(n_outputs);
  for (std::size_t p = 0; p < pool_size; ++p) {
    Eigen::MatrixXd w(M, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      double total = 0.0;
      // Tiny alphas can underflow every draw to zero; redraw the column then.
      while (!(total > 0.0)) {
        total = 0.0;
        for (Eigen::Index m = 0; m < M; ++m) {
          w(m, k) = gamma(rng);
          total += w(m, k);
        }
      }
      w.col(k) /= total;
    }
    pool.matrices.emplace_back(std::move(w));
  }
  if (include_selectors) {
    for (std::size_t m = 0; m < n_models; ++m) pool.matrices.push_back(FusionMatrix::selector(n_models, n_outputs, m));
  }
  return pool;
}

Eigen::MatrixXd apply_fusion(const std::vector<Eigen::MatrixXd>& preds, const FusionMatrix& matrix, bool clip_unit) {
  if (preds.size() != matrix.n_models()) {
    throw Error(ErrorKind::kAlignment, "fusion matrix has " + std::to_string(matrix.n_models()) +
                                           " models, got " + std::to_string(preds.size()) + " predictions");
  }
  const Eigen::Index q = preds.front().rows();
  const auto K = static_cast<Eigen::Index>(matrix.n_outputs());
  Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(q, K);
  for (std::size_t m = 0; m < preds.size(); ++m) {
    if (preds[m].rows() != q || preds[m].cols() != K) {
      throw Error(ErrorKind::kAlignment, "prediction " + std::to_string(m) + " is " +
                                             std::to_string(preds[m].rows()) + "x" + std::to_string(preds[m].cols()) +
                                             ", expected " + std::to_string(q) + "x" + std::to_string(K));
    }
    fused.array() += preds[m].array().rowwise() * matrix.weights().row(static_cast<Eigen::Index>(m)).array();
  }
  if (clip_unit) fused = fused.cwiseMax(-1.0).cwiseMin(1.0);
  return fused;
}

void check_aligned(const std::vector<FrameTrack>& preds) {
  if (preds.empty()) throw Error(ErrorKind::kAlignment, "no prediction tracks to fuse");
  const FrameTrack& ref = preds.front();
  for (std::size_t m = 1; m < preds.size(); ++m) {
    const FrameTrack& t = preds[m];
    if (t.video_id() != ref.video_id()) {
      throw Error(ErrorKind::kAlignment, "model " + std::to_string(m) + " track is for video '" + t.video_id() +
                                             "', expected '" + ref.video_id() + "'");
    }
    if (t.width() != ref.width()) {
      throw Error(ErrorKind::kAlignment, "video '" + ref.video_id() + "': model " + std::to_string(m) + " has " +
                                             std::to_string(t.width()) + " outputs, expected " +
                                             std::to_string(ref.width()));
    }
    if (t.frames() != ref.frames()) {
      std::size_t i = 0;
      while (i < t.n_frames() && i < ref.n_frames() && t.frames()[i] == ref.frames()[i]) ++i;
      const std::string where = i < ref.n_frames() ? "frame " + std::to_string(ref.frames()[i])
                                                   : "frame " + std::to_string(t.frames()[i]);
      throw Error(ErrorKind::kAlignment, "video '" + ref.video_id() + "': model " + std::to_string(m) +
                                             " frames diverge at " + where + " (" + std::to_string(t.n_frames()) +
                                             " vs " + std::to_string(ref.n_frames()) + " frames)");
    }
  }
}

FrameTrack apply_fusion(const std::vector<FrameTrack>& preds, const FusionMatrix& matrix) {
  check_aligned(preds);
  std::vector<Eigen::MatrixXd> values;
  for (const auto& t : preds) values.push_back(t.values());
  const bool va = preds.front().kind() == TrackKind::kVa;
  return preds.front().with_values(apply_fusion(values, matrix, va), preds.front().kind());
}

DwfResult dwf_search(const FusionPool& pool, const std::vector<Eigen::MatrixXd>& dev_preds,
                     const DevTargets& dev_truth, DevMetric metric, std::size_t workers) {
  if (pool.matrices.empty()) throw Error(ErrorKind::kInvalidArgument, "dwf_search: empty pool");
  const std::size_t K = pool.matrices.front().n_outputs();
  const bool clip = metric == DevMetric::kMeanCcc;
  DwfResult result;
  result.scores.assign(pool.matrices.size(), 0.0);
  parallel_for(pool.matrices.size(), workers, [&](std::size_t i) {
    result.scores[i] = score_predictions(apply_fusion(dev_preds, pool.matrices[i], clip), dev_truth, metric, K);
  });
  for (std::size_t i = 1; i < result.scores.size(); ++i) {
    if (result.scores[i] > result.scores[result.best_index]) result.best_index = i;
  }
  result.dev_score = result.scores[result.best_index];
  return result;
}

std::string score_table_csv(const DwfResult& result) {
  std::string out = "pool_index,score\n";
  for (std::size_t i = 0; i < result.scores.size(); ++i) {
    out += std::to_string(i) + "," + format_number(result.scores[i]) + "\n";
  }
  return out;
}

std::string fusion_matrix_csv(const FusionMatrix& matrix, const std::vector<std::string>& model_names,
                              const std::vector<std::string>& output_names) {
  std::string out = "model";
  for (std::size_t k = 0; k < matrix.n_outputs(); ++k) {
    out += "," + (k < output_names.size() ? output_names[k] : "c" + std::to_string(k));
  }
  out += "\n";
  for (std::size_t m = 0; m < matrix.n_models(); ++m) {
    out += m < model_names.size() ? model_names[m] : "model" + std::to_string(m);
    for (std::size_t k = 0; k < matrix.n_outputs(); ++k) {
      out += "," + format_number(matrix.weights()(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)));
    }
    out += "\n";
  }
  return out;
}

FusionMatrix read_fusion_matrix_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.header.size() < 2 || table.rows.empty()) throw Error(ErrorKind::kIo, path + ": empty fusion matrix");
  Eigen::MatrixXd w(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(table.header.size() - 1));
  for (std::size_t m = 0; m < table.rows.size(); ++m) {
    for (std::size_t k = 1; k < table.header.size(); ++k) {
      w(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k - 1)) = parse_number(table.rows[m][k]);
    }
  }
  return FusionMatrix(std::move(w));
}

FrameTrack mean_fusion(const std::vector<FrameTrack>& preds) {
  check_aligned(preds);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(preds.front().values().rows(), preds.front().values().cols());
  for (const auto& t : preds) sum += t.values();
  sum /= static_cast<double>(preds.size());
  return preds.front().with_values(std::move(sum), preds.front().kind());
}

Eigen::MatrixXd stack_features(const std::vector<Eigen::MatrixXd>& preds) {
  if (preds.empty()) throw Error(ErrorKind::kAlignment, "no predictions to stack");
  Eigen::Index width = 0;
  for (const auto& p : preds) {
    if (p.rows() != preds.front().rows()) throw Error(ErrorKind::kAlignment, "stacked predictions differ in rows");
    width += p.cols();
  }
  Eigen::MatrixXd out(preds.front().rows(), width);
  Eigen::Index offset = 0;
  for (const auto& p : preds) {
    out.middleCols(offset, p.cols()) = p;
    offset += p.cols();
  }
  return out;
}

RfFusionModel fit_rf_fusion(const std::vector<Eigen::MatrixXd>& preds, const DevTargets& truth, Task task,
                            const std::vector<std::size_t>& tree_grid, const ForestSpec& base_spec) {
  const Eigen::MatrixXd X = stack_features(preds);
  RfFusionModel model;
  model.task = task;
  if (task == Task::kExpr) {
    if (truth.labels.size() != static_cast<std::size_t>(X.rows())) {
      throw Error(ErrorKind::kAlignment, "rf fusion: truth and predictions differ in length");
    }
    std::vector<double> y(truth.labels.begin(), truth.labels.end());
    const auto classes = static_cast<std::size_t>(preds.front().cols());
    TreeCountSelection sel = select_n_trees(X, y, ForestTask::kClassification, tree_grid, base_spec, classes);
    model.oob_score = sel.model.oob_score;
    model.forests.push_back(std::move(sel.model));
    sel.model = {};
    model.selections.push_back(std::move(sel));
  } else {
    if (truth.values.rows() != X.rows()) {
      throw Error(ErrorKind::kAlignment, "rf fusion: truth and predictions differ in length");
    }
    model.oob_score = 0.0;
    for (Eigen::Index k = 0; k < truth.values.cols(); ++k) {
      std::vector<double> y(static_cast<std::size_t>(truth.values.rows()));
      for (Eigen::Index i = 0; i < truth.values.rows(); ++i) y[static_cast<std::size_t>(i)] = truth.values(i, k);
      ForestSpec spec = base_spec;
      spec.seed = base_spec.seed + static_cast<std::uint64_t>(k);
      TreeCountSelection sel = select_n_trees(X, y, ForestTask::kRegression, tree_grid, spec);
      model.oob_score += sel.model.oob_score / static_cast<double>(truth.values.cols());
      model.forests.push_back(std::move(sel.model));
      sel.model = {};
      model.selections.push_back(std::move(sel));
    }
  }
  const Eigen::MatrixXd fitted = apply_rf_fusion(model, preds);
  model.fit_score = score_predictions(fitted, truth, task == Task::kExpr ? DevMetric::kMacroF1 : DevMetric::kMeanCcc,
                                      static_cast<std::size_t>(preds.front().cols()));
  if (task == Task::kExpr) {
    model.fit_oob_units = classification_report(truth.labels, argmax_rows(fitted), static_cast<std::size_t>(fitted.cols())).accuracy;
  } else {
    // Unclipped forest outputs, matching how the oob error is measured.
    double total = 0.0;
    for (std::size_t k = 0; k < model.forests.size(); ++k) {
      const Eigen::VectorXd raw = predict_forest(model.forests[k], stack_features(preds)).col(0);
      total -= (raw - truth.values.col(static_cast<Eigen::Index>(k))).squaredNorm() / static_cast<double>(raw.size());
    }
    model.fit_oob_units = total / static_cast<double>(model.forests.size());
  }
  return model;
}

Eigen::MatrixXd apply_rf_fusion(const RfFusionModel& model, const std::vector<Eigen::MatrixXd>& preds) {
  const Eigen::MatrixXd X = stack_features(preds);
  if (model.task == Task::kExpr) return predict_forest(model.forests.front(), X);
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(model.forests.size()));
  for (std::size_t k = 0; k < model.forests.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = predict_forest(model.forests[k], X).col(0);
  }
  return out.cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace affect
