#include "affect/kelm.hpp"

#include "affect/csv_io.hpp"
#include "affect/error.hpp"
#include "affect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace affect {
namespace {

const char* kind_name(KernelKind k) { return k == KernelKind::kLinear ? "linear" : "rbf"; }

void append_matrix(std::string& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_number(m(i, j));
    }
    out += '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istringstream& in, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  std::string line;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorKind::kIo, "kelm model: truncated matrix block");
    std::istringstream cells(line);
    std::string cell;
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!std::getline(cells, cell, ',')) throw Error(ErrorKind::kIo, "kelm model: short matrix row");
      m(i, j) = parse_number(cell);
    }
  }
  return m;
}

}  // namespace

double KernelSpec::resolved_gamma(Eigen::Index dim) const {
  if (gamma) {
    if (!(*gamma > 0.0)) throw Error(ErrorKind::kInvalidArgument, "rbf gamma must be positive");
    return *gamma;
  }
  return 1.0 / static_cast<double>(std::max<Eigen::Index>(dim, 1));
}

double median_heuristic_gamma(const Eigen::MatrixXd& X) {
  std::vector<double> d2;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < X.rows(); ++j) d2.push_back((X.row(i) - X.row(j)).squaredNorm());
  }
  if (d2.empty()) return 1.0 / static_cast<double>(std::max<Eigen::Index>(X.cols(), 1));
  auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  return *mid > 0.0 ? 1.0 / *mid : 1.0 / static_cast<double>(std::max<Eigen::Index>(X.cols(), 1));
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const KernelSpec& spec) {
  if (X.cols() != Y.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "kernel_matrix: widths differ (" + std::to_string(X.cols()) +
                                                 " vs " + std::to_string(Y.cols()) + ")");
  }
  if (spec.kind == KernelKind::kLinear) return X * Y.transpose();

  const double gamma = spec.resolved_gamma(X.cols());
  Eigen::MatrixXd K(X.rows(), Y.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    K.row(i) = (-gamma * (Y.rowwise() - X.row(i)).rowwise().squaredNorm().array()).exp().transpose();
  }
  return K;
}

Eigen::VectorXd class_weights(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int y : labels) ++counts[y];
  Eigen::VectorXd w(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    w(static_cast<Eigen::Index>(i)) = 1.0 / static_cast<double>(counts[labels[i]]);
  }
  return w;
}

Eigen::MatrixXd encode_targets(std::span<const int> labels, std::size_t n_classes) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(labels.size()),
                                                static_cast<Eigen::Index>(n_classes), -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw Error(ErrorKind::kInvalidArgument, "label " + std::to_string(labels[i]) + " out of range");
    }
    T(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return T;
}

KelmModel train_kelm(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T, double C, const KernelSpec& kernel,
                     KelmTask task, const std::optional<Eigen::VectorXd>& weights) {
  const Eigen::Index n = X.rows();
  if (n < 1) throw Error(ErrorKind::kInvalidArgument, "train_kelm: no training instances");
  if (T.rows() != n) throw Error(ErrorKind::kInvalidArgument, "train_kelm: targets and inputs differ in rows");
  if (!(C > 0.0)) throw Error(ErrorKind::kInvalidArgument, "train_kelm: C must be positive");
  if (weights && (weights->size() != n || (weights->array() <= 0.0).any())) {
    throw Error(ErrorKind::kInvalidArgument, "train_kelm: weights must be n positive values");
  }

  KelmModel model;
  model.train_inputs = X;
  model.C = C;
  model.kernel = kernel;
  if (kernel.kind == KernelKind::kRbf) model.kernel.gamma = kernel.resolved_gamma(X.cols());
  model.task = task;
  model.weights = weights;

  // (I/C + W K) beta = W T is equivalent to (W^-1 / C + K) beta = T, which is
  // symmetric positive definite for a PSD kernel.
  Eigen::MatrixXd A = kernel_matrix(X, X, model.kernel);
  if (weights) {
    A.diagonal() += (1.0 / (C * weights->array())).matrix();
  } else {
    A.diagonal().array() += 1.0 / C;
  }

  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-15) {
    model.beta = llt.solve(T);
    return model;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
  if (ldlt.info() != Eigen::Success || !(rcond > 1e-15)) {
    std::ostringstream msg;
    msg << "train_kelm: regularized kernel system is numerically singular (reciprocal condition "
        << rcond << ", C = " << C << ")";
    throw Error(ErrorKind::kNumerical, msg.str());
  }
  model.beta = ldlt.solve(T);
  return model;
}

KelmPrediction predict_kelm(const KelmModel& model, const Eigen::MatrixXd& X_test) {
  if (X_test.cols() != model.train_inputs.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "predict_kelm: test width " + std::to_string(X_test.cols()) +
                                                 " differs from training width " +
                                                 std::to_string(model.train_inputs.cols()));
  }
  KelmPrediction out;
  out.scores = kernel_matrix(X_test, model.train_inputs, model.kernel) * model.beta;
  if (model.task == KelmTask::kClassification) {
    out.labels = argmax_rows(out.scores);
  } else {
    out.scores = out.scores.cwiseMax(-1.0).cwiseMin(1.0);
  }
  return out;
}

CSelection select_C(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T, std::vector<double> candidates,
                    const Eigen::MatrixXd& dev_X, const DevTargets& dev_truth, DevMetric metric,
                    const KernelSpec& kernel, KelmTask task, const std::optional<Eigen::VectorXd>& weights) {
  if (candidates.empty()) throw Error(ErrorKind::kInvalidArgument, "select_C: no candidates");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  CSelection best;
  bool first = true;
  for (double c : candidates) {
    const KelmModel model = train_kelm(X, T, c, kernel, task, weights);
    const double score = score_predictions(predict_kelm(model, dev_X).scores, dev_truth, metric,
                                           static_cast<std::size_t>(T.cols()));
    best.table.emplace_back(c, score);
    if (first || score > best.dev_score) {
      best.C = c;
      best.dev_score = score;
      first = false;
    }
  }
  return best;
}

std::vector<double> default_c_grid() {
  std::vector<double> grid;
  for (int k = -3; k <= 3; ++k) grid.push_back(std::pow(10.0, k));
  return grid;
}

std::string serialize_kelm(const KelmModel& model) {
  std::string out = "# kelm model\n";
  out += std::string("task=") + (model.task == KelmTask::kClassification ? "classification" : "regression") + "\n";
  out += std::string("kernel=") + kind_name(model.kernel.kind) + "\n";
  out += "gamma=" + format_number(model.kernel.gamma.value_or(0.0)) + "\n";
  out += "C=" + format_number(model.C) + "\n";
  out += "n=" + std::to_string(model.train_inputs.rows()) + "\n";
  out += "d=" + std::to_string(model.train_inputs.cols()) + "\n";
  out += "m=" + std::to_string(model.beta.cols()) + "\n";
  out += std::string("weighted=") + (model.weights ? "1" : "0") + "\n";
  out += "[D]\n";
  append_matrix(out, model.train_inputs);
  out += "[beta]\n";
  append_matrix(out, model.beta);
  if (model.weights) {
    out += "[weights]\n";
    append_matrix(out, *model.weights);
  }
  return out;
}

KelmModel deserialize_kelm(const std::string& text) {
  std::istringstream in(text);
  std::map<std::string, std::string> header;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (line == "[D]") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kIo, "kelm model: bad header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) {
    auto it = header.find(key);
    if (it == header.end()) throw Error(ErrorKind::kIo, "kelm model: missing header '" + key + "'");
    return it->second;
  };
  KelmModel model;
  model.task = field("task") == "classification" ? KelmTask::kClassification : KelmTask::kRegression;
  model.kernel.kind = field("kernel") == "linear" ? KernelKind::kLinear : KernelKind::kRbf;
  if (model.kernel.kind == KernelKind::kRbf) model.kernel.gamma = parse_number(field("gamma"));
  model.C = parse_number(field("C"));
  const auto n = static_cast<Eigen::Index>(std::stoll(field("n")));
  const auto d = static_cast<Eigen::Index>(std::stoll(field("d")));
  const auto m = static_cast<Eigen::Index>(std::stoll(field("m")));
  model.train_inputs = read_matrix(in, n, d);
  if (!std::getline(in, line) || line != "[beta]") throw Error(ErrorKind::kIo, "kelm model: missing [beta]");
  model.beta = read_matrix(in, n, m);
  if (field("weighted") == "1") {
    if (!std::getline(in, line) || line != "[weights]") throw Error(ErrorKind::kIo, "kelm model: missing [weights]");
    model.weights = read_matrix(in, n, 1).col(0);
  }
  return model;
}

void save_kelm(const std::string& path, const KelmModel& model) { write_text_file(path, serialize_kelm(model)); }

KelmModel load_kelm(const std::string& path) { return deserialize_kelm(read_text_file(path)); }

}  // namespace affect
