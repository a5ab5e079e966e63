#include "affect/forest.hpp"

#include "affect/csv_io.hpp"
#include "affect/error.hpp"
#include "affect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace affect {
namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = -std::numeric_limits<double>::infinity();
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task, std::size_t n_classes,
              const ForestSpec& spec, std::size_t features_per_split, std::mt19937_64& rng)
      : X_(X), y_(y), task_(task), n_classes_(n_classes), spec_(spec), mtry_(features_per_split), rng_(rng) {}

  DecisionTree build(std::vector<std::uint32_t> samples) {
    grow(samples, 0);
    return std::move(tree_);
  }

 private:
  std::vector<double> leaf_value(const std::vector<std::uint32_t>& samples) const {
    if (task_ == ForestTask::kClassification) {
      std::vector<double> freq(n_classes_, 0.0);
      for (auto s : samples) freq[static_cast<std::size_t>(y_[s])] += 1.0;
      for (double& f : freq) f /= static_cast<double>(samples.size());
      return freq;
    }
    double sum = 0.0;
    for (auto s : samples) sum += y_[s];
    return {sum / static_cast<double>(samples.size())};
  }

  bool is_pure(const std::vector<std::uint32_t>& samples) const {
    for (auto s : samples) {
      if (y_[s] != y_[samples.front()]) return false;
    }
    return true;
  }

  // Best threshold on one feature; candidates are midpoints between
  // consecutive distinct values, scanned in ascending order.
  void scan_feature(int feature, const std::vector<std::uint32_t>& samples, Split& best) const {
    const std::size_t n = samples.size();
    std::vector<std::pair<double, std::uint32_t>> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = {X_(samples[i], feature), samples[i]};
    std::sort(order.begin(), order.end());
    if (order.front().first == order.back().first) return;

    const std::size_t min_leaf = std::max<std::size_t>(spec_.min_leaf, 1);
    if (task_ == ForestTask::kClassification) {
      std::vector<double> left(n_classes_, 0.0), right(n_classes_, 0.0);
      for (const auto& [v, s] : order) right[static_cast<std::size_t>(y_[s])] += 1.0;
      double left_sq = 0.0;
      double right_sq = 0.0;
      for (double c : right) right_sq += c * c;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto c = static_cast<std::size_t>(y_[order[i].second]);
        left_sq += 2.0 * left[c] + 1.0;
        right_sq -= 2.0 * right[c] - 1.0;
        left[c] += 1.0;
        right[c] -= 1.0;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (order[i].first == order[i + 1].first || nl < min_leaf || nr < min_leaf) continue;
        const double score = left_sq / static_cast<double>(nl) + right_sq / static_cast<double>(nr);
        consider(feature, order[i].first, order[i + 1].first, score, best);
      }
    } else {
      double total = 0.0;
      for (const auto& [v, s] : order) total += y_[s];
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y_[order[i].second];
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (order[i].first == order[i + 1].first || nl < min_leaf || nr < min_leaf) continue;
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(nl) +
                             right_sum * right_sum / static_cast<double>(nr);
        consider(feature, order[i].first, order[i + 1].first, score, best);
      }
    }
  }

  static void consider(int feature, double lo, double hi, double score, Split& best) {
    if (!(score > best.score)) return;
    double threshold = lo + (hi - lo) / 2.0;
    if (!(threshold < hi)) threshold = lo;
    best = {feature, threshold, score};
  }

  std::vector<int> candidate_features() {
    const auto d = static_cast<int>(X_.cols());
    std::vector<int> all(static_cast<std::size_t>(d));
    std::iota(all.begin(), all.end(), 0);
    const std::size_t k = std::min<std::size_t>(mtry_, all.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng_)]);
    }
    std::sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    sampled_ = k;
    return all;
  }

  std::int32_t grow(std::vector<std::uint32_t>& samples, std::size_t depth) {
    const auto index = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.push_back({});
    const bool depth_reached = spec_.max_depth && depth >= *spec_.max_depth;
    if (depth_reached || samples.size() < 2 * std::max<std::size_t>(spec_.min_leaf, 1) || is_pure(samples)) {
      tree_.nodes[static_cast<std::size_t>(index)].value = leaf_value(samples);
      return index;
    }

    // Sampled features first; if all of them are constant here, fall back
    // to the remaining ones in index order.
    const std::vector<int> order = candidate_features();
    Split best;
    for (std::size_t i = 0; i < sampled_; ++i) scan_feature(order[i], samples, best);
    for (std::size_t i = sampled_; i < order.size() && best.feature < 0; ++i) scan_feature(order[i], samples, best);
    if (best.feature < 0) {
      tree_.nodes[static_cast<std::size_t>(index)].value = leaf_value(samples);
      return index;
    }

    std::vector<std::uint32_t> left, right;
    for (auto s : samples) (X_(s, best.feature) <= best.threshold ? left : right).push_back(s);
    samples.clear();
    samples.shrink_to_fit();

    tree_.nodes[static_cast<std::size_t>(index)].feature = best.feature;
    tree_.nodes[static_cast<std::size_t>(index)].threshold = best.threshold;
    const std::int32_t l = grow(left, depth + 1);
    const std::int32_t r = grow(right, depth + 1);
    tree_.nodes[static_cast<std::size_t>(index)].left = l;
    tree_.nodes[static_cast<std::size_t>(index)].right = r;
    return index;
  }

  const Eigen::MatrixXd& X_;
  std::span<const double> y_;
  ForestTask task_;
  std::size_t n_classes_;
  const ForestSpec& spec_;
  std::size_t mtry_;
  std::mt19937_64& rng_;
  std::size_t sampled_ = 0;
  DecisionTree tree_;
};

std::size_t resolve_mtry(FeaturesPerSplit mode, ForestTask task, std::size_t d) {
  if (mode == FeaturesPerSplit::kDefault) {
    mode = task == ForestTask::kClassification ? FeaturesPerSplit::kSqrt : FeaturesPerSplit::kThird;
  }
  switch (mode) {
    case FeaturesPerSplit::kSqrt:
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
    case FeaturesPerSplit::kThird: return std::max<std::size_t>(1, d / 3);
    default: return d;
  }
}

// Out-of-bag prediction sums per training sample.
class OobAccumulator {
 public:
  OobAccumulator(std::size_t n, std::size_t outputs) : sums_(n, std::vector<double>(outputs, 0.0)), votes_(n, 0) {}

  void add(std::size_t sample, const std::vector<double>& value) {
    for (std::size_t k = 0; k < value.size(); ++k) sums_[sample][k] += value[k];
    ++votes_[sample];
  }

  double score(ForestTask task, std::span<const double> y) const {
    std::size_t used = 0;
    double total = 0.0;
    for (std::size_t i = 0; i < sums_.size(); ++i) {
      if (votes_[i] == 0) continue;
      ++used;
      if (task == ForestTask::kClassification) {
        const auto& s = sums_[i];
        const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
        total += best == static_cast<std::size_t>(y[i]) ? 1.0 : 0.0;
      } else {
        const double err = sums_[i][0] / static_cast<double>(votes_[i]) - y[i];
        total -= err * err;
      }
    }
    return used == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(used);
  }

 private:
  std::vector<std::vector<double>> sums_;
  std::vector<std::size_t> votes_;
};

struct GrowContext {
  std::size_t n_classes = 0;
  std::size_t mtry = 1;
};

GrowContext validate(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task, const ForestSpec& spec,
                     std::size_t n_classes) {
  if (X.rows() < 2) throw Error(ErrorKind::kInvalidArgument, "train_forest needs at least 2 samples");
  if (static_cast<std::size_t>(X.rows()) != y.size()) {
    throw Error(ErrorKind::kInvalidArgument, "train_forest: X and y differ in length");
  }
  if (X.cols() < 1) throw Error(ErrorKind::kInvalidArgument, "train_forest: no features");
  if (spec.n_trees < 1) throw Error(ErrorKind::kInvalidArgument, "train_forest: n_trees must be >= 1");
  GrowContext ctx;
  if (task == ForestTask::kClassification) {
    std::size_t inferred = 0;
    for (double v : y) {
      if (v < 0.0 || v != std::floor(v)) {
        throw Error(ErrorKind::kInvalidArgument, "classification targets must be nonnegative integers");
      }
      inferred = std::max(inferred, static_cast<std::size_t>(v) + 1);
    }
    ctx.n_classes = n_classes == 0 ? inferred : n_classes;
    if (inferred > ctx.n_classes) throw Error(ErrorKind::kInvalidArgument, "class index exceeds n_classes");
  }
  ctx.mtry = resolve_mtry(spec.features_per_split, task, static_cast<std::size_t>(X.cols()));
  return ctx;
}

// Grows trees 0 .. count-1, calling after_tree(k) once k trees exist.
template <typename AfterTree>
ForestModel grow_forest(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task,
                        const ForestSpec& spec, const GrowContext& ctx, std::size_t count,
                        OobAccumulator& oob, AfterTree&& after_tree) {
  const auto n = static_cast<std::size_t>(X.rows());
  ForestModel model;
  model.task = task;
  model.n_classes = ctx.n_classes;
  model.n_features = static_cast<std::size_t>(X.cols());
  for (std::size_t t = 0; t < count; ++t) {
    std::mt19937_64 rng(tree_seed(spec.seed, t));
    std::uniform_int_distribution<std::uint32_t> draw(0, static_cast<std::uint32_t>(n - 1));
    std::vector<std::uint32_t> bag(n);
    std::vector<char> in_bag(n, 0);
    for (auto& s : bag) {
      s = draw(rng);
      in_bag[s] = 1;
    }
    std::sort(bag.begin(), bag.end());
    TreeBuilder builder(X, y, task, ctx.n_classes, spec, ctx.mtry, rng);
    model.trees.push_back(builder.build(std::move(bag)));

    std::size_t out = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      ++out;
      oob.add(i, model.trees.back().leaf_for(X.row(static_cast<Eigen::Index>(i))));
    }
    model.oob_fraction.push_back(static_cast<double>(out) / static_cast<double>(n));
    after_tree(model.trees.size(), model);
  }
  return model;
}

}  // namespace

const std::vector<double>& DecisionTree::leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    i = static_cast<std::size_t>(x(nodes[i].feature) <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  }
  return nodes[i].value;
}

std::uint64_t tree_seed(std::uint64_t root, std::size_t index) {
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ForestModel train_forest(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task,
                         const ForestSpec& spec, std::size_t n_classes) {
  const GrowContext ctx = validate(X, y, task, spec, n_classes);
  OobAccumulator oob(y.size(), task == ForestTask::kClassification ? ctx.n_classes : 1);
  ForestModel model = grow_forest(X, y, task, spec, ctx, spec.n_trees, oob, [](std::size_t, const ForestModel&) {});
  model.oob_score = oob.score(task, y);
  return model;
}

Eigen::MatrixXd predict_forest(const ForestModel& model, const Eigen::MatrixXd& X) {
  if (static_cast<std::size_t>(X.cols()) != model.n_features) {
    throw Error(ErrorKind::kInvalidArgument, "predict_forest: expected " + std::to_string(model.n_features) +
                                                 " features, got " + std::to_string(X.cols()));
  }
  if (model.trees.empty()) throw Error(ErrorKind::kInvalidArgument, "predict_forest: empty forest");
  const auto outputs = static_cast<Eigen::Index>(model.n_outputs());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(X.rows(), outputs);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (const DecisionTree& tree : model.trees) {
      const std::vector<double>& v = tree.leaf_for(X.row(i));
      for (Eigen::Index k = 0; k < outputs; ++k) out(i, k) += v[static_cast<std::size_t>(k)];
    }
  }
  out /= static_cast<double>(model.trees.size());
  return out;
}

std::vector<int> predict_forest_labels(const ForestModel& model, const Eigen::MatrixXd& X) {
  if (model.task != ForestTask::kClassification) {
    throw Error(ErrorKind::kInvalidArgument, "predict_forest_labels needs a classification forest");
  }
  return argmax_rows(predict_forest(model, X));
}

TreeCountSelection select_n_trees(const Eigen::MatrixXd& X, std::span<const double> y, ForestTask task,
                                  std::vector<std::size_t> grid, const ForestSpec& base_spec,
                                  std::size_t n_classes) {
  if (grid.empty()) throw Error(ErrorKind::kInvalidArgument, "select_n_trees: empty grid");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.front() < 1) throw Error(ErrorKind::kInvalidArgument, "select_n_trees: tree counts must be >= 1");

  ForestSpec spec = base_spec;
  spec.n_trees = grid.back();
  const GrowContext ctx = validate(X, y, task, spec, n_classes);
  OobAccumulator oob(y.size(), task == ForestTask::kClassification ? ctx.n_classes : 1);

  TreeCountSelection result;
  std::size_t next = 0;
  ForestModel full = grow_forest(X, y, task, spec, ctx, spec.n_trees, oob,
                                 [&](std::size_t count, const ForestModel&) {
                                   if (next < grid.size() && grid[next] == count) {
                                     result.oob_scores.emplace_back(count, oob.score(task, y));
                                     ++next;
                                   }
                                 });

  // NaN scores (never out of bag) lose to any real score.
  double best = -std::numeric_limits<double>::infinity();
  result.n_trees = grid.front();
  bool found = false;
  for (const auto& [count, score] : result.oob_scores) {
    if (!std::isnan(score) && (!found || score > best)) {
      best = score;
      result.n_trees = count;
      found = true;
    }
  }
  full.trees.resize(result.n_trees);
  full.oob_fraction.resize(result.n_trees);
  full.oob_score = found ? best : std::numeric_limits<double>::quiet_NaN();
  if (!found) {
    for (const auto& [count, score] : result.oob_scores) {
      if (count == result.n_trees) full.oob_score = score;
    }
  }
  result.model = std::move(full);
  return result;
}

std::vector<std::size_t> default_tree_grid() { return {10, 20, 50, 100, 200}; }

std::string serialize_forest(const ForestModel& model) {
  std::string out = "# forest\n";
  out += std::string("task=") + (model.task == ForestTask::kClassification ? "classification" : "regression") + "\n";
  out += "n_classes=" + std::to_string(model.n_classes) + "\n";
  out += "n_features=" + std::to_string(model.n_features) + "\n";
  out += "n_trees=" + std::to_string(model.trees.size()) + "\n";
  out += "oob_score=" + (std::isnan(model.oob_score) ? std::string("nan") : format_number(model.oob_score)) + "\n";
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    const auto& nodes = model.trees[t].nodes;
    out += "tree " + std::to_string(t) + " " + std::to_string(nodes.size()) + "\n";
    // Nodes are stored in preorder already (node, left subtree, right subtree).
    for (const auto& node : nodes) {
      if (node.feature >= 0) {
        out += "S " + std::to_string(node.feature) + " " + format_number(node.threshold) + "\n";
      } else {
        out += "L";
        for (double v : node.value) out += " " + format_number(v);
        out += "\n";
      }
    }
  }
  return out;
}

namespace {

std::int32_t parse_subtree(std::istringstream& in, DecisionTree& tree) {
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw Error(ErrorKind::kIo, "forest dump: truncated tree");
  std::istringstream fields(line);
  std::string tag;
  fields >> tag;
  const auto index = static_cast<std::int32_t>(tree.nodes.size());
  tree.nodes.push_back({});
  if (tag == "S") {
    std::string thr;
    int feature = -1;
    fields >> feature >> thr;
    tree.nodes[static_cast<std::size_t>(index)].feature = feature;
    tree.nodes[static_cast<std::size_t>(index)].threshold = parse_number(thr);
    const std::int32_t l = parse_subtree(in, tree);
    const std::int32_t r = parse_subtree(in, tree);
    tree.nodes[static_cast<std::size_t>(index)].left = l;
    tree.nodes[static_cast<std::size_t>(index)].right = r;
  } else if (tag == "L") {
    std::string v;
    while (fields >> v) tree.nodes[static_cast<std::size_t>(index)].value.push_back(parse_number(v));
  } else {
    throw Error(ErrorKind::kIo, "forest dump: bad node line '" + line + "'");
  }
  return index;
}

}  // namespace

ForestModel deserialize_forest(const std::string& text) {
  std::istringstream in(text);
  ForestModel model;
  std::string line;
  std::size_t n_trees = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (line.rfind("tree ", 0) == 0) {
      DecisionTree tree;
      parse_subtree(in, tree);
      model.trees.push_back(std::move(tree));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kIo, "forest dump: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "task") {
      model.task = value == "classification" ? ForestTask::kClassification : ForestTask::kRegression;
    } else if (key == "n_classes") {
      model.n_classes = std::stoul(value);
    } else if (key == "n_features") {
      model.n_features = std::stoul(value);
    } else if (key == "n_trees") {
      n_trees = std::stoul(value);
    } else if (key == "oob_score") {
      model.oob_score = value == "nan" ? std::numeric_limits<double>::quiet_NaN() : parse_number(value);
    }
  }
  if (model.trees.size() != n_trees) throw Error(ErrorKind::kIo, "forest dump: tree count mismatch");
  return model;
}

void save_forest(const std::string& path, const ForestModel& model) { write_text_file(path, serialize_forest(model)); }

ForestModel load_forest(const std::string& path) { return deserialize_forest(read_text_file(path)); }

}  // namespace affect
