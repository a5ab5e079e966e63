#include "affect/csv_io.hpp"
#include "affect/error.hpp"
#include "affect/fusion.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace affect;

namespace {

// Three base models of varying quality over n frames: EXPR scores whose
// argmax is correct with probability `quality[m]`.
void expr_dev_set(std::uint64_t seed, std::size_t n, std::vector<Eigen::MatrixXd>& preds, DevTargets& truth) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, 7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double quality[3] = {0.7, 0.5, 0.3};
  truth.labels.resize(n);
  for (auto& l : truth.labels) l = cls(rng);
  preds.assign(3, Eigen::MatrixXd(static_cast<Eigen::Index>(n), 8));
  for (int m = 0; m < 3; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = preds[static_cast<std::size_t>(m)].row(static_cast<Eigen::Index>(i));
      for (Eigen::Index k = 0; k < 8; ++k) row(k) = u(rng);
      if (u(rng) < quality[m]) row(truth.labels[i]) += 1.0;
    }
  }
}

void va_dev_set(std::uint64_t seed, std::size_t n, std::vector<Eigen::MatrixXd>& preds, DevTargets& truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  truth.values.resize(static_cast<Eigen::Index>(n), 2);
  double v = 0, a = 0;
  for (Eigen::Index i = 0; i < truth.values.rows(); ++i) {
    v = std::clamp(v + 0.1 * g(rng), -1.0, 1.0);
    a = std::clamp(a + 0.1 * g(rng), -1.0, 1.0);
    truth.values.row(i) << v, a;
  }
  preds.clear();
  for (double noise : {0.1, 0.3, 0.6}) {
    Eigen::MatrixXd p = truth.values;
    for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) += Eigen::RowVector2d(noise * g(rng), noise * g(rng));
    preds.push_back(p.cwiseMax(-1.0).cwiseMin(1.0));
  }
}

FrameTrack scores_track(const std::string& id, const Eigen::MatrixXd& v) {
  return FrameTrack::contiguous(id, Fps(5), v, TrackKind::kClassScores);
}

}  // namespace

TEST_CASE("pool with one model is all ones") {
  const FusionPool pool = sample_pool(1, 8, 20, 1.0, 3);
  REQUIRE(pool.matrices.size() == 21);
  for (const auto& m : pool.matrices) CHECK(m.weights() == Eigen::MatrixXd::Ones(1, 8));
}

TEST_CASE("pool columns lie on the simplex and selectors come last") {
  for (double alpha : {0.1, 1.0, 5.0}) {
    const FusionPool pool = sample_pool(3, 8, 200, alpha, 11);
    REQUIRE(pool.matrices.size() == 203);
    for (const auto& m : pool.matrices) {
      CHECK(m.weights().minCoeff() >= 0.0);
      for (Eigen::Index k = 0; k < 8; ++k) CHECK(std::abs(m.weights().col(k).sum() - 1.0) < 1e-12);
    }
    for (std::size_t s = 0; s < 3; ++s) CHECK(pool.matrices[200 + s].weights() == FusionMatrix::selector(3, 8, s).weights());
  }
  CHECK(sample_pool(3, 2, 10, 1.0, 0, false).matrices.size() == 10);
  CHECK_THROWS_AS(sample_pool(3, 2, 10, 0.0, 0), Error);
  CHECK_THROWS_AS(sample_pool(0, 2, 10, 1.0, 0), Error);
}

TEST_CASE("Dirichlet(1) columns have mean 1/M") {
  const FusionPool pool = sample_pool(4, 2, 5000, 1.0, 2, false);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(4, 2);
  for (const auto& m : pool.matrices) mean += m.weights();
  mean /= 5000.0;
  CHECK((mean.array() - 0.25).abs().maxCoeff() < 0.01);
}

TEST_CASE("pool sampling is seed-deterministic") {
  const FusionPool a = sample_pool(3, 8, 50, 1.0, 99);
  const FusionPool b = sample_pool(3, 8, 50, 1.0, 99);
  const FusionPool c = sample_pool(3, 8, 50, 1.0, 100);
  for (std::size_t i = 0; i < a.matrices.size(); ++i) CHECK(a.matrices[i].weights() == b.matrices[i].weights());
  CHECK(a.matrices[0].weights() != c.matrices[0].weights());
}

TEST_CASE("fusion matrices must be column-stochastic") {
  CHECK_THROWS_AS(FusionMatrix((Eigen::MatrixXd(2, 1) << 0.5, 0.6).finished()), Error);
  CHECK_THROWS_AS(FusionMatrix((Eigen::MatrixXd(2, 1) << 1.5, -0.5).finished()), Error);
  CHECK(FusionMatrix::uniform(4, 2).weights().isApproxToConstant(0.25));
}

TEST_CASE("apply_fusion hand cases") {
  Eigen::MatrixXd w(2, 2);
  w << 0.4, 0.7, 0.6, 0.3;
  const std::vector<Eigen::MatrixXd> preds = {Eigen::RowVector2d(1, 0), Eigen::RowVector2d(0, 1)};
  const Eigen::MatrixXd f = apply_fusion(preds, FusionMatrix(w));
  CHECK(f(0, 0) == doctest::Approx(0.4));
  CHECK(f(0, 1) == doctest::Approx(0.3));

  std::mt19937_64 rng(1);
  std::vector<Eigen::MatrixXd> many;
  for (int m = 0; m < 3; ++m) many.push_back(Eigen::MatrixXd::Random(10, 8));
  for (std::size_t s = 0; s < 3; ++s) CHECK(apply_fusion(many, FusionMatrix::selector(3, 8, s)) == many[s]);

  const std::vector<Eigen::MatrixXd> same(3, many[0]);
  const FusionPool pool = sample_pool(3, 8, 10, 1.0, 4, false);
  for (const auto& m : pool.matrices) CHECK((apply_fusion(same, m) - many[0]).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<Eigen::MatrixXd> big = {Eigen::RowVector2d(3, -3)};
  CHECK(apply_fusion(big, FusionMatrix::uniform(1, 2), true) == Eigen::RowVector2d(1, -1));
}

TEST_CASE("fused values stay within the per-entry model envelope") {
  std::mt19937_64 rng(6);
  std::vector<Eigen::MatrixXd> preds;
  for (int m = 0; m < 4; ++m) preds.push_back(Eigen::MatrixXd::Random(30, 2));
  Eigen::MatrixXd lo = preds[0], hi = preds[0];
  for (const auto& p : preds) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  for (const auto& m : sample_pool(4, 2, 100, 0.5, 7).matrices) {
    const Eigen::MatrixXd f = apply_fusion(preds, m);
    CHECK((f - lo).minCoeff() >= -1e-12);
    CHECK((hi - f).minCoeff() >= -1e-12);
  }
}

TEST_CASE("scaling every model by a positive constant keeps the fused argmax") {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  expr_dev_set(3, 100, preds, truth);
  std::vector<Eigen::MatrixXd> scaled;
  for (const auto& p : preds) scaled.push_back(2.5 * p);
  for (const auto& m : sample_pool(3, 8, 20, 1.0, 5).matrices)
    CHECK(argmax_rows(apply_fusion(preds, m)) == argmax_rows(apply_fusion(scaled, m)));
}

TEST_CASE("misaligned inputs are rejected") {
  const std::vector<Eigen::MatrixXd> rows = {Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(4, 2)};
  CHECK_THROWS_AS(apply_fusion(rows, FusionMatrix::uniform(2, 2)), Error);
  const std::vector<Eigen::MatrixXd> two = {Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(3, 2)};
  CHECK_THROWS_AS(apply_fusion(two, FusionMatrix::uniform(3, 2)), Error);

  const FrameTrack a = scores_track("v", Eigen::MatrixXd::Zero(5, 8));
  const FrameTrack b = scores_track("v", Eigen::MatrixXd::Zero(5, 8)).with_values(Eigen::MatrixXd::Zero(5, 8), TrackKind::kClassScores);
  const FrameTrack shifted = FrameTrack::contiguous("v", Fps(5), Eigen::MatrixXd::Zero(5, 8), TrackKind::kClassScores, 1);
  CHECK_NOTHROW(check_aligned({a, b}));
  try {
    check_aligned({a, shifted});
    FAIL("expected an alignment error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kAlignment);
    CHECK(std::string(e.what()).find("'v'") != std::string::npos);
  }
  CHECK_THROWS_AS(check_aligned({a, scores_track("w", Eigen::MatrixXd::Zero(5, 8))}), Error);
}

TEST_CASE("DWF with a single selector returns it") {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  expr_dev_set(1, 200, preds, truth);
  FusionPool pool;
  pool.matrices = {FusionMatrix::selector(3, 8, 1)};
  const DwfResult r = dwf_search(pool, preds, truth, DevMetric::kMacroF1);
  CHECK(r.best_index == 0);
  CHECK(r.dev_score == score_predictions(preds[1], truth, DevMetric::kMacroF1, 8));
}

TEST_CASE("DWF never scores below the best single model when selectors are pooled") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<Eigen::MatrixXd> preds;
    DevTargets truth;
    expr_dev_set(seed, 300, preds, truth);
    const DwfResult r = dwf_search(sample_pool(3, 8, 300, 1.0, seed), preds, truth, DevMetric::kMacroF1, 2);
    for (const auto& p : preds) CHECK(r.dev_score >= score_predictions(p, truth, DevMetric::kMacroF1, 8));

    va_dev_set(seed, 300, preds, truth);
    const DwfResult v = dwf_search(sample_pool(3, 2, 300, 1.0, seed), preds, truth, DevMetric::kMeanCcc, 2);
    for (const auto& p : preds) CHECK(v.dev_score >= score_predictions(p, truth, DevMetric::kMeanCcc, 0));
  }
}

TEST_CASE("DWF agrees with exhaustive scoring of a fixed pool, ties to the earliest") {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  expr_dev_set(8, 150, preds, truth);
  FusionPool pool = sample_pool(3, 8, 5, 1.0, 21, false);
  pool.matrices.push_back(pool.matrices[2]);  // duplicate of an earlier entry
  std::size_t best = 0;
  double best_score = -1;
  for (std::size_t i = 0; i < pool.matrices.size(); ++i) {
    const Eigen::MatrixXd f = apply_fusion(preds, pool.matrices[i]);
    const double s = classification_report(truth.labels, argmax_rows(f), 8).macro_f1;
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  for (std::size_t workers : {1u, 3u}) {
    const DwfResult r = dwf_search(pool, preds, truth, DevMetric::kMacroF1, workers);
    CHECK(r.best_index == best);
    CHECK(r.dev_score == best_score);
    CHECK(r.scores[5] == r.scores[2]);
  }
}

TEST_CASE("DWF score tables do not depend on the worker count") {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  va_dev_set(2, 200, preds, truth);
  const FusionPool pool = sample_pool(3, 2, 500, 1.0, 3);
  const std::string one = score_table_csv(dwf_search(pool, preds, truth, DevMetric::kMeanCcc, 1));
  CHECK(score_table_csv(dwf_search(pool, preds, truth, DevMetric::kMeanCcc, 4)) == one);
  CHECK(one.rfind("pool_index,score\n", 0) == 0);
}

TEST_CASE("mean fusion examples") {
  const FrameTrack a = FrameTrack::contiguous("v", Fps(5), Eigen::RowVector2d(0.2, -0.4), TrackKind::kVa);
  const FrameTrack b = FrameTrack::contiguous("v", Fps(5), Eigen::RowVector2d(0.6, 0.0), TrackKind::kVa);
  const FrameTrack m = mean_fusion({a, b});
  CHECK(m.values()(0, 0) == doctest::Approx(0.4));
  CHECK(m.values()(0, 1) == doctest::Approx(-0.2));
  CHECK(mean_fusion({a}).values() == a.values());
  CHECK(apply_fusion(std::vector<FrameTrack>{a, b}, FusionMatrix::uniform(2, 2)).values().isApprox(m.values()));
}

TEST_CASE("stacking concatenates model outputs column-wise") {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  expr_dev_set(4, 20, preds, truth);
  const Eigen::MatrixXd s = stack_features(preds);
  CHECK(s.cols() == 24);
  CHECK(s.middleCols(8, 8) == preds[1]);
}

TEST_CASE("RF stacking fits EXPR and VA and reports the overfitting gap") {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  expr_dev_set(5, 300, preds, truth);
  ForestSpec spec;
  spec.seed = 3;
  const RfFusionModel e = fit_rf_fusion(preds, truth, Task::kExpr, {10, 20}, spec);
  REQUIRE(e.forests.size() == 1);
  const Eigen::MatrixXd p = apply_rf_fusion(e, preds);
  CHECK(p.cols() == 8);
  CHECK(e.fit_oob_units > e.oob_score);
  CHECK(e.fit_score == classification_report(truth.labels, argmax_rows(p), 8).macro_f1);

  va_dev_set(5, 200, preds, truth);
  const RfFusionModel v = fit_rf_fusion(preds, truth, Task::kVa, {10}, spec);
  CHECK(v.forests.size() == 2);
  const Eigen::MatrixXd q = apply_rf_fusion(v, preds);
  CHECK(q.cols() == 2);
  CHECK(q.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(v.oob_score <= 0.0);

  DevTargets short_truth;
  short_truth.labels = {0, 1};
  CHECK_THROWS_AS(fit_rf_fusion(preds, short_truth, Task::kExpr, {10}, spec), Error);
}

TEST_CASE("fusion matrix csv round trip") {
  const FusionMatrix m = sample_pool(3, 2, 1, 1.0, 12, false).matrices[0];
  const auto path = (std::filesystem::temp_directory_path() / "affect_fusion_matrix.csv").string();
  write_text_file(path, fusion_matrix_csv(m, {"a", "b", "c"}, {"valence", "arousal"}));
  CHECK(read_text_file(path).rfind("model,valence,arousal\na,", 0) == 0);
  CHECK(read_fusion_matrix_csv(path).weights() == m.weights());
  std::filesystem::remove(path);
}
