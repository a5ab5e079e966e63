// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. argv[1] is the affect CLI binary used by the end-to-end check.

#include "affect/csv_io.hpp"
#include "affect/error.hpp"
#include "affect/forest.hpp"
#include "affect/fusion.hpp"
#include "affect/kelm.hpp"
#include "affect/metrics.hpp"
#include "affect/timeline.hpp"
#include "affect/windowing.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include <unistd.h>

using namespace affect;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

// ---- independent oracles ----

double ccc_direct(const std::vector<double>& t, const std::vector<double>& p) {
  long double mt = 0, mp = 0;
  const auto n = static_cast<long double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    mt += t[i];
    mp += p[i];
  }
  mt /= n;
  mp /= n;
  long double vt = 0, vp = 0, c = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    vt += (t[i] - mt) * (t[i] - mt);
    vp += (p[i] - mp) * (p[i] - mp);
    c += (t[i] - mt) * (p[i] - mp);
  }
  vt /= n;
  vp /= n;
  c /= n;
  return static_cast<double>(2 * c / (vt + vp + (mt - mp) * (mt - mp)));
}

double macro_f1_direct(const std::vector<int>& t, const std::vector<int>& p, int k) {
  double sum = 0;
  for (int c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == c && p[i] == c;
      fp += t[i] != c && p[i] == c;
      fn += t[i] == c && p[i] != c;
    }
    sum += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return sum / k;
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

// Three base models with decreasing reliability on 8-class or VA targets.
void dev_set(std::uint64_t seed, bool va, std::size_t n, std::vector<Eigen::MatrixXd>& preds, DevTargets& truth) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::normal_distribution<double> g;
  preds.clear();
  if (!va) {
    truth.labels.resize(n);
    for (auto& l : truth.labels) l = static_cast<int>(rng() % 8);
    for (double q : {0.6, 0.45, 0.3}) {
      Eigen::MatrixXd p(static_cast<Eigen::Index>(n), 8);
      for (std::size_t i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < 8; ++k) p(static_cast<Eigen::Index>(i), k) = u(rng);
        if (u(rng) < q) p(static_cast<Eigen::Index>(i), truth.labels[i]) += 1.0;
      }
      preds.push_back(p);
    }
    return;
  }
  truth.values.resize(static_cast<Eigen::Index>(n), 2);
  double v = 0, a = 0;
  for (std::size_t i = 0; i < n; ++i) {
    v = std::clamp(v + 0.1 * g(rng), -1.0, 1.0);
    a = std::clamp(a + 0.1 * g(rng), -1.0, 1.0);
    truth.values.row(static_cast<Eigen::Index>(i)) << v, a;
  }
  for (double s : {0.2, 0.4, 0.7}) {
    Eigen::MatrixXd p = truth.values + s * gaussian(rng, static_cast<Eigen::Index>(n), 2);
    preds.push_back(p.cwiseMax(-1.0).cwiseMin(1.0));
  }
}

// ---- criteria ----

Outcome ccc_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 2 + rng() % 499;
    std::vector<double> t(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = u(rng);
      p[i] = rep % 3 == 0 ? 0.5 * t[i] + 0.3 * u(rng) : u(rng);
    }
    worst = std::max(worst, std::abs(ccc(t, p).ccc - ccc_direct(t, p)));
  }
  const std::vector<double> s = {1, 2, 3, 4, 5}, r = {5, 4, 3, 2, 1};
  const std::vector<double> a = {1, -1, 1, -1}, b = {1, 1, -1, -1};
  const double h1 = ccc(s, s).ccc, h2 = ccc(s, r).ccc, h0 = ccc(a, b).ccc;
  const bool hand = std::abs(h1 - 1.0) < 1e-12 && std::abs(h2 + 1.0) < 1e-12 && std::abs(h0) < 1e-12;
  return {worst < 1e-10 && hand, "max |delta| " + fmt(worst) + ", hand cases " + fmt(h1) + "/" + fmt(h2) + "/" + fmt(h0)};
}

Outcome score_arithmetic() {
  const double a = challenge_score_va(0.523, 0.626), b = challenge_score_va(0.398, 0.581);
  const std::string sa = format_score(a, 3), sb = format_score(b, 3);
  const bool ok = std::abs(a - 0.5745) < 1e-12 && std::abs(b - 0.4895) < 1e-12 && sa == "0.574" && sb == "0.489";
  return {ok, "0.5745 -> " + sa + ", 0.4895 -> " + sb};
}

Outcome kelm_solver() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> logc(-3, 3);
  double worst_res = 0, worst_primal = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng() % 49), d = 1 + static_cast<Eigen::Index>(rng() % 10);
    const Eigen::MatrixXd X = gaussian(rng, n, d);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& l : y) l = static_cast<int>(rng() % 3);
    const Eigen::MatrixXd T = encode_targets(y, 3);
    const double C = std::pow(10.0, logc(rng));
    const KernelKind kind = rep % 2 == 0 ? KernelKind::kLinear : KernelKind::kRbf;
    const bool weighted = (rep / 2) % 2 == 1;
    const Eigen::VectorXd w = weighted ? class_weights(y) : Eigen::VectorXd::Ones(n);
    const KelmModel m = train_kelm(X, T, C, {kind, std::nullopt}, KelmTask::kClassification,
                                   weighted ? std::optional<Eigen::VectorXd>(w) : std::nullopt);
    Eigen::MatrixXd K(n, n);
    const double gamma = 1.0 / static_cast<double>(d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        K(i, j) = kind == KernelKind::kLinear ? X.row(i).dot(X.row(j)) : std::exp(-gamma * (X.row(i) - X.row(j)).squaredNorm());
      }
    }
    const Eigen::MatrixXd res = (Eigen::MatrixXd::Identity(n, n) / C + w.asDiagonal() * K) * m.beta - w.asDiagonal() * T;
    worst_res = std::max(worst_res, res.cwiseAbs().maxCoeff());
    if (kind == KernelKind::kLinear) {
      const Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
      const Eigen::MatrixXd primal = (XtW * X + Eigen::MatrixXd::Identity(d, d) / C).colPivHouseholderQr().solve(XtW * T);
      const Eigen::MatrixXd Xq = gaussian(rng, 10, d);
      worst_primal = std::max(worst_primal, (predict_kelm(m, Xq).scores - Xq * primal).cwiseAbs().maxCoeff());
    }
  }
  return {worst_res < 1e-8 && worst_primal < 1e-6,
          "max residual " + fmt(worst_res) + ", max primal gap " + fmt(worst_primal)};
}

Outcome weighted_kelm() {
  int wins = 0;
  double sum_w = 0, sum_u = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::normal_distribution<double> g;
    auto draw = [&](Eigen::MatrixXd& X, std::vector<int>& y) {
      X.resize(500, 2);
      y.assign(500, 0);
      for (Eigen::Index i = 0; i < 500; ++i) {
        const int c = i < 450 ? 0 : 1;
        X.row(i) << g(rng) + 1.5 * c, g(rng);
        y[static_cast<std::size_t>(i)] = c;
      }
    };
    Eigen::MatrixXd X, Xt;
    std::vector<int> y, yt;
    draw(X, y);
    draw(Xt, yt);
    const Eigen::MatrixXd T = encode_targets(y, 2);
    auto recall = [&](const KelmModel& m) {
      const auto p = predict_kelm(m, Xt).labels;
      double hit = 0;
      for (std::size_t i = 450; i < 500; ++i) hit += p[i] == 1;
      return hit / 50.0;
    };
    const double u = recall(train_kelm(X, T, 1.0, {}, KelmTask::kClassification));
    const double w = recall(train_kelm(X, T, 1.0, {}, KelmTask::kClassification, class_weights(y)));
    wins += w >= u;
    sum_w += w;
    sum_u += u;
  }
  return {wins >= 18, std::to_string(wins) + "/20 seeds, mean minority recall " + fmt(sum_w / 20) + " weighted vs " +
                          fmt(sum_u / 20) + " unweighted"};
}

Outcome dwf_dominance() {
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  int held = 0;
  double min_margin = 1e9;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const bool va = seed % 2 == 1;
    std::vector<Eigen::MatrixXd> preds;
    DevTargets truth;
    dev_set(seed, va, 400, preds, truth);
    const DevMetric metric = va ? DevMetric::kMeanCcc : DevMetric::kMacroF1;
    const std::size_t k = va ? 2 : 8;
    const DwfResult r = dwf_search(sample_pool(3, k, 10000, 1.0, seed), preds, truth, metric, workers);
    double best_single = -1e9;
    for (const auto& p : preds) best_single = std::max(best_single, score_predictions(p, truth, metric, k));
    held += r.dev_score >= best_single;
    min_margin = std::min(min_margin, r.dev_score - best_single);
  }
  return {held == 10, std::to_string(held) + "/10 dev sets, smallest margin over best single model " + fmt(min_margin)};
}

Outcome dwf_brute_force() {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
  dev_set(77, false, 200, preds, truth);
  const FusionPool pool = sample_pool(3, 8, 47, 1.0, 5);  // 47 random + 3 selectors
  std::size_t best = 0;
  double best_score = -1;
  for (std::size_t i = 0; i < pool.matrices.size(); ++i) {
    const Eigen::MatrixXd& w = pool.matrices[i].weights();
    std::vector<int> arg(truth.labels.size());
    for (std::size_t t = 0; t < arg.size(); ++t) {
      double top = -1e300;
      for (int k = 0; k < 8; ++k) {
        double s = 0;
        for (int m = 0; m < 3; ++m) s += w(m, k) * preds[static_cast<std::size_t>(m)](static_cast<Eigen::Index>(t), k);
        if (s > top) {
          top = s;
          arg[t] = k;
        }
      }
    }
    const double f = macro_f1_direct(truth.labels, arg, 8);
    if (f > best_score + 1e-12) {
      best_score = f;
      best = i;
    }
  }
  const DwfResult r = dwf_search(pool, preds, truth, DevMetric::kMacroF1, 2);
  return {pool.matrices.size() == 50 && r.best_index == best,
          "pool 50, library winner " + std::to_string(r.best_index) + " vs exhaustive " + std::to_string(best) +
              " (F1 " + fmt(best_score) + ")"};
}

Outcome windowing_counts() {
  Eigen::MatrixXd emb(50, 3), lab(50, 1), va(50, 2);
  for (Eigen::Index i = 0; i < 50; ++i) {
    emb.row(i) << i, 2 * i, 3 * i;
    lab(i, 0) = static_cast<double>((i / 5) % 8);
    va.row(i) << i / 50.0, -i / 50.0;
  }
  const FrameTrack t = FrameTrack::contiguous("v", Fps(5), emb, TrackKind::kEmbedding);
  const WindowBatch b = slice_windows(t, WindowSpec{4.0, 2.0, Fps(5)}, std::vector<Segment>{{0, 50}});
  const WindowBatch e = reduce_expr_targets(FrameTrack::contiguous("v", Fps(5), lab, TrackKind::kLabel), b);
  const WindowBatch v = reduce_va_targets(FrameTrack::contiguous("v", Fps(5), va, TrackKind::kVa), b);
  bool ok = b.size() == 4;
  for (std::size_t w = 0; ok && w < b.size(); ++w) {
    ok = b.payload[w].rows() == 20 && (*e.expr_targets)[w].size() == 4 && (*v.va_targets)[w].rows() == 20 &&
         (*v.va_targets)[w].cols() == 2;
  }
  return {ok, std::to_string(b.size()) + " windows of " + std::to_string(b.size() ? b.payload[0].rows() : 0) +
                  " frames, 4 labels and a 20x2 target each"};
}

Outcome postprocess_invariants() {
  const SmoothingSpec spec{0.5};
  const auto h = hamming_window(spec.window_frames(Fps(5)));
  bool ok = h.size() == 3 && std::abs(h[0] - 0.08) < 1e-12 && std::abs(h[1] - 1.0) < 1e-12 && std::abs(h[2] - 0.08) < 1e-12;

  const FrameTrack c = FrameTrack::contiguous("c", Fps(5), Eigen::MatrixXd::Constant(20, 2, 0.37), TrackKind::kVa);
  ok = ok && hamming_smooth(c, spec).values() == c.values();

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  Eigen::MatrixXd x(60, 2);
  for (Eigen::Index i = 0; i < 60; ++i) x.row(i) << u(rng), u(rng);
  const Eigen::MatrixXd s = hamming_smooth(FrameTrack::contiguous("r", Fps(5), x, TrackKind::kVa), spec).values();
  for (Eigen::Index j = 0; j < 2; ++j) {
    ok = ok && s.col(j).minCoeff() >= x.col(j).minCoeff() && s.col(j).maxCoeff() <= x.col(j).maxCoeff();
  }

  Eigen::MatrixXd step(5, 1);
  step << 1, 0, 0, 0, 0;
  const double edge = hamming_smooth(FrameTrack::contiguous("e", Fps(5), step, TrackKind::kClassScores), spec).values()(0, 0);
  ok = ok && std::abs(edge - 0.9310) < 1e-4;

  const FrameTrack knots("k", Fps(5), {0, 3, 7}, (Eigen::MatrixXd(3, 1) << 0.1, 0.7, -0.3).finished(), TrackKind::kClassScores);
  const FrameTrack at = interpolate_to(knots, Fps(5), std::vector<std::int64_t>{0, 3, 7});
  ok = ok && at.values() == knots.values();
  return {ok, "N=3 weights 0.08/1/0.08, constant preserved, envelope kept, edge " + fmt(edge, 5) + ", knots exact"};
}

void stacked(std::uint64_t seed, std::size_t n, Eigen::MatrixXd& X, std::vector<double>& y) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gam(1.0, 1.0);
  std::uniform_real_distribution<double> u(0, 1);
  X.resize(static_cast<Eigen::Index>(n), 24);
  y.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng() % 8);
    y[i] = c;
    for (int m = 0; m < 3; ++m) {
      Eigen::VectorXd p(8);
      for (int k = 0; k < 8; ++k) p(k) = gam(rng);
      if (u(rng) < 0.45) p(c) += 2.0;
      X.row(static_cast<Eigen::Index>(i)).segment(8 * m, 8) = (p / p.sum()).transpose();
    }
  }
}

Outcome forest_properties() {
  double lo = 1, hi = 0;
  bool determinism = true;
  int gaps = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Eigen::MatrixXd X;
    std::vector<double> y;
    stacked(seed, 1000, X, y);
    ForestSpec spec;
    spec.n_trees = 10;
    spec.seed = seed;
    const ForestModel a = train_forest(X, y, ForestTask::kClassification, spec, 8);
    for (double f : a.oob_fraction) {
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
    const ForestModel b = train_forest(X, y, ForestTask::kClassification, spec, 8);
    determinism = determinism && serialize_forest(a) == serialize_forest(b) && predict_forest(a, X) == predict_forest(b, X);
    const auto pred = predict_forest_labels(a, X);
    double ok = 0;
    for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == static_cast<int>(y[i]);
    gaps += ok / static_cast<double>(y.size()) - a.oob_score > 0.0;
  }
  const bool pass = lo >= 0.33 && hi <= 0.41 && determinism && gaps == 10;
  return {pass, "oob fraction in [" + fmt(lo) + ", " + fmt(hi) + "], retrain " + (determinism ? "identical" : "differs") +
                    ", train > oob in " + std::to_string(gaps) + "/10 seeds"};
}

std::string slurp(const fs::path& p) {
  try {
    return read_text_file(p.string());
  } catch (const Error&) {
    return {};
  }
}

Outcome end_to_end(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI binary given"};
  const fs::path work = fs::temp_directory_path() / ("affect_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string q = "'" + cli + "'";
  const std::string data = (work / "data").string();
  auto sh = [&](const std::string& cmd) { return std::system((cmd + " > '" + (work / "log.txt").string() + "' 2>&1").c_str()); };
  if (sh(q + " synth --videos 5 --frames 600 --noise 0 --seed 11 --out-dir '" + data + "'") != 0) {
    return {false, "synth failed: " + slurp(work / "log.txt")};
  }
  write_text_file((work / "run.json").string(),
                  "{\n  \"task\": \"expr\",\n  \"seed\": 11,\n  \"data\": {\n"
                  "    \"embeddings\": \"data/embeddings.csv\",\n    \"labels\": \"data/labels.csv\",\n"
                  "    \"fps\": \"data/fps.csv\",\n    \"splits\": \"data/splits.csv\"\n  }\n}\n");
  std::string manifests[2];
  double f1 = -1;
  for (int i = 0; i < 2; ++i) {
    const fs::path out = work / ("out" + std::to_string(i));
    if (sh(q + " run --config '" + (work / "run.json").string() + "' --out-dir '" + out.string() + "'") != 0) {
      return {false, "run failed: " + slurp(work / "log.txt")};
    }
    for (const auto& entry : fs::directory_iterator(out)) {
      manifests[i] = slurp(entry.path() / "manifest.json");
      if (i == 0) {
        std::istringstream report(slurp(entry.path() / "report_test.csv"));
        std::string line;
        while (std::getline(report, line)) {
          if (line.rfind("macro_f1,", 0) == 0) f1 = parse_number(line.substr(9));
        }
      }
    }
  }
  fs::remove_all(work);
  const bool same = !manifests[0].empty() && manifests[0] == manifests[1];
  return {f1 > 0.95 && same, "test macro_f1 " + fmt(f1) + ", manifests " + (same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "CCC oracle equivalence", 5, ccc_oracle},
      {2, "challenge score arithmetic", 1, score_arithmetic},
      {3, "KELM solver oracle", 10, kelm_solver},
      {4, "weighted KELM imbalance benefit", 30, weighted_kelm},
      {5, "DWF dominance over single models", 60, dwf_dominance},
      {6, "DWF brute-force agreement", 5, dwf_brute_force},
      {7, "windowing counts", 1, windowing_counts},
      {8, "post-processing invariants", 1, postprocess_invariants},
      {9, "forest properties", 60, forest_properties},
      {10, "end-to-end synthetic pipeline", 60, [&] { return end_to_end(cli); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.limit_s;
    failed += !pass;
    std::printf("%s %2d %s: %s [%.2fs, limit %.0fs]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.limit_s);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
