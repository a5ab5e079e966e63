#include "affect/csv_io.hpp"
#include "affect/error.hpp"
#include "affect/pipeline.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>
#include <sstream>

using namespace affect;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("affect_pipe_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

json base_config(const TempDir& dir, const std::string& task) {
  return {{"task", task},
          {"seed", 3},
          {"out_dir", dir.file("runs")},
          {"data",
           {{"embeddings", dir.file("embeddings.csv")},
            {"labels", dir.file("labels.csv")},
            {"fps", dir.file("fps.csv")},
            {"splits", dir.file("splits.csv")},
            {"vad", dir.file("vad.csv")}}},
          {"kelm", {{"c_grid", {0.1, 1.0, 10.0}}}}};
}

SyntheticDataset write_synth(const TempDir& dir, Task task, double noise, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.task = task;
  spec.noise = noise;
  spec.seed = seed;
  spec.frames_per_video = 600;
  const SyntheticDataset data = synth_generate(spec);
  write_dataset(data, dir.path.string());
  return data;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInvalidArgument;
}

}  // namespace

TEST_CASE("config defaults") {
  const PipelineConfig c = PipelineConfig::from_json(json::object());
  CHECK(c.task == Task::kExpr);
  CHECK(c.fps_target == Fps(5));
  CHECK(c.window.seconds == 2.0);
  CHECK(c.window.hop_seconds == 2.0);
  CHECK(c.functionals.str() == "mean,max,min");
  CHECK(c.kelm.c_grid == default_c_grid());
  CHECK(c.postprocess.smooth_seconds == 0.5);
  CHECK(c.eval_splits == std::vector<std::string>{"dev", "test"});
}

TEST_CASE("config parsing, relative paths and rejection of unknown keys") {
  const json j = {{"task", "va"},
                  {"data", {{"labels", "l.csv"}}},
                  {"fps_target", "15/2"},
                  {"kelm", {{"gamma", 0.25}}},
                  {"fusion", {{"method", "dwf"}, {"base_models", {{{"name", "m"}, {"predictions", "p.csv"}, {"fps", 30}}}}}}};
  const PipelineConfig c = PipelineConfig::from_json(j, "/data/x");
  CHECK(c.task == Task::kVa);
  CHECK(c.data.labels == "/data/x/l.csv");
  CHECK(c.fps_target == Fps(15, 2));
  CHECK(c.kelm.gamma == "0.25");
  REQUIRE(c.fusion.base_models.size() == 1);
  CHECK(c.fusion.base_models[0].fps == Fps(30));
  CHECK(c.fusion.method == FusionMethod::kDwf);

  CHECK(kind_of([] { PipelineConfig::from_json({{"tsak", "expr"}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { PipelineConfig::from_json({{"window", {{"second", 2}}}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { PipelineConfig::from_json({{"task", "arousal"}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { PipelineConfig::from_json({{"normalization", "zscore"}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { PipelineConfig::from_json({{"window", {{"seconds", "two"}}}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { PipelineConfig::load("/nonexistent/affect.json"); }) == ErrorKind::kIo);
}

TEST_CASE("config hash ignores workers and out_dir only") {
  json j = {{"seed", 1}};
  const std::string h = PipelineConfig::from_json(j).hash();
  j["workers"] = 8;
  j["out_dir"] = "/elsewhere";
  CHECK(PipelineConfig::from_json(j).hash() == h);
  j["seed"] = 2;
  CHECK(PipelineConfig::from_json(j).hash() != h);
  CHECK(h.size() == 64);
}

TEST_CASE("synthetic data properties") {
  SyntheticSpec spec;
  spec.n_videos = 4;
  spec.frames_per_video = 100;
  spec.seed = 5;
  const SyntheticDataset e = synth_generate(spec);
  REQUIRE(e.embeddings.size() == 4);
  for (const auto& t : e.embeddings) CHECK(t.n_frames() == 100);
  CHECK(e.splits.at(e.embeddings[3].video_id()) == "test");
  CHECK(e.splits.at(e.embeddings[2].video_id()) == "dev");
  CHECK(e.splits.at(e.embeddings[0].video_id()) == "train");

  // Noise-free embeddings of different classes never coincide.
  std::map<int, Eigen::RowVectorXd> proto;
  for (std::size_t v = 0; v < e.embeddings.size(); ++v) {
    for (std::size_t i = 0; i < 100; ++i) {
      const int c = static_cast<int>(e.labels.tracks[v].values()(static_cast<Eigen::Index>(i), 0));
      const Eigen::RowVectorXd x = e.embeddings[v].values().row(static_cast<Eigen::Index>(i));
      const auto it = proto.find(c);
      if (it == proto.end()) proto.emplace(c, x);
      else CHECK(it->second == x);
    }
  }
  for (const auto& [a, xa] : proto)
    for (const auto& [b, xb] : proto)
      if (a != b) CHECK(xa != xb);

  spec.task = Task::kVa;
  const SyntheticDataset va = synth_generate(spec);
  for (const auto& t : va.labels.tracks) CHECK(t.values().cwiseAbs().maxCoeff() <= 1.0);
  const SyntheticDataset again = synth_generate(spec);
  CHECK(again.labels.tracks[1].values() == va.labels.tracks[1].values());
}

TEST_CASE("evaluating the truth against itself is perfect") {
  TempDir dir;
  for (Task task : {Task::kExpr, Task::kVa}) {
    write_synth(dir, task, 0.0);
    const EvalReport r = evaluate_files(dir.file("labels.csv"), dir.file("labels.csv"), task);
    CHECK(r.challenge_score() == doctest::Approx(1.0));
  }
  // The last file written holds VA labels.
  CHECK(kind_of([&] { evaluate_files(dir.file("labels.csv"), dir.file("labels.csv"), Task::kExpr); }) ==
        ErrorKind::kTaskMismatch);
}

TEST_CASE("evaluation joins on keys, not row order") {
  TempDir dir;
  write_synth(dir, Task::kVa, 0.0);
  const auto fps = fps_lookup(read_fps_csv(dir.file("fps.csv")));
  const LabelSet truth = read_label_csv(dir.file("labels.csv"), fps);
  std::vector<FrameTrack> pred;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.2);
  for (const auto& t : truth.tracks) {
    Eigen::MatrixXd v = t.values();
    for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) += Eigen::RowVector2d(g(rng), g(rng));
    pred.push_back(t.with_values(v.cwiseMax(-1.0).cwiseMin(1.0), TrackKind::kVa));
  }
  const double direct = evaluate_tracks(pred, truth, Task::kVa).ccc_mean;

  // Same rows, shuffled in the file.
  std::vector<std::string> lines;
  std::string text = track_csv_text(pred, {"valence", "arousal"});
  std::istringstream in(text);
  std::string header, line;
  std::getline(in, header);
  while (std::getline(in, line)) lines.push_back(line);
  std::shuffle(lines.begin(), lines.end(), rng);
  std::string shuffled = header + "\n";
  for (const auto& l : lines) shuffled += l + "\n";
  write_text_file(dir.file("pred.csv"), shuffled);
  CHECK(evaluate_files(dir.file("pred.csv"), dir.file("labels.csv"), Task::kVa).ccc_mean == doctest::Approx(direct).epsilon(1e-12));

  const std::vector<FrameTrack> elsewhere = {FrameTrack::contiguous("nobody", Fps(10), Eigen::MatrixXd::Zero(3, 2), TrackKind::kVa)};
  CHECK(kind_of([&] { evaluate_tracks(elsewhere, truth, Task::kVa); }) == ErrorKind::kAlignment);
}

TEST_CASE("mean fusion of one model equals interpolation followed by smoothing") {
  TempDir dir;
  const SyntheticDataset data = write_synth(dir, Task::kVa, 0.0);
  std::vector<FrameTrack> model;
  for (const auto& t : data.labels.tracks) {
    const FrameTrack at5 = resample_track(t.with_values(t.values() * 0.5, TrackKind::kVa), Fps(5));
    model.push_back(at5);
  }
  const auto timelines = timelines_from_tracks(data.labels.tracks);
  const auto aligned = align_to_timelines(model, timelines, Task::kVa);
  const auto fused = smooth_tracks(fuse_mean_stage({aligned}), SmoothingSpec{0.5});
  for (std::size_t v = 0; v < model.size(); ++v) {
    const FrameTrack direct = hamming_smooth(interpolate_to(model[v], timelines[v].fps, timelines[v].frames), SmoothingSpec{0.5});
    CHECK(fused[v].frames() == direct.frames());
    CHECK((fused[v].values() - direct.values()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("videos without predictions get zero scores on their timeline") {
  const std::vector<Timeline> tl = {{"a", Fps(10), {0, 1, 2}}, {"b", Fps(10), {4, 5}}};
  const std::vector<FrameTrack> preds = {FrameTrack::contiguous("a", Fps(5), Eigen::MatrixXd::Ones(2, 8), TrackKind::kClassScores)};
  const auto out = align_to_timelines(preds, tl, Task::kExpr);
  REQUIRE(out.size() == 2);
  CHECK(out[1].frames() == std::vector<std::int64_t>{4, 5});
  CHECK(out[1].values().isZero());
  CHECK(out[0].values().isOnes());
  CHECK(kind_of([&] { align_to_timelines(preds, tl, Task::kVa); }) == ErrorKind::kTaskMismatch);
}

TEST_CASE("windows and features from a synthetic run") {
  TempDir dir;
  write_synth(dir, Task::kExpr, 0.0);
  const PipelineConfig c = PipelineConfig::from_json(base_config(dir, "expr"));
  const PipelineInputs inputs = load_inputs(c);
  const WindowTable w = build_windows(inputs, c);
  CHECK(w.fps == Fps(5));
  // 600 frames at 10 fps -> 300 at 5 fps -> 30 windows of 10 frames per video.
  CHECK(w.windows.size() == 5 * 30);
  for (const auto& r : w.windows) CHECK(r.payload.rows() == 10);
  const FeatureTable f = compute_features(w, c.functionals);
  CHECK(f.rows.size() == w.windows.size());
  CHECK(f.rows[0].x.size() == 3 * 16);
  CHECK(f.rows[1].span_begin == 10);
  CHECK(f.rows[1].span_end == 20);

  // Text round trips are exact.
  write_text_file(dir.file("w.csv"), window_table_csv(w));
  CHECK(window_table_csv(read_window_table(dir.file("w.csv"))) == window_table_csv(w));
  write_text_file(dir.file("f.csv"), feature_table_csv(f));
  CHECK(feature_table_csv(read_feature_table(dir.file("f.csv"))) == feature_table_csv(f));
}

TEST_CASE("full run: separable EXPR data, deterministic manifest, key coverage") {
  TempDir dir;
  write_synth(dir, Task::kExpr, 0.0);
  const PipelineConfig c = PipelineConfig::from_json(base_config(dir, "expr"));
  const RunResult a = run_pipeline(c);
  const std::string manifest = read_text_file(a.manifest_path);
  CHECK(a.reports.at("test").macro_f1 > 0.95);
  const RunResult b = run_pipeline(c);
  CHECK(b.run_dir == a.run_dir);
  CHECK(read_text_file(b.manifest_path) == manifest);
  const json m = json::parse(manifest);
  CHECK(m.at("config_hash") == c.hash());
  CHECK(m.at("outputs").contains("predictions_test.csv"));

  const auto fps = fps_lookup(read_fps_csv(dir.file("fps.csv")));
  const LabelSet truth = read_label_csv(dir.file("labels.csv"), fps);
  const auto splits = read_split_csv(dir.file("splits.csv"));
  for (const std::string split : {"dev", "test"}) {
    const auto preds = read_track_csv((fs::path(a.run_dir) / ("predictions_" + split + ".csv")).string(), fps,
                                      TrackKind::kClassScores);
    std::set<std::pair<std::string, std::int64_t>> want, got;
    for (const auto& t : truth.tracks)
      if (splits.at(t.video_id()) == split)
        for (auto f : t.frames()) want.emplace(t.video_id(), f);
    for (const auto& t : preds)
      for (auto f : t.frames()) got.emplace(t.video_id(), f);
    CHECK(got == want);
  }
}

TEST_CASE("full run: VA with DWF over a noisy copy beats the copy alone") {
  TempDir dir;
  const SyntheticDataset data = write_synth(dir, Task::kVa, 0.05, 4);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.5);
  std::vector<FrameTrack> noisy;
  for (const auto& t : data.labels.tracks) {
    Eigen::MatrixXd v = t.values();
    for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) += Eigen::RowVector2d(g(rng), g(rng));
    noisy.push_back(t.with_values(v.cwiseMax(-1.0).cwiseMin(1.0), TrackKind::kVa));
  }
  write_track_csv(dir.file("noisy.csv"), noisy, {"valence", "arousal"});
  json j = base_config(dir, "va");
  j["window"] = {{"seconds", 4}, {"hop_seconds", 2}};
  j["fusion"] = {{"method", "dwf"}, {"pool_size", 200}, {"base_models", {{{"name", "noisy"}, {"predictions", dir.file("noisy.csv")}}}}};
  const RunResult r = run_pipeline(PipelineConfig::from_json(j));
  const json m = json::parse(read_text_file(r.manifest_path));
  CHECK(fs::exists(fs::path(r.run_dir) / "fusion_matrix.csv"));
  CHECK(fs::exists(fs::path(r.run_dir) / "timings.csv"));
  CHECK(r.reports.at("test").ccc_mean > 0.5);
  CHECK(m.at("outputs").contains("dwf_scores.csv"));
}

TEST_CASE("run errors carry the failing stage") {
  TempDir dir;
  write_synth(dir, Task::kExpr, 0.0);
  json j = base_config(dir, "va");
  try {
    run_pipeline(PipelineConfig::from_json(j));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTaskMismatch);
  }
  j = base_config(dir, "expr");
  j["kelm"]["enabled"] = false;
  CHECK(kind_of([&] { run_pipeline(PipelineConfig::from_json(j)); }) == ErrorKind::kConfig);
}
