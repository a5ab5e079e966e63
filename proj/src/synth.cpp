#include "affect/synth.hpp"

#include "affect/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

namespace affect {
namespace {

std::string video_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "vid%03zu", i);
  return buf;
}

void validate(const SyntheticSpec& spec) {
  if (spec.n_videos < 1 || spec.frames_per_video < 1 || spec.embedding_dim < 1) {
    throw Error(ErrorKind::kInvalidArgument, "synthetic sizes must be positive");
  }
  if (spec.noise < 0.0) throw Error(ErrorKind::kInvalidArgument, "noise must be nonnegative");
  if (spec.task == Task::kExpr) {
    if (spec.n_classes < 1 || spec.n_classes > kExprClasses) {
      throw Error(ErrorKind::kInvalidArgument, "class count must be in 1..8");
    }
    if (!spec.class_priors.empty()) {
      if (spec.class_priors.size() != spec.n_classes) {
        throw Error(ErrorKind::kInvalidArgument, "need one prior per class");
      }
      const double total = std::accumulate(spec.class_priors.begin(), spec.class_priors.end(), 0.0);
      if (std::abs(total - 1.0) > 1e-9 ||
          std::any_of(spec.class_priors.begin(), spec.class_priors.end(), [](double p) { return p < 0.0; })) {
        throw Error(ErrorKind::kInvalidArgument, "class priors must be nonnegative and sum to 1");
      }
    }
    if (!(spec.segment_quantum_seconds > 0.0) || spec.segment_min_seconds > spec.segment_max_seconds) {
      throw Error(ErrorKind::kInvalidArgument, "bad segment length range");
    }
  }
}

// Latent class per frame, built from runs of whole quanta.
std::vector<int> class_runs(const SyntheticSpec& spec, std::mt19937_64& rng) {
  const std::int64_t quantum = std::max<std::int64_t>(1, frames_for(spec.segment_quantum_seconds, spec.fps));
  const auto min_q = std::max<std::int64_t>(1, std::llround(spec.segment_min_seconds / spec.segment_quantum_seconds));
  const auto max_q = std::max<std::int64_t>(min_q, std::llround(spec.segment_max_seconds / spec.segment_quantum_seconds));
  std::uniform_int_distribution<std::int64_t> run_quanta(min_q, max_q);
  std::vector<double> priors = spec.class_priors;
  if (priors.empty()) priors.assign(spec.n_classes, 1.0 / static_cast<double>(spec.n_classes));
  std::discrete_distribution<int> draw_class(priors.begin(), priors.end());

  std::vector<int> cover(spec.n_classes);
  std::iota(cover.begin(), cover.end(), 0);
  std::shuffle(cover.begin(), cover.end(), rng);
  std::size_t covered = spec.cover_all_classes ? 0 : cover.size();

  std::vector<int> labels;
  labels.reserve(spec.frames_per_video);
  while (labels.size() < spec.frames_per_video) {
    const int c = covered < cover.size() ? cover[covered++] : draw_class(rng);
    const auto len = static_cast<std::size_t>(run_quanta(rng) * quantum);
    for (std::size_t i = 0; i < len && labels.size() < spec.frames_per_video; ++i) labels.push_back(c);
  }
  return labels;
}

std::vector<bool> voiced_runs(std::size_t n, const Fps& fps, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> voiced_len(2.0, 10.0);
  std::uniform_real_distribution<double> silent_len(0.5, 3.0);
  std::vector<bool> voiced;
  voiced.reserve(n);
  bool on = true;
  while (voiced.size() < n) {
    const double seconds = on ? voiced_len(rng) : silent_len(rng);
    const auto len = std::max<std::int64_t>(1, frames_for(seconds, fps));
    for (std::int64_t i = 0; i < len && voiced.size() < n; ++i) voiced.push_back(on);
    on = !on;
  }
  return voiced;
}

}  // namespace

SyntheticDataset synth_generate(const SyntheticSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(spec.embedding_dim);
  const auto n = static_cast<Eigen::Index>(spec.frames_per_video);

  // Shared across videos so that a held-out video follows the same mapping.
  Eigen::MatrixXd class_means(static_cast<Eigen::Index>(spec.n_classes), d);
  Eigen::MatrixXd va_map(d, 2);
  Eigen::VectorXd va_bias(d);
  for (Eigen::Index i = 0; i < class_means.size(); ++i) class_means(i) = normal(rng);
  for (Eigen::Index i = 0; i < va_map.size(); ++i) va_map(i) = normal(rng);
  for (Eigen::Index i = 0; i < d; ++i) va_bias(i) = normal(rng);

  SyntheticDataset data;
  data.labels.task = spec.task;
  for (std::size_t v = 0; v < spec.n_videos; ++v) {
    const std::string id = video_name(v);
    Eigen::MatrixXd emb(n, d);
    Eigen::MatrixXd truth;
    if (spec.task == Task::kExpr) {
      const std::vector<int> latent = class_runs(spec, rng);
      truth.resize(n, 1);
      for (Eigen::Index t = 0; t < n; ++t) {
        truth(t, 0) = latent[static_cast<std::size_t>(t)];
        emb.row(t) = class_means.row(latent[static_cast<std::size_t>(t)]);
      }
    } else {
      std::uniform_real_distribution<double> start(-0.5, 0.5);
      truth.resize(n, 2);
      double val = start(rng);
      double aro = start(rng);
      for (Eigen::Index t = 0; t < n; ++t) {
        truth(t, 0) = val;
        truth(t, 1) = aro;
        emb.row(t) = (va_map * truth.row(t).transpose() + va_bias).transpose();
        val = std::clamp(val + spec.va_step * normal(rng), -1.0, 1.0);
        aro = std::clamp(aro + spec.va_step * normal(rng), -1.0, 1.0);
      }
    }
    if (spec.noise > 0.0) {
      for (Eigen::Index i = 0; i < emb.size(); ++i) emb(i) += spec.noise * normal(rng);
    }

    data.embeddings.push_back(FrameTrack::contiguous(id, spec.fps, std::move(emb), TrackKind::kEmbedding));
    data.labels.tracks.push_back(FrameTrack::contiguous(
        id, spec.fps, std::move(truth), spec.task == Task::kExpr ? TrackKind::kLabel : TrackKind::kVa));

    VadTrack vad{id, {}, voiced_runs(spec.frames_per_video, spec.fps, rng)};
    vad.frames.resize(spec.frames_per_video);
    std::iota(vad.frames.begin(), vad.frames.end(), std::int64_t{0});
    data.vad.push_back(std::move(vad));
    data.fps[id] = spec.fps;

    std::string split = "train";
    if (spec.n_videos >= 2 && v + 1 == spec.n_videos) split = spec.n_videos >= 3 ? "test" : "dev";
    if (spec.n_videos >= 3 && v + 2 == spec.n_videos) split = "dev";
    data.splits[id] = split;
  }
  return data;
}

void write_dataset(const SyntheticDataset& data, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create '" + dir + "': " + ec.message());
  const std::filesystem::path root(dir);
  write_track_csv((root / "embeddings.csv").string(), data.embeddings);
  write_label_csv((root / "labels.csv").string(), data.labels);
  write_vad_csv((root / "vad.csv").string(), data.vad);
  write_fps_csv((root / "fps.csv").string(), data.fps);
  write_split_csv((root / "splits.csv").string(), data.splits);
}

}  // namespace affect
