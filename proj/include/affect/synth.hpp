#pragma once

#include "affect/csv_io.hpp"
#include "affect/track.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace affect {

/// Seeded synthetic dataset for tests and demos.
struct SyntheticSpec {
  std::size_t n_videos = 5;
  std::size_t frames_per_video = 600;
  std::size_t embedding_dim = 16;
  Task task = Task::kExpr;
  std::size_t n_classes = kExprClasses;
  double noise = 0.0;               // std-dev of Gaussian embedding noise
  std::vector<double> class_priors;  // empty = uniform
  Fps fps{10};
  // EXPR latent classes come in runs whose lengths are whole multiples of
  // segment_quantum_seconds within [segment_min_seconds, segment_max_seconds].
  double segment_min_seconds = 4.0;
  double segment_max_seconds = 8.0;
  double segment_quantum_seconds = 2.0;
  /// First run block of each video visits every class once, in random order.
  bool cover_all_classes = true;
  double va_step = 0.05;  // random-walk step std-dev per frame
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  std::vector<FrameTrack> embeddings;
  LabelSet labels;
  std::vector<VadTrack> vad;
  std::map<std::string, Fps> fps;
  std::map<std::string, std::string> splits;  // last video test, the one before dev, rest train
};

SyntheticDataset synth_generate(const SyntheticSpec& spec);

/// embeddings.csv, labels.csv, vad.csv, fps.csv and splits.csv under `dir`.
void write_dataset(const SyntheticDataset& data, const std::string& dir);

}  // namespace affect
