#include "affect/windowing.hpp"

#include "affect/error.hpp"

#include <array>

namespace affect {

std::size_t WindowSpec::window_frames() const {
  const auto w = frames_for(window_seconds, fps);
  if (w < 1) throw Error(ErrorKind::kInvalidArgument, "window shorter than one frame");
  return static_cast<std::size_t>(w);
}

std::size_t WindowSpec::hop_frames() const {
  const auto h = frames_for(hop_seconds, fps);
  if (h < 1) throw Error(ErrorKind::kInvalidArgument, "hop shorter than one frame");
  return static_cast<std::size_t>(h);
}

std::vector<Segment> voiced_segments(const VadMask& mask) {
  std::vector<Segment> out;
  std::size_t i = 0;
  const std::size_t n = mask.voiced.size();
  while (i < n) {
    if (!mask.voiced[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && mask.voiced[j]) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

std::size_t WindowBatch::valid_rows(std::size_t window) const {
  std::size_t n = 0;
  for (bool real : pad_mask[window]) n += real ? 1 : 0;
  return n;
}

std::size_t WindowBatch::second_of_row(std::size_t j) const {
  return static_cast<std::size_t>(static_cast<std::int64_t>(j) * fps.den() / fps.num());
}

std::size_t WindowBatch::seconds_per_window() const {
  return window_frames == 0 ? 0 : second_of_row(window_frames - 1) + 1;
}

WindowBatch slice_windows(const FrameTrack& track, const WindowSpec& spec,
                          const std::optional<std::vector<Segment>>& segments) {
  if (!(spec.fps == track.fps())) {
    throw Error(ErrorKind::kAlignment, "window spec fps " + spec.fps.str() + " differs from track fps " +
                                           track.fps().str() + " for '" + track.video_id() + "'");
  }
  const std::size_t W = spec.window_frames();
  const std::size_t H = spec.hop_frames();
  const std::size_t n = track.n_frames();

  WindowBatch batch;
  batch.video_id = track.video_id();
  batch.fps = track.fps();
  batch.window_frames = W;
  batch.hop_frames = H;
  batch.track_length = n;
  batch.track_frames = track.frames();

  auto emit = [&](std::size_t start, std::size_t seg_end) {
    std::vector<std::size_t> rows(W);
    std::vector<bool> mask(W);
    Eigen::MatrixXd payload(static_cast<Eigen::Index>(W), track.values().cols());
    for (std::size_t j = 0; j < W; ++j) {
      const bool real = start + j < seg_end;
      rows[j] = real ? start + j : seg_end - 1;
      mask[j] = real;
      payload.row(static_cast<Eigen::Index>(j)) = track.values().row(static_cast<Eigen::Index>(rows[j]));
    }
    batch.starts.push_back(start);
    batch.rows.push_back(std::move(rows));
    batch.pad_mask.push_back(std::move(mask));
    batch.payload.push_back(std::move(payload));
  };

  const std::vector<Segment> segs = segments ? *segments : std::vector<Segment>{{0, n}};
  for (const Segment& seg : segs) {
    if (seg.end > n || seg.begin > seg.end) {
      throw Error(ErrorKind::kAlignment, "segment [" + std::to_string(seg.begin) + ", " +
                                             std::to_string(seg.end) + ") outside track '" +
                                             track.video_id() + "' of " + std::to_string(n) + " frames");
    }
    if (seg.size() == 0) continue;
    if (seg.size() < W) {
      emit(seg.begin, seg.end);
      continue;
    }
    for (std::size_t start = seg.begin; start + W <= seg.end; start += H) emit(start, seg.end);
  }
  return batch;
}

int majority_label(std::span<const int> labels, const std::vector<bool>& include) {
  if (include.size() != labels.size()) {
    throw Error(ErrorKind::kInvalidArgument, "majority_label: mask and labels differ in length");
  }
  std::array<std::size_t, 256> counts{};
  int best = -1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!include[i] || labels[i] < 0) continue;
    if (labels[i] >= static_cast<int>(counts.size())) {
      throw Error(ErrorKind::kInvalidArgument, "label " + std::to_string(labels[i]) + " out of range");
    }
    ++counts[static_cast<std::size_t>(labels[i])];
  }
  std::size_t top = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > top) {
      top = counts[c];
      best = static_cast<int>(c);
    }
  }
  return best;
}

WindowBatch reduce_expr_targets(std::span<const int> labels, WindowBatch batch) {
  if (labels.size() != batch.track_length) {
    throw Error(ErrorKind::kAlignment, "label track for '" + batch.video_id + "' has " +
                                           std::to_string(labels.size()) + " rows, payload has " +
                                           std::to_string(batch.track_length));
  }
  const std::size_t n_seconds = batch.seconds_per_window();
  std::vector<std::vector<int>> targets;
  targets.reserve(batch.size());
  for (std::size_t w = 0; w < batch.size(); ++w) {
    std::vector<std::vector<int>> second_labels(n_seconds);
    std::vector<std::vector<bool>> second_mask(n_seconds);
    for (std::size_t j = 0; j < batch.window_frames; ++j) {
      const std::size_t s = batch.second_of_row(j);
      second_labels[s].push_back(labels[batch.rows[w][j]]);
      second_mask[s].push_back(batch.pad_mask[w][j]);
    }
    std::vector<int> reduced(n_seconds, -1);
    for (std::size_t s = 0; s < n_seconds; ++s) {
      reduced[s] = majority_label(second_labels[s], second_mask[s]);
      if (reduced[s] < 0 && s > 0) reduced[s] = reduced[s - 1];
    }
    // A leading second with nothing valid takes the first later label.
    for (std::size_t s = n_seconds; s-- > 1;) {
      if (reduced[s - 1] < 0) reduced[s - 1] = reduced[s];
    }
    targets.push_back(std::move(reduced));
  }
  batch.expr_targets = std::move(targets);
  return batch;
}

WindowBatch reduce_expr_targets(const FrameTrack& label_track, WindowBatch batch) {
  if (label_track.kind() != TrackKind::kLabel) {
    throw Error(ErrorKind::kTaskMismatch, "reduce_expr_targets needs a label track");
  }
  if (!(label_track.fps() == batch.fps)) {
    throw Error(ErrorKind::kAlignment, "label track fps differs from payload fps for '" + batch.video_id + "'");
  }
  std::vector<int> labels(label_track.n_frames());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<int>(label_track.values()(static_cast<Eigen::Index>(i), 0));
  }
  return reduce_expr_targets(labels, std::move(batch));
}

WindowBatch reduce_va_targets(const FrameTrack& va_track, WindowBatch batch) {
  if (va_track.kind() != TrackKind::kVa) {
    throw Error(ErrorKind::kTaskMismatch, "reduce_va_targets needs a va track");
  }
  if (va_track.n_frames() != batch.track_length || !(va_track.fps() == batch.fps)) {
    throw Error(ErrorKind::kAlignment, "va track not aligned with payload for '" + batch.video_id + "'");
  }
  std::vector<Eigen::MatrixXd> targets;
  targets.reserve(batch.size());
  for (std::size_t w = 0; w < batch.size(); ++w) {
    Eigen::MatrixXd t(static_cast<Eigen::Index>(batch.window_frames), 2);
    for (std::size_t j = 0; j < batch.window_frames; ++j) {
      t.row(static_cast<Eigen::Index>(j)) = va_track.values().row(static_cast<Eigen::Index>(batch.rows[w][j]));
    }
    targets.push_back(std::move(t));
  }
  batch.va_targets = std::move(targets);
  return batch;
}

}  // namespace affect
