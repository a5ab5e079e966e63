#pragma once

#include "affect/track.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace affect {

/// Window geometry in seconds at a fixed frame rate.
struct WindowSpec {
  double window_seconds = 2.0;
  double hop_seconds = 2.0;
  Fps fps{5};

  std::size_t window_frames() const;  // W, >= 1
  std::size_t hop_frames() const;     // H, >= 1
};

/// Per-frame voiced flags at the payload track's frame rate.
struct VadMask {
  std::string video_id;
  std::vector<bool> voiced;
};

/// Half-open row range [begin, end).
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Maximal runs of voiced frames, in order.
std::vector<Segment> voiced_segments(const VadMask& mask);

/// Fixed-length windows cut from one track.
struct WindowBatch {
  std::string video_id;
  Fps fps;
  std::size_t window_frames = 0;
  std::size_t hop_frames = 0;
  std::size_t track_length = 0;
  std::vector<std::int64_t> track_frames;      // frame index of every source row

  std::vector<std::size_t> starts;             // first source row of each window
  std::vector<std::vector<std::size_t>> rows;  // source row feeding each window row
  std::vector<Eigen::MatrixXd> payload;        // W x d per window
  std::vector<std::vector<bool>> pad_mask;     // true = real frame

  std::optional<std::vector<std::vector<int>>> expr_targets;  // per-second labels, -1 = none
  std::optional<std::vector<Eigen::MatrixXd>> va_targets;     // W x 2 per window

  std::size_t size() const { return starts.size(); }
  std::size_t valid_rows(std::size_t window) const;
  /// Number of whole-second groups in a window (4 for 4 s at 5 FPS).
  std::size_t seconds_per_window() const;
  /// Second group of window row j: floor(j / fps).
  std::size_t second_of_row(std::size_t j) const;
};

/// Windows start at segment.begin + k*H while start + W <= segment.end. A
/// nonempty segment shorter than W yields one window padded by repeating its
/// last frame. Without segments the whole track is one segment.
WindowBatch slice_windows(const FrameTrack& track, const WindowSpec& spec,
                          const std::optional<std::vector<Segment>>& segments = std::nullopt);

/// Most frequent label among entries with include[i] set and label >= 0;
/// ties go to the smallest label. Returns -1 when nothing is counted.
int majority_label(std::span<const int> labels, const std::vector<bool>& include);

/// Per-second majority labels for each window. `labels` is aligned row by row
/// with the payload track; negative entries are invalid and skipped, as are
/// padded rows. A second with nothing to count inherits the previous second.
WindowBatch reduce_expr_targets(std::span<const int> labels, WindowBatch batch);
WindowBatch reduce_expr_targets(const FrameTrack& label_track, WindowBatch batch);

/// W x 2 slice of the VA track over each window span; padded rows repeat.
WindowBatch reduce_va_targets(const FrameTrack& va_track, WindowBatch batch);

}  // namespace affect
