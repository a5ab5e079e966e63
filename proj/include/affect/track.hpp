#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace affect {

/// Frame rate as an exact positive rational (e.g. 30000/1001).
class Fps {
 public:
  Fps() = default;
  Fps(std::int64_t num, std::int64_t den = 1);

  /// Accepts "25", "7.5" or "30000/1001".
  static Fps parse(std::string_view text);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }
  std::string str() const;

  /// Seconds at which frame `index` starts, as a double.
  double seconds(std::int64_t index) const { return static_cast<double>(index) * den_ / num_; }

  friend bool operator==(const Fps& a, const Fps& b) { return a.num_ == b.num_ && a.den_ == b.den_; }
  friend bool operator<(const Fps& a, const Fps& b);
  friend bool operator<=(const Fps& a, const Fps& b) { return !(b < a); }

 private:
  std::int64_t num_ = 1;
  std::int64_t den_ = 1;
};

/// Number of frames covering `seconds` at `fps`, rounded half away from zero.
std::int64_t frames_for(double seconds, const Fps& fps);

enum class TrackKind { kEmbedding, kClassScores, kVa, kLabel };

/// EXPR: 8-class expression recognition. VA: valence/arousal regression.
enum class Task { kExpr, kVa };

inline constexpr std::size_t kExprClasses = 8;

const char* to_string(Task task);
Task parse_task(std::string_view text);

const char* to_string(TrackKind kind);

/// Per-video frame sequence of fixed-width vectors.
///
/// Rows carry explicit, strictly increasing frame indices so that tracks with
/// removed (invalid) frames keep their true timestamps. The timestamp of row i
/// is frames()[i] / fps.
class FrameTrack {
 public:
  FrameTrack(std::string video_id, Fps fps, std::vector<std::int64_t> frames,
             Eigen::MatrixXd values, TrackKind kind);

  /// Track whose rows are frames first_frame, first_frame + 1, ...
  static FrameTrack contiguous(std::string video_id, Fps fps, Eigen::MatrixXd values,
                               TrackKind kind, std::int64_t first_frame = 0);

  const std::string& video_id() const { return video_id_; }
  const Fps& fps() const { return fps_; }
  const std::vector<std::int64_t>& frames() const { return frames_; }
  const Eigen::MatrixXd& values() const { return values_; }
  TrackKind kind() const { return kind_; }

  std::size_t n_frames() const { return frames_.size(); }
  std::size_t width() const { return static_cast<std::size_t>(values_.cols()); }
  std::int64_t frame_index_origin() const { return frames_.front(); }
  double timestamp(std::size_t row) const { return fps_.seconds(frames_[row]); }

  /// True when frames are first, first + 1, ... without gaps.
  bool is_contiguous() const;

  /// Same frames and fps, different payload.
  FrameTrack with_values(Eigen::MatrixXd values, TrackKind kind) const;

 private:
  std::string video_id_;
  Fps fps_;
  std::vector<std::int64_t> frames_;
  Eigen::MatrixXd values_;
  TrackKind kind_;
};

}  // namespace affect
