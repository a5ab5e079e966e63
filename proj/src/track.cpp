#include "affect/track.hpp"

#include "affect/error.hpp"

#include <charconv>
#include <cmath>
#include <numeric>

namespace affect {
namespace {

std::int64_t parse_int(std::string_view text) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::kInvalidArgument, "bad integer in fps '" + std::string(text) + "'");
  }
  return out;
}

}  // namespace

Fps::Fps(std::int64_t num, std::int64_t den) {
  if (num <= 0 || den <= 0) {
    throw Error(ErrorKind::kInvalidArgument, "fps must be a positive rational");
  }
  const std::int64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

Fps Fps::parse(std::string_view text) {
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    return Fps(parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1)));
  }
  if (const auto dot = text.find('.'); dot != std::string_view::npos) {
    std::string_view frac = text.substr(dot + 1);
    while (!frac.empty() && frac.back() == '0') frac.remove_suffix(1);
    if (frac.size() > 9) {
      throw Error(ErrorKind::kInvalidArgument, "fps has too many decimals: " + std::string(text));
    }
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    const std::int64_t whole = dot == 0 ? 0 : parse_int(text.substr(0, dot));
    const std::int64_t part = frac.empty() ? 0 : parse_int(frac);
    return Fps(whole * scale + part, scale);
  }
  return Fps(parse_int(text));
}

std::string Fps::str() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

bool operator<(const Fps& a, const Fps& b) {
  return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
}

std::int64_t frames_for(double seconds, const Fps& fps) {
  return static_cast<std::int64_t>(std::llround(seconds * fps.value()));
}

const char* to_string(TrackKind kind) {
  switch (kind) {
    case TrackKind::kEmbedding: return "embedding";
    case TrackKind::kClassScores: return "class_scores";
    case TrackKind::kVa: return "va";
    case TrackKind::kLabel: return "label";
  }
  return "?";
}

const char* to_string(Task task) { return task == Task::kExpr ? "expr" : "va"; }

Task parse_task(std::string_view text) {
  if (text == "expr") return Task::kExpr;
  if (text == "va") return Task::kVa;
  throw Error(ErrorKind::kInvalidArgument, "unknown task '" + std::string(text) + "' (expected expr or va)");
}

FrameTrack::FrameTrack(std::string video_id, Fps fps, std::vector<std::int64_t> frames,
                       Eigen::MatrixXd values, TrackKind kind)
    : video_id_(std::move(video_id)),
      fps_(fps),
      frames_(std::move(frames)),
      values_(std::move(values)),
      kind_(kind) {
  const std::string where = "track '" + video_id_ + "': ";
  if (frames_.empty()) throw Error(ErrorKind::kInvalidArgument, where + "no frames");
  if (values_.cols() < 1) throw Error(ErrorKind::kInvalidArgument, where + "width must be >= 1");
  if (static_cast<std::size_t>(values_.rows()) != frames_.size()) {
    throw Error(ErrorKind::kInvalidArgument, where + "row count does not match frame count");
  }
  for (std::size_t i = 1; i < frames_.size(); ++i) {
    if (frames_[i] <= frames_[i - 1]) {
      throw Error(ErrorKind::kInvalidArgument,
                  where + "frames not strictly increasing at frame " + std::to_string(frames_[i]));
    }
  }
  if (kind_ == TrackKind::kVa) {
    if (values_.cols() != 2) throw Error(ErrorKind::kInvalidArgument, where + "va track needs 2 columns");
    if ((values_.array().abs() > 1.0).any() || !values_.allFinite()) {
      throw Error(ErrorKind::kInvalidArgument, where + "va values must lie in [-1, 1]");
    }
  }
  if (kind_ == TrackKind::kLabel) {
    if (values_.cols() != 1) throw Error(ErrorKind::kInvalidArgument, where + "label track needs 1 column");
    for (Eigen::Index i = 0; i < values_.rows(); ++i) {
      const double v = values_(i, 0);
      if (v != std::floor(v) || v < 0.0 || v > 7.0) {
        throw Error(ErrorKind::kInvalidArgument, where + "labels must be integers in [0, 7]");
      }
    }
  }
}

FrameTrack FrameTrack::contiguous(std::string video_id, Fps fps, Eigen::MatrixXd values,
                                  TrackKind kind, std::int64_t first_frame) {
  std::vector<std::int64_t> frames(static_cast<std::size_t>(values.rows()));
  std::iota(frames.begin(), frames.end(), first_frame);
  return FrameTrack(std::move(video_id), fps, std::move(frames), std::move(values), kind);
}

bool FrameTrack::is_contiguous() const {
  return frames_.back() - frames_.front() + 1 == static_cast<std::int64_t>(frames_.size());
}

FrameTrack FrameTrack::with_values(Eigen::MatrixXd values, TrackKind kind) const {
  return FrameTrack(video_id_, fps_, frames_, std::move(values), kind);
}

}  // namespace affect
