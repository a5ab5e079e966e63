#include "affect/timeline.hpp"

#include "affect/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace affect {
namespace {

using Wide = __int128;

// Integer keys for comparing timestamps of two rates exactly. Frame f at rate
// a/b sits at f*b/a seconds; scaling every timestamp by (a * c) lets frames of
// a second rate c/d be compared without rounding.
struct TimeKeys {
  Wide source_scale;  // multiplies source frame indices
  Wide target_scale;  // multiplies target frame indices

  TimeKeys(const Fps& source, const Fps& target)
      : source_scale(static_cast<Wide>(source.den()) * target.num()),
        target_scale(static_cast<Wide>(target.den()) * source.num()) {}
};

Wide ceil_div(Wide a, Wide b) {
  Wide q = a / b;
  if ((a % b != 0) && ((a < 0) == (b < 0))) ++q;
  return q;
}

std::vector<Wide> source_keys(const FrameTrack& track, const TimeKeys& keys) {
  std::vector<Wide> out(track.n_frames());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = track.frames()[i] * keys.source_scale;
  return out;
}

}  // namespace

std::size_t SmoothingSpec::window_frames(const Fps& fps) const {
  if (!(window_seconds > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "smoothing window must be positive");
  }
  auto n = std::max<std::int64_t>(frames_for(window_seconds, fps), 1);
  if (n % 2 == 0) ++n;
  return static_cast<std::size_t>(n);
}

std::vector<double> hamming_window(std::size_t n) {
  if (n <= 1) return {1.0};
  std::vector<double> w(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / denom);
  }
  return w;
}

FrameTrack resample_track(const FrameTrack& track, const Fps& target_fps) {
  if (track.fps() < target_fps) {
    throw Error(ErrorKind::kInvalidArgument, "upsampling not supported here; use interpolate_to");
  }
  if (track.fps() == target_fps) return track;

  const TimeKeys keys(track.fps(), target_fps);
  const std::vector<Wide> src = source_keys(track, keys);
  // Output covers [first source timestamp, end of last source frame).
  const Wide first = ceil_div(src.front(), keys.target_scale);
  const Wide end_key = (static_cast<Wide>(track.frames().back()) + 1) * keys.source_scale;

  std::vector<std::int64_t> frames;
  std::vector<std::size_t> rows;
  for (Wide t = first; t * keys.target_scale < end_key; ++t) {
    const Wide key = t * keys.target_scale;
    auto it = std::lower_bound(src.begin(), src.end(), key);
    std::size_t row = static_cast<std::size_t>(it - src.begin());
    if (row == src.size()) {
      row = src.size() - 1;
    } else if (row > 0 && key - src[row - 1] <= src[row] - key) {
      --row;
    }
    frames.push_back(static_cast<std::int64_t>(t));
    rows.push_back(row);
  }

  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), track.values().cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    values.row(static_cast<Eigen::Index>(i)) = track.values().row(static_cast<Eigen::Index>(rows[i]));
  }
  return FrameTrack(track.video_id(), target_fps, std::move(frames), std::move(values), track.kind());
}

FrameTrack interpolate_to(const FrameTrack& track, const Fps& target_fps,
                          std::size_t target_n_frames) {
  std::vector<std::int64_t> frames(target_n_frames);
  for (std::size_t i = 0; i < target_n_frames; ++i) frames[i] = static_cast<std::int64_t>(i);
  return interpolate_to(track, target_fps, frames);
}

FrameTrack interpolate_to(const FrameTrack& track, const Fps& target_fps,
                          const std::vector<std::int64_t>& target_frames) {
  const TimeKeys keys(track.fps(), target_fps);
  const std::vector<Wide> src = source_keys(track, keys);
  const Eigen::MatrixXd& x = track.values();
  const Eigen::Index width = x.cols();

  Eigen::MatrixXd out(static_cast<Eigen::Index>(target_frames.size()), width);
  for (std::size_t i = 0; i < target_frames.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Wide key = target_frames[i] * keys.target_scale;
    auto it = std::lower_bound(src.begin(), src.end(), key);
    const auto hi = static_cast<Eigen::Index>(it - src.begin());
    if (it != src.end() && *it == key) {
      out.row(r) = x.row(hi);
    } else if (hi == 0) {
      out.row(r) = x.row(0);
    } else if (it == src.end()) {
      out.row(r) = x.row(x.rows() - 1);
    } else {
      const Wide a = src[static_cast<std::size_t>(hi - 1)];
      const Wide b = src[static_cast<std::size_t>(hi)];
      const double w = static_cast<double>(static_cast<long double>(key - a) /
                                           static_cast<long double>(b - a));
      for (Eigen::Index j = 0; j < width; ++j) {
        const double lo = x(hi - 1, j);
        const double up = x(hi, j);
        const double v = lo + w * (up - lo);
        out(r, j) = std::clamp(v, std::min(lo, up), std::max(lo, up));
      }
    }
  }

  std::vector<std::int64_t> frames = target_frames;
  return FrameTrack(track.video_id(), target_fps, std::move(frames), std::move(out), track.kind());
}

FrameTrack hamming_smooth(const FrameTrack& track, const SmoothingSpec& spec) {
  if (track.kind() != TrackKind::kClassScores && track.kind() != TrackKind::kVa) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string("hamming_smooth applies to class scores or va, not ") +
                    to_string(track.kind()) + " (smooth scores, then argmax)");
  }
  const std::size_t n = spec.window_frames(track.fps());
  const std::vector<double> w = hamming_window(n);
  double norm = 0.0;
  for (double v : w) norm += v;

  const Eigen::MatrixXd& x = track.values();
  const auto rows = x.rows();
  const auto half = static_cast<Eigen::Index>((n - 1) / 2);
  Eigen::MatrixXd out(rows, x.cols());
  for (Eigen::Index t = 0; t < rows; ++t) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const Eigen::Index src = std::clamp<Eigen::Index>(t + static_cast<Eigen::Index>(k) - half, 0, rows - 1);
        acc += w[k] * x(src, j);
      }
      out(t, j) = acc / norm;
    }
  }
  // Clamp rounding excursions outside the per-component input envelope.
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double lo = x.col(j).minCoeff();
    const double hi = x.col(j).maxCoeff();
    out.col(j) = out.col(j).cwiseMax(lo).cwiseMin(hi);
  }
  return track.with_values(std::move(out), track.kind());
}

}  // namespace affect
