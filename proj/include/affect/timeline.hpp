#pragma once

#include "affect/track.hpp"

#include <cstdint>
#include <vector>

namespace affect {

/// Hamming smoothing configuration. The window is `window_seconds` long,
/// rounded to whole frames and bumped to the next odd count so the filter is
/// centred. Out-of-range taps replicate the boundary frame.
struct SmoothingSpec {
  double window_seconds = 0.5;

  std::size_t window_frames(const Fps& fps) const;
};

/// Raw Hamming coefficients 0.54 - 0.46 cos(2 pi k / (N - 1)); [1] for N = 1.
std::vector<double> hamming_window(std::size_t n);

/// Downsamples by nearest-timestamp frame selection (ties pick the earlier
/// frame). Output frame t sits at t / target_fps. Target equal to the source
/// rate returns the track unchanged.
FrameTrack resample_track(const FrameTrack& track, const Fps& target_fps);

/// Linear interpolation onto frames 0 .. target_n_frames - 1 at target_fps.
/// Timestamps outside the source span hold the boundary value.
FrameTrack interpolate_to(const FrameTrack& track, const Fps& target_fps,
                          std::size_t target_n_frames);

/// As above, onto an explicit strictly increasing frame list.
FrameTrack interpolate_to(const FrameTrack& track, const Fps& target_fps,
                          const std::vector<std::int64_t>& target_frames);

/// Per-component Hamming smoothing, kernel normalised by its sum, edges
/// replicated. Only class-score and VA tracks may be smoothed.
FrameTrack hamming_smooth(const FrameTrack& track, const SmoothingSpec& spec);

}  // namespace affect
