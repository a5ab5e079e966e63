#pragma once

#include "affect/track.hpp"

#include <span>
#include <string>
#include <vector>

namespace affect {

enum class Functional { kMean, kMax, kMin };

/// Nonempty subset of {mean, max, min}, always kept in that order.
class FunctionalSet {
 public:
  FunctionalSet();  // mean, max, min
  explicit FunctionalSet(std::vector<Functional> selected);

  /// Comma-separated names, e.g. "mean,min".
  static FunctionalSet parse(const std::string& text);

  const std::vector<Functional>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::string str() const;

 private:
  std::vector<Functional> items_;
};

/// Column-wise statistics of a window, concatenated in set order. Rows whose
/// pad-mask entry is false are ignored when a mask is given.
Eigen::VectorXd functionals(const Eigen::MatrixXd& payload, const FunctionalSet& set,
                            const std::vector<bool>* pad_mask = nullptr);

enum class ScalerScope { kGlobal, kPerVideo };

struct MinMaxScaler {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  ScalerScope scope = ScalerScope::kGlobal;
};

/// Per-dimension extrema over every frame of every track.
MinMaxScaler fit_minmax(std::span<const FrameTrack> tracks);

/// (x - lo) / (hi - lo), clipped to [0, 1]; constant dimensions map to 0.
FrameTrack apply_minmax(const FrameTrack& track, const MinMaxScaler& scaler);

/// Fit and apply on this track alone.
FrameTrack per_video_minmax(const FrameTrack& track);

/// `# scope=<global|per_video>` comment line, then `dim,lo,hi` rows.
void write_scaler_csv(const std::string& path, const MinMaxScaler& scaler);
MinMaxScaler read_scaler_csv(const std::string& path);

}  // namespace affect
