#pragma once

#include "affect/track.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace affect {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_number(double value);
double parse_number(const std::string& text);

/// Minimal CSV table: header plus rows of string cells. Fields are split on
/// ',' with no quoting; '\r' before the newline is tolerated.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws if absent
};

CsvTable read_csv(const std::string& path);

/// Writes lines with '\n' endings; throws kIo on failure.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

using FpsLookup = std::function<Fps(const std::string& video_id)>;

/// Reads `video_id,frame,<c0>,<c1>,...` into one track per video, sorted by
/// video id, rows sorted by frame. Duplicate (video, frame) keys are rejected.
std::vector<FrameTrack> read_track_csv(const std::string& path, const FpsLookup& fps_of,
                                       TrackKind kind);

/// Column names default to c0, c1, ...
void write_track_csv(const std::string& path, const std::vector<FrameTrack>& tracks,
                     const std::vector<std::string>& column_names = {});
std::string track_csv_text(const std::vector<FrameTrack>& tracks,
                           const std::vector<std::string>& column_names = {});

/// Ground-truth labels, one track per video (kind kLabel or kVa).
struct LabelSet {
  Task task = Task::kExpr;
  std::vector<FrameTrack> tracks;
  std::size_t dropped = 0;  // rows outside the valid range
};

/// `video_id,frame,label` (EXPR, 0..7) or `video_id,frame,valence,arousal`
/// (VA, [-1, 1]). Invalid rows are dropped and counted.
LabelSet read_label_csv(const std::string& path, const FpsLookup& fps_of);
void write_label_csv(const std::string& path, const LabelSet& labels);

struct VadTrack {
  std::string video_id;
  std::vector<std::int64_t> frames;
  std::vector<bool> voiced;
};

/// `video_id,frame,voiced` with voiced in {0, 1}.
std::vector<VadTrack> read_vad_csv(const std::string& path);
void write_vad_csv(const std::string& path, const std::vector<VadTrack>& vad);

/// `video_id,fps`.
std::map<std::string, Fps> read_fps_csv(const std::string& path);
void write_fps_csv(const std::string& path, const std::map<std::string, Fps>& fps);

/// `video_id,split`.
std::map<std::string, std::string> read_split_csv(const std::string& path);
void write_split_csv(const std::string& path, const std::map<std::string, std::string>& splits);

/// Lookup over a fps map with an optional default for unlisted videos.
FpsLookup fps_lookup(std::map<std::string, Fps> table, std::optional<Fps> fallback = std::nullopt);

}  // namespace affect
