#pragma once

#include "affect/csv_io.hpp"
#include "affect/features.hpp"
#include "affect/fusion.hpp"
#include "affect/kelm.hpp"
#include "affect/metrics.hpp"
#include "affect/synth.hpp"
#include "affect/timeline.hpp"
#include "affect/track.hpp"
#include "affect/windowing.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace affect {

enum class Normalization { kNone, kGlobalMinMax, kPerVideoMinMax };
enum class FusionMethod { kNone, kDwf, kRf, kMean };

/// Precomputed base-model score track (8 columns EXPR, 2 columns VA).
struct BaseModelSpec {
  std::string name;
  std::string predictions;
  std::optional<Fps> fps;  // unset: per-video rates from the fps file
};

/// Declarative run description. Defaults follow the reference setup: 5 FPS,
/// 2 s non-overlapping windows, mean/max/min functionals, 0.5 s smoothing.
struct PipelineConfig {
  Task task = Task::kExpr;

  struct Data {
    std::string embeddings;
    std::string labels;
    std::string vad;
    std::string fps;
    std::string splits;
    std::optional<Fps> default_fps;
  } data;

  Fps fps_target{5};

  struct Window {
    double seconds = 2.0;
    double hop_seconds = 2.0;
    bool use_vad = false;
  } window;

  FunctionalSet functionals;
  Normalization normalization = Normalization::kNone;

  struct Kelm {
    bool enabled = true;
    KernelKind kernel = KernelKind::kRbf;
    std::string gamma = "inverse_dim";  // "inverse_dim", "median" or a number
    std::vector<double> c_grid = default_c_grid();
    bool weighted = true;
  } kelm;

  struct Fusion {
    FusionMethod method = FusionMethod::kNone;
    std::vector<BaseModelSpec> base_models;
    std::size_t pool_size = 10000;
    double alpha = 1.0;
    bool include_selectors = true;
    std::vector<std::size_t> tree_grid = default_tree_grid();
    std::optional<std::size_t> max_depth;
  } fusion;

  struct Postprocess {
    bool smooth = true;
    double smooth_seconds = 0.5;
  } postprocess;

  std::string train_split = "train";
  std::string dev_split = "dev";
  std::vector<std::string> eval_splits = {"dev", "test"};

  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out_dir = "runs";

  /// Relative paths are resolved against `base_dir`. Unknown keys are errors.
  static PipelineConfig from_json(const nlohmann::json& j, const std::string& base_dir = "");
  static PipelineConfig load(const std::string& path);

  /// Canonical form; feeds the config hash (workers and out_dir excluded).
  nlohmann::json to_json() const;
  std::string hash() const;
};

/// Everything read from disk for one run.
struct PipelineInputs {
  std::map<std::string, Fps> fps;
  std::map<std::string, std::string> splits;
  std::optional<LabelSet> labels;
  std::vector<FrameTrack> embeddings;
  std::vector<VadTrack> vad;
  std::vector<std::vector<FrameTrack>> base_predictions;  // [model][video]

  FpsLookup fps_of() const;
  std::string split_of(const std::string& video) const;
};

PipelineInputs load_inputs(const PipelineConfig& config);

/// One window with its per-row metadata and targets.
struct WindowRecord {
  std::string video_id;
  std::size_t window = 0;
  std::vector<std::int64_t> frames;  // frame index (at the window fps) of each row
  std::vector<bool> valid;           // false on padded rows
  std::vector<bool> center;          // rows in the window's central hop span
  Eigen::MatrixXd payload;           // W x d
  std::vector<int> labels;           // EXPR per row, -1 invalid
  Eigen::MatrixXd va;                // VA per row (W x 2), NaN invalid
};

struct WindowTable {
  Task task = Task::kExpr;
  Fps fps{5};
  std::vector<WindowRecord> windows;
};

/// resample -> normalise -> VAD gate -> slice windows -> attach row targets.
WindowTable build_windows(const PipelineInputs& inputs, const PipelineConfig& config);
std::string window_table_csv(const WindowTable& table);
WindowTable read_window_table(const std::string& path);

/// Functionals of one window plus its reduced target.
struct FeatureRow {
  std::string video_id;
  std::size_t window = 0;
  std::int64_t span_begin = 0;  // frames at the table fps covered by this
  std::int64_t span_end = 0;    // window's prediction, [begin, end)
  int label = -1;               // EXPR majority label, -1 if none
  Eigen::Vector2d va{0.0, 0.0};  // VA mean, NaN if none
  Eigen::VectorXd x;
};

struct FeatureTable {
  Task task = Task::kExpr;
  Fps fps{5};
  std::vector<FeatureRow> rows;

  bool has_target(const FeatureRow& row) const;
};

FeatureTable compute_features(const WindowTable& windows, const FunctionalSet& set);
std::string feature_table_csv(const FeatureTable& table);
FeatureTable read_feature_table(const std::string& path);

struct KelmTraining {
  KelmModel model;
  CSelection selection;
  std::size_t train_windows = 0;
  std::size_t dropped_windows = 0;  // training windows without any valid label
};

/// Picks C on the development split and trains on the training split with it.
KelmTraining train_kelm_stage(const FeatureTable& features, const std::map<std::string, std::string>& splits,
                              const PipelineConfig& config);

/// Window scores spread over each window's central span, one track per video
/// at the feature table's fps.
std::vector<FrameTrack> predict_kelm_stage(const KelmModel& model, const FeatureTable& features);

/// Target frame list of one video.
struct Timeline {
  std::string video_id;
  Fps fps;
  std::vector<std::int64_t> frames;
};

std::vector<Timeline> timelines_from_tracks(const std::vector<FrameTrack>& tracks);

/// Linear interpolation of each video's prediction onto its timeline. Videos
/// with no prediction at all get zero scores.
std::vector<FrameTrack> align_to_timelines(const std::vector<FrameTrack>& preds, const std::vector<Timeline>& timelines,
                                           Task task, std::size_t workers = 1);

std::vector<FrameTrack> smooth_tracks(const std::vector<FrameTrack>& tracks, const SmoothingSpec& spec,
                                      std::size_t workers = 1);

/// Model-major predictions [model][video] aligned to the same timelines.
using ModelTracks = std::vector<std::vector<FrameTrack>>;

std::vector<FrameTrack> fuse_mean_stage(const ModelTracks& models);

struct DwfFit {
  FusionPool pool;
  DwfResult result;
  std::vector<double> single_model_scores;
};

/// Samples the pool and searches it on the development videos.
DwfFit fit_dwf_stage(const ModelTracks& models, const LabelSet& truth, const std::map<std::string, std::string>& splits,
                     const std::string& dev_split, Task task, std::size_t pool_size, double alpha, bool include_selectors,
                     std::uint64_t seed, std::size_t workers);
std::vector<FrameTrack> apply_dwf_stage(const ModelTracks& models, const FusionMatrix& matrix);

RfFusionModel fit_rf_stage(const ModelTracks& models, const LabelSet& truth,
                           const std::map<std::string, std::string>& splits, const std::string& dev_split, Task task,
                           const std::vector<std::size_t>& tree_grid, const ForestSpec& spec);
std::vector<FrameTrack> apply_rf_stage(const ModelTracks& models, const RfFusionModel& model);

/// Development-split matrices for fusion fitting: per-model predictions
/// concatenated over dev videos (sorted), and the matching truth.
struct DevSet {
  std::vector<Eigen::MatrixXd> preds;
  DevTargets truth;
};
DevSet collect_dev_set(const ModelTracks& models, const LabelSet& truth, const std::map<std::string, std::string>& splits,
                       const std::string& dev_split, Task task);

/// Joins predictions and truth on (video, frame). EXPR predictions with one
/// column are labels, otherwise the row argmax. Only videos in `videos` are
/// used when it is nonempty.
EvalReport evaluate_tracks(const std::vector<FrameTrack>& preds, const LabelSet& truth, Task task,
                           const std::vector<std::string>& videos = {}, bool exclude_absent = false);

EvalReport evaluate_files(const std::string& pred_csv, const std::string& truth_csv, Task task);

struct RunResult {
  std::string run_dir;
  std::string manifest_path;
  std::map<std::string, EvalReport> reports;  // per evaluated split
  std::vector<std::string> warnings;
};

/// Full pipeline. Writes intermediates, predictions_<split>.csv,
/// report_<split>.{txt,csv}, manifest.json and timings.csv into
/// <out_dir>/run-<config hash prefix>.
RunResult run_pipeline(const PipelineConfig& config);

}  // namespace affect
