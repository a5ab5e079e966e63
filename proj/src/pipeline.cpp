#include "affect/pipeline.hpp"

#include "affect/digest.hpp"
#include "affect/error.hpp"
#include "affect/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <sstream>

namespace affect {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t task_width(Task task) { return task == Task::kExpr ? kExprClasses : 2; }
TrackKind score_kind(Task task) { return task == Task::kExpr ? TrackKind::kClassScores : TrackKind::kVa; }

const char* normalization_name(Normalization n) {
  switch (n) {
    case Normalization::kNone: return "none";
    case Normalization::kGlobalMinMax: return "global_minmax";
    case Normalization::kPerVideoMinMax: return "per_video_minmax";
  }
  return "none";
}

const char* fusion_name(FusionMethod m) {
  switch (m) {
    case FusionMethod::kNone: return "none";
    case FusionMethod::kDwf: return "dwf";
    case FusionMethod::kRf: return "rf";
    case FusionMethod::kMean: return "mean";
  }
  return "none";
}

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::kConfig, msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    config_error(std::string("bad value for '") + key + "': " + e.what());
  }
}

Fps fps_value(const json& j) {
  if (j.is_string()) return Fps::parse(j.get<std::string>());
  if (j.is_number_integer()) return Fps(j.get<std::int64_t>());
  if (j.is_number()) return Fps::parse(format_number(j.get<double>()));
  config_error("fps must be a number or a string such as \"30000/1001\"");
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

std::size_t find_video(const std::vector<FrameTrack>& tracks, const std::string& video) {
  auto it = std::lower_bound(tracks.begin(), tracks.end(), video,
                             [](const FrameTrack& t, const std::string& v) { return t.video_id() < v; });
  if (it == tracks.end() || it->video_id() != video) return tracks.size();
  return static_cast<std::size_t>(it - tracks.begin());
}

// Dense per-frame copy of a sparse (video, frame) keyed track over `frames`,
// with `missing` where the source has no row.
Eigen::MatrixXd lookup_rows(const FrameTrack* source, const std::vector<std::int64_t>& frames, Eigen::Index width,
                            double missing) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(frames.size()), width, missing);
  if (!source) return out;
  const auto& src = source->frames();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto it = std::lower_bound(src.begin(), src.end(), frames[i]);
    if (it != src.end() && *it == frames[i]) {
      out.row(static_cast<Eigen::Index>(i)) = source->values().row(it - src.begin());
    }
  }
  return out;
}

// Writes `content` under the run directory and records its digest.
class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) {}

  std::string write(const std::string& name, const std::string& content) {
    const std::string path = (dir_ / name).string();
    write_text_file(path, content);
    outputs_[name] = sha256_hex(content);
    return path;
  }

  const std::map<std::string, std::string>& outputs() const { return outputs_; }
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, std::string> outputs_;
};

class StageClock {
 public:
  template <typename Fn>
  auto run(const std::string& stage, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        record(stage, start);
      } else {
        auto result = fn();
        record(stage, start);
        return result;
      }
    } catch (const Error& e) {
      throw with_stage(e, stage);
    }
  }

  std::string csv() const {
    std::string out = "stage,seconds\n";
    for (const auto& [stage, seconds] : timings_) out += stage + "," + format_number(seconds) + "\n";
    return out;
  }

 private:
  void record(const std::string& stage, std::chrono::steady_clock::time_point start) {
    timings_.emplace_back(stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }

  std::vector<std::pair<std::string, double>> timings_;
};

std::vector<FrameTrack> tracks_of_videos(const std::vector<FrameTrack>& tracks, const std::set<std::string>& videos) {
  std::vector<FrameTrack> out;
  for (const auto& t : tracks) {
    if (videos.count(t.video_id())) out.push_back(t);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const json& j, const std::string& base_dir) {
  check_keys(j, "config", {"task", "seed", "workers", "out_dir", "data", "fps_target", "window", "functionals",
                           "normalization", "kelm", "fusion", "postprocess", "splits"});
  PipelineConfig c;
  try {
    c.task = parse_task(get_or<std::string>(j, "task", "expr"));
  } catch (const Error& e) {
    config_error(e.what());
  }
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.workers = std::max<std::size_t>(1, get_or<std::size_t>(j, "workers", 1));
  c.out_dir = resolve(get_or<std::string>(j, "out_dir", "runs"), base_dir);
  if (j.contains("fps_target")) c.fps_target = fps_value(j.at("fps_target"));

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"embeddings", "labels", "vad", "fps", "splits", "default_fps"});
    c.data.embeddings = resolve(get_or<std::string>(d, "embeddings", ""), base_dir);
    c.data.labels = resolve(get_or<std::string>(d, "labels", ""), base_dir);
    c.data.vad = resolve(get_or<std::string>(d, "vad", ""), base_dir);
    c.data.fps = resolve(get_or<std::string>(d, "fps", ""), base_dir);
    c.data.splits = resolve(get_or<std::string>(d, "splits", ""), base_dir);
    if (d.contains("default_fps") && !d.at("default_fps").is_null()) c.data.default_fps = fps_value(d.at("default_fps"));
  }
  if (j.contains("window")) {
    const json& w = j.at("window");
    check_keys(w, "window", {"seconds", "hop_seconds", "use_vad"});
    c.window.seconds = get_or<double>(w, "seconds", c.window.seconds);
    c.window.hop_seconds = get_or<double>(w, "hop_seconds", c.window.hop_seconds);
    c.window.use_vad = get_or<bool>(w, "use_vad", c.window.use_vad);
  }
  if (j.contains("functionals")) {
    try {
      c.functionals = FunctionalSet::parse(j.at("functionals").get<std::string>());
    } catch (const std::exception& e) {
      config_error(std::string("functionals: ") + e.what());
    }
  }
  const std::string norm = get_or<std::string>(j, "normalization", "none");
  if (norm == "none") {
    c.normalization = Normalization::kNone;
  } else if (norm == "global_minmax") {
    c.normalization = Normalization::kGlobalMinMax;
  } else if (norm == "per_video_minmax") {
    c.normalization = Normalization::kPerVideoMinMax;
  } else {
    config_error("normalization must be none, global_minmax or per_video_minmax");
  }
  if (j.contains("kelm")) {
    const json& k = j.at("kelm");
    check_keys(k, "kelm", {"enabled", "kernel", "gamma", "c_grid", "weighted"});
    c.kelm.enabled = get_or<bool>(k, "enabled", c.kelm.enabled);
    const std::string kernel = get_or<std::string>(k, "kernel", "rbf");
    if (kernel != "rbf" && kernel != "linear") config_error("kelm.kernel must be rbf or linear");
    c.kelm.kernel = kernel == "rbf" ? KernelKind::kRbf : KernelKind::kLinear;
    if (k.contains("gamma") && k.at("gamma").is_number()) {
      c.kelm.gamma = format_number(k.at("gamma").get<double>());
    } else {
      c.kelm.gamma = get_or<std::string>(k, "gamma", c.kelm.gamma);
    }
    c.kelm.c_grid = get_or<std::vector<double>>(k, "c_grid", c.kelm.c_grid);
    c.kelm.weighted = get_or<bool>(k, "weighted", c.kelm.weighted);
    if (c.kelm.c_grid.empty()) config_error("kelm.c_grid must not be empty");
  }
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    check_keys(f, "fusion", {"method", "base_models", "pool_size", "alpha", "include_selectors", "tree_grid", "max_depth"});
    const std::string method = get_or<std::string>(f, "method", "none");
    if (method == "none") {
      c.fusion.method = FusionMethod::kNone;
    } else if (method == "dwf") {
      c.fusion.method = FusionMethod::kDwf;
    } else if (method == "rf") {
      c.fusion.method = FusionMethod::kRf;
    } else if (method == "mean") {
      c.fusion.method = FusionMethod::kMean;
    } else {
      config_error("fusion.method must be none, dwf, rf or mean");
    }
    if (f.contains("base_models")) {
      for (const json& m : f.at("base_models")) {
        check_keys(m, "fusion.base_models[]", {"name", "predictions", "fps"});
        BaseModelSpec spec;
        spec.name = get_or<std::string>(m, "name", "");
        spec.predictions = resolve(get_or<std::string>(m, "predictions", ""), base_dir);
        if (m.contains("fps") && !m.at("fps").is_null()) spec.fps = fps_value(m.at("fps"));
        if (spec.name.empty() || spec.predictions.empty()) config_error("base models need a name and predictions");
        c.fusion.base_models.push_back(std::move(spec));
      }
    }
    c.fusion.pool_size = get_or<std::size_t>(f, "pool_size", c.fusion.pool_size);
    c.fusion.alpha = get_or<double>(f, "alpha", c.fusion.alpha);
    c.fusion.include_selectors = get_or<bool>(f, "include_selectors", c.fusion.include_selectors);
    c.fusion.tree_grid = get_or<std::vector<std::size_t>>(f, "tree_grid", c.fusion.tree_grid);
    if (f.contains("max_depth") && !f.at("max_depth").is_null()) c.fusion.max_depth = f.at("max_depth").get<std::size_t>();
  }
  if (j.contains("postprocess")) {
    const json& p = j.at("postprocess");
    check_keys(p, "postprocess", {"smooth", "smooth_seconds"});
    c.postprocess.smooth = get_or<bool>(p, "smooth", c.postprocess.smooth);
    c.postprocess.smooth_seconds = get_or<double>(p, "smooth_seconds", c.postprocess.smooth_seconds);
  }
  if (j.contains("splits")) {
    const json& s = j.at("splits");
    check_keys(s, "splits", {"train", "dev", "eval"});
    c.train_split = get_or<std::string>(s, "train", c.train_split);
    c.dev_split = get_or<std::string>(s, "dev", c.dev_split);
    c.eval_splits = get_or<std::vector<std::string>>(s, "eval", c.eval_splits);
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    config_error("cannot parse '" + path + "': " + e.what());
  }
  return from_json(j, fs::path(path).parent_path().string());
}

json PipelineConfig::to_json() const {
  json j;
  j["task"] = to_string(task);
  j["seed"] = seed;
  j["fps_target"] = fps_target.str();
  j["data"] = {{"embeddings", data.embeddings}, {"labels", data.labels}, {"vad", data.vad},
               {"fps", data.fps}, {"splits", data.splits},
               {"default_fps", data.default_fps ? json(data.default_fps->str()) : json(nullptr)}};
  j["window"] = {{"seconds", window.seconds}, {"hop_seconds", window.hop_seconds}, {"use_vad", window.use_vad}};
  j["functionals"] = functionals.str();
  j["normalization"] = normalization_name(normalization);
  j["kelm"] = {{"enabled", kelm.enabled}, {"kernel", kelm.kernel == KernelKind::kRbf ? "rbf" : "linear"},
               {"gamma", kelm.gamma}, {"c_grid", kelm.c_grid}, {"weighted", kelm.weighted}};
  json models = json::array();
  for (const auto& m : fusion.base_models) {
    models.push_back({{"name", m.name}, {"predictions", m.predictions}, {"fps", m.fps ? json(m.fps->str()) : json(nullptr)}});
  }
  j["fusion"] = {{"method", fusion_name(fusion.method)}, {"base_models", models}, {"pool_size", fusion.pool_size},
                 {"alpha", fusion.alpha}, {"include_selectors", fusion.include_selectors},
                 {"tree_grid", fusion.tree_grid},
                 {"max_depth", fusion.max_depth ? json(*fusion.max_depth) : json(nullptr)}};
  j["postprocess"] = {{"smooth", postprocess.smooth}, {"smooth_seconds", postprocess.smooth_seconds}};
  j["splits"] = {{"train", train_split}, {"dev", dev_split}, {"eval", eval_splits}};
  return j;
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------------------
// Ingestion

FpsLookup PipelineInputs::fps_of() const {
  return fps_lookup(fps);
}

std::string PipelineInputs::split_of(const std::string& video) const {
  auto it = splits.find(video);
  return it == splits.end() ? std::string() : it->second;
}

PipelineInputs load_inputs(const PipelineConfig& config) {
  PipelineInputs in;
  if (!config.data.fps.empty()) in.fps = read_fps_csv(config.data.fps);
  const FpsLookup fps_of = fps_lookup(in.fps, config.data.default_fps);
  if (!config.data.splits.empty()) in.splits = read_split_csv(config.data.splits);
  if (!config.data.labels.empty()) {
    in.labels = read_label_csv(config.data.labels, fps_of);
    if (in.labels->task != config.task) {
      throw Error(ErrorKind::kTaskMismatch, "label file '" + config.data.labels + "' holds " +
                                                to_string(in.labels->task) + " labels but the task is " +
                                                to_string(config.task));
    }
  }
  if (config.kelm.enabled) {
    if (config.data.embeddings.empty()) config_error("kelm is enabled but data.embeddings is not set");
    in.embeddings = read_track_csv(config.data.embeddings, fps_of, TrackKind::kEmbedding);
  }
  if (config.window.use_vad) {
    if (config.data.vad.empty()) config_error("window.use_vad is set but data.vad is not");
    in.vad = read_vad_csv(config.data.vad);
  }
  for (const auto& model : config.fusion.base_models) {
    const FpsLookup model_fps = model.fps ? fps_lookup({}, model.fps) : fps_of;
    auto tracks = read_track_csv(model.predictions, model_fps, score_kind(config.task));
    if (!tracks.empty() && tracks.front().width() != task_width(config.task)) {
      throw Error(ErrorKind::kTaskMismatch, "base model '" + model.name + "' has " +
                                                std::to_string(tracks.front().width()) + " columns, task " +
                                                to_string(config.task) + " needs " +
                                                std::to_string(task_width(config.task)));
    }
    in.base_predictions.push_back(std::move(tracks));
  }
  // The fps map must be complete from here on; fill in the default.
  if (config.data.default_fps) {
    for (const auto& t : in.embeddings) in.fps.emplace(t.video_id(), *config.data.default_fps);
    if (in.labels) {
      for (const auto& t : in.labels->tracks) in.fps.emplace(t.video_id(), *config.data.default_fps);
    }
  }
  return in;
}

// ---------------------------------------------------------------------------
// Windows and features

WindowTable build_windows(const PipelineInputs& inputs, const PipelineConfig& config) {
  const WindowSpec spec{config.window.seconds, config.window.hop_seconds, config.fps_target};
  const std::size_t W = spec.window_frames();
  const std::size_t H = spec.hop_frames();
  const std::size_t center_begin = H < W ? (W - H) / 2 : 0;
  const std::size_t center_end = H < W ? center_begin + H : W;

  std::vector<FrameTrack> resampled(inputs.embeddings.size(), inputs.embeddings.empty() ? FrameTrack::contiguous("", Fps(1), Eigen::MatrixXd::Zero(1, 1), TrackKind::kEmbedding) : inputs.embeddings.front());
  parallel_for(inputs.embeddings.size(), config.workers,
               [&](std::size_t i) { resampled[i] = resample_track(inputs.embeddings[i], config.fps_target); });

  if (config.normalization == Normalization::kGlobalMinMax) {
    std::vector<FrameTrack> train;
    for (const auto& t : resampled) {
      if (inputs.split_of(t.video_id()) == config.train_split) train.push_back(t);
    }
    if (train.empty()) config_error("global_minmax needs at least one training video");
    const MinMaxScaler scaler = fit_minmax(train);
    for (auto& t : resampled) t = apply_minmax(t, scaler);
  } else if (config.normalization == Normalization::kPerVideoMinMax) {
    for (auto& t : resampled) t = per_video_minmax(t);
  }

  std::map<std::string, const VadTrack*> vad_of;
  for (const auto& v : inputs.vad) vad_of[v.video_id] = &v;

  const Task task = config.task;
  std::vector<std::vector<WindowRecord>> per_video(inputs.embeddings.size());
  parallel_for(inputs.embeddings.size(), config.workers, [&](std::size_t i) {
    const FrameTrack& source = inputs.embeddings[i];
    const FrameTrack& track = resampled[i];
    const std::string& video = source.video_id();

    // Targets and VAD live on source frames; resampling a dense copy over the
    // embedding's frames picks exactly the rows the embedding resample picked.
    const FrameTrack* label_track = nullptr;
    if (inputs.labels) {
      const std::size_t li = find_video(inputs.labels->tracks, video);
      if (li < inputs.labels->tracks.size()) label_track = &inputs.labels->tracks[li];
    }
    const Eigen::Index target_width = task == Task::kExpr ? 1 : 2;
    const FrameTrack dense_targets = resample_track(
        source.with_values(lookup_rows(label_track, source.frames(), target_width, task == Task::kExpr ? -1.0 : kNaN),
                           TrackKind::kEmbedding),
        config.fps_target);

    std::optional<std::vector<Segment>> segments;
    if (config.window.use_vad) {
      auto it = vad_of.find(video);
      if (it == vad_of.end()) throw Error(ErrorKind::kIo, "no VAD rows for video '" + video + "'");
      Eigen::MatrixXd flags = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(source.n_frames()), 1);
      const VadTrack& vad = *it->second;
      for (std::size_t r = 0; r < source.n_frames(); ++r) {
        auto f = std::lower_bound(vad.frames.begin(), vad.frames.end(), source.frames()[r]);
        if (f != vad.frames.end() && *f == source.frames()[r] && vad.voiced[static_cast<std::size_t>(f - vad.frames.begin())]) {
          flags(static_cast<Eigen::Index>(r), 0) = 1.0;
        }
      }
      const FrameTrack mask_track = resample_track(source.with_values(flags, TrackKind::kEmbedding), config.fps_target);
      VadMask mask{video, std::vector<bool>(mask_track.n_frames())};
      for (std::size_t r = 0; r < mask_track.n_frames(); ++r) mask.voiced[r] = mask_track.values()(static_cast<Eigen::Index>(r), 0) > 0.5;
      segments = voiced_segments(mask);
    }

    const WindowBatch batch = slice_windows(track, spec, segments);
    std::vector<WindowRecord>& out = per_video[i];
    for (std::size_t w = 0; w < batch.size(); ++w) {
      WindowRecord rec;
      rec.video_id = video;
      rec.window = w;
      rec.payload = batch.payload[w];
      rec.valid = batch.pad_mask[w];
      rec.center.resize(W);
      rec.frames.resize(W);
      if (task == Task::kExpr) {
        rec.labels.resize(W);
      } else {
        rec.va.resize(static_cast<Eigen::Index>(W), 2);
      }
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t row = batch.rows[w][j];
        rec.frames[j] = track.frames()[row];
        rec.center[j] = j >= center_begin && j < center_end;
        if (task == Task::kExpr) {
          rec.labels[j] = static_cast<int>(dense_targets.values()(static_cast<Eigen::Index>(row), 0));
        } else {
          rec.va.row(static_cast<Eigen::Index>(j)) = dense_targets.values().row(static_cast<Eigen::Index>(row));
        }
      }
      out.push_back(std::move(rec));
    }
  });

  WindowTable table;
  table.task = task;
  table.fps = config.fps_target;
  for (auto& v : per_video) {
    for (auto& rec : v) table.windows.push_back(std::move(rec));
  }
  return table;
}

std::string window_table_csv(const WindowTable& table) {
  std::string out = "# fps=" + table.fps.str() + "\n";
  out += "video_id,window,row,frame,valid,center";
  out += table.task == Task::kExpr ? ",label" : ",valence,arousal";
  const Eigen::Index d = table.windows.empty() ? 0 : table.windows.front().payload.cols();
  for (Eigen::Index j = 0; j < d; ++j) out += ",c" + std::to_string(j);
  out += "\n";
  for (const auto& rec : table.windows) {
    for (std::size_t r = 0; r < rec.frames.size(); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      out += rec.video_id + "," + std::to_string(rec.window) + "," + std::to_string(r) + "," +
             std::to_string(rec.frames[r]) + (rec.valid[r] ? ",1" : ",0") + (rec.center[r] ? ",1" : ",0");
      if (table.task == Task::kExpr) {
        out += "," + std::to_string(rec.labels[r]);
      } else {
        out += "," + format_number(rec.va(ri, 0)) + "," + format_number(rec.va(ri, 1));
      }
      for (Eigen::Index j = 0; j < d; ++j) out += "," + format_number(rec.payload(ri, j));
      out += "\n";
    }
  }
  return out;
}

namespace {

Fps read_fps_comment(const std::string& path) {
  const std::string text = read_text_file(path);
  if (text.rfind("# fps=", 0) != 0) throw Error(ErrorKind::kIo, path + ": missing '# fps=' line");
  const auto eol = text.find('\n');
  return Fps::parse(text.substr(6, eol == std::string::npos ? std::string::npos : eol - 6));
}

std::vector<std::size_t> value_columns(const CsvTable& t) {
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const std::string& h = t.header[c];
    if (h.size() > 1 && (h[0] == 'c' || h[0] == 'f') &&
        std::all_of(h.begin() + 1, h.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      cols.push_back(c);
    }
  }
  return cols;
}

}  // namespace

WindowTable read_window_table(const std::string& path) {
  WindowTable table;
  table.fps = read_fps_comment(path);
  const CsvTable csv = read_csv(path);
  const bool expr = std::find(csv.header.begin(), csv.header.end(), "label") != csv.header.end();
  table.task = expr ? Task::kExpr : Task::kVa;
  const std::size_t vid = csv.column("video_id"), win = csv.column("window"), frm = csv.column("frame"),
                    val = csv.column("valid"), cen = csv.column("center");
  const std::vector<std::size_t> cols = value_columns(csv);

  std::size_t r = 0;
  while (r < csv.rows.size()) {
    std::size_t end = r;
    while (end < csv.rows.size() && csv.rows[end][vid] == csv.rows[r][vid] && csv.rows[end][win] == csv.rows[r][win]) ++end;
    WindowRecord rec;
    rec.video_id = csv.rows[r][vid];
    rec.window = std::stoul(csv.rows[r][win]);
    const auto n = static_cast<Eigen::Index>(end - r);
    rec.payload.resize(n, static_cast<Eigen::Index>(cols.size()));
    if (expr) {
      rec.labels.resize(static_cast<std::size_t>(n));
    } else {
      rec.va.resize(n, 2);
    }
    for (std::size_t i = r; i < end; ++i) {
      const auto& row = csv.rows[i];
      const auto k = static_cast<Eigen::Index>(i - r);
      rec.frames.push_back(std::stoll(row[frm]));
      rec.valid.push_back(row[val] == "1");
      rec.center.push_back(row[cen] == "1");
      if (expr) {
        rec.labels[static_cast<std::size_t>(k)] = std::stoi(row[csv.column("label")]);
      } else {
        rec.va(k, 0) = parse_number(row[csv.column("valence")]);
        rec.va(k, 1) = parse_number(row[csv.column("arousal")]);
      }
      for (std::size_t j = 0; j < cols.size(); ++j) rec.payload(k, static_cast<Eigen::Index>(j)) = parse_number(row[cols[j]]);
    }
    table.windows.push_back(std::move(rec));
    r = end;
  }
  return table;
}

bool FeatureTable::has_target(const FeatureRow& row) const {
  return task == Task::kExpr ? row.label >= 0 : !std::isnan(row.va(0)) && !std::isnan(row.va(1));
}

FeatureTable compute_features(const WindowTable& windows, const FunctionalSet& set) {
  FeatureTable table;
  table.task = windows.task;
  table.fps = windows.fps;
  for (const auto& rec : windows.windows) {
    FeatureRow row;
    row.video_id = rec.video_id;
    row.window = rec.window;
    row.x = functionals(rec.payload, set, &rec.valid);

    std::int64_t lo = std::numeric_limits<std::int64_t>::max();
    std::int64_t hi = std::numeric_limits<std::int64_t>::min();
    for (int pass = 0; pass < 2 && lo > hi; ++pass) {
      for (std::size_t j = 0; j < rec.frames.size(); ++j) {
        if (rec.valid[j] && (pass == 1 || rec.center[j])) {
          lo = std::min(lo, rec.frames[j]);
          hi = std::max(hi, rec.frames[j]);
        }
      }
    }
    row.span_begin = lo;
    row.span_end = hi + 1;

    if (windows.task == Task::kExpr) {
      row.label = majority_label(rec.labels, rec.valid);
    } else {
      Eigen::Vector2d sum(0.0, 0.0);
      std::size_t used = 0;
      for (std::size_t j = 0; j < rec.frames.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        if (!rec.valid[j] || std::isnan(rec.va(jj, 0)) || std::isnan(rec.va(jj, 1))) continue;
        sum += rec.va.row(jj).transpose();
        ++used;
      }
      row.va = used == 0 ? Eigen::Vector2d(kNaN, kNaN) : Eigen::Vector2d(sum / static_cast<double>(used));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string feature_table_csv(const FeatureTable& table) {
  std::string out = "# fps=" + table.fps.str() + "\n";
  out += "video_id,window,span_begin,span_end";
  out += table.task == Task::kExpr ? ",label" : ",valence,arousal";
  const Eigen::Index d = table.rows.empty() ? 0 : table.rows.front().x.size();
  for (Eigen::Index j = 0; j < d; ++j) out += ",f" + std::to_string(j);
  out += "\n";
  for (const auto& row : table.rows) {
    out += row.video_id + "," + std::to_string(row.window) + "," + std::to_string(row.span_begin) + "," +
           std::to_string(row.span_end);
    if (table.task == Task::kExpr) {
      out += "," + std::to_string(row.label);
    } else {
      out += "," + format_number(row.va(0)) + "," + format_number(row.va(1));
    }
    for (Eigen::Index j = 0; j < d; ++j) out += "," + format_number(row.x(j));
    out += "\n";
  }
  return out;
}

FeatureTable read_feature_table(const std::string& path) {
  FeatureTable table;
  table.fps = read_fps_comment(path);
  const CsvTable csv = read_csv(path);
  const bool expr = std::find(csv.header.begin(), csv.header.end(), "label") != csv.header.end();
  table.task = expr ? Task::kExpr : Task::kVa;
  const std::vector<std::size_t> cols = value_columns(csv);
  for (const auto& cells : csv.rows) {
    FeatureRow row;
    row.video_id = cells[csv.column("video_id")];
    row.window = std::stoul(cells[csv.column("window")]);
    row.span_begin = std::stoll(cells[csv.column("span_begin")]);
    row.span_end = std::stoll(cells[csv.column("span_end")]);
    if (expr) {
      row.label = std::stoi(cells[csv.column("label")]);
    } else {
      row.va = {parse_number(cells[csv.column("valence")]), parse_number(cells[csv.column("arousal")])};
    }
    row.x.resize(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) row.x(static_cast<Eigen::Index>(j)) = parse_number(cells[cols[j]]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------
// KELM

KelmTraining train_kelm_stage(const FeatureTable& features, const std::map<std::string, std::string>& splits,
                              const PipelineConfig& config) {
  auto split_of = [&](const std::string& v) {
    auto it = splits.find(v);
    return it == splits.end() ? std::string() : it->second;
  };
  std::vector<const FeatureRow*> train, dev;
  KelmTraining out;
  for (const auto& row : features.rows) {
    const std::string split = split_of(row.video_id);
    if (split == config.train_split) {
      if (features.has_target(row)) {
        train.push_back(&row);
      } else {
        ++out.dropped_windows;
      }
    } else if (split == config.dev_split && features.has_target(row)) {
      dev.push_back(&row);
    }
  }
  if (train.empty()) config_error("no labelled training windows in split '" + config.train_split + "'");
  out.train_windows = train.size();

  auto stack = [](const std::vector<const FeatureRow*>& rows) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), rows.front()->x.size());
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = rows[i]->x.transpose();
    return X;
  };
  const Eigen::MatrixXd X = stack(train);

  const bool expr = features.task == Task::kExpr;
  Eigen::MatrixXd T;
  std::optional<Eigen::VectorXd> weights;
  if (expr) {
    std::vector<int> y;
    for (const auto* r : train) y.push_back(r->label);
    T = encode_targets(y, kExprClasses);
    if (config.kelm.weighted) weights = class_weights(y);
  } else {
    T.resize(X.rows(), 2);
    for (std::size_t i = 0; i < train.size(); ++i) T.row(static_cast<Eigen::Index>(i)) = train[i]->va.transpose();
  }

  KernelSpec kernel;
  kernel.kind = config.kelm.kernel;
  if (config.kelm.gamma == "median") {
    kernel.gamma = median_heuristic_gamma(X);
  } else if (config.kelm.gamma != "inverse_dim") {
    try {
      kernel.gamma = parse_number(config.kelm.gamma);
    } catch (const Error&) {
      config_error("kelm.gamma must be inverse_dim, median or a positive number");
    }
  }
  const KelmTask task = expr ? KelmTask::kClassification : KelmTask::kRegression;

  std::vector<double> grid = config.kelm.c_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (dev.empty()) {
    if (grid.size() > 1) config_error("no labelled development windows in split '" + config.dev_split + "' to select C");
    out.selection.C = grid.front();
    out.selection.dev_score = kNaN;
  } else {
    const Eigen::MatrixXd dev_X = stack(dev);
    DevTargets truth;
    if (expr) {
      for (const auto* r : dev) truth.labels.push_back(r->label);
    } else {
      truth.values.resize(dev_X.rows(), 2);
      for (std::size_t i = 0; i < dev.size(); ++i) truth.values.row(static_cast<Eigen::Index>(i)) = dev[i]->va.transpose();
    }
    out.selection = select_C(X, T, grid, dev_X, truth, expr ? DevMetric::kMacroF1 : DevMetric::kMeanCcc, kernel, task,
                             weights);
  }
  out.model = train_kelm(X, T, out.selection.C, kernel, task, weights);
  return out;
}

std::vector<FrameTrack> predict_kelm_stage(const KelmModel& model, const FeatureTable& features) {
  if (features.rows.empty()) return {};
  Eigen::MatrixXd X(static_cast<Eigen::Index>(features.rows.size()), features.rows.front().x.size());
  for (std::size_t i = 0; i < features.rows.size(); ++i) X.row(static_cast<Eigen::Index>(i)) = features.rows[i].x.transpose();
  const Eigen::MatrixXd scores = predict_kelm(model, X).scores;

  std::map<std::string, std::map<std::int64_t, Eigen::Index>> by_video;
  for (std::size_t i = 0; i < features.rows.size(); ++i) {
    const FeatureRow& row = features.rows[i];
    auto& frames = by_video[row.video_id];
    for (std::int64_t f = row.span_begin; f < row.span_end; ++f) frames[f] = static_cast<Eigen::Index>(i);
  }
  const TrackKind kind = score_kind(features.task);
  std::vector<FrameTrack> out;
  for (const auto& [video, frames] : by_video) {
    std::vector<std::int64_t> idx;
    Eigen::MatrixXd values(static_cast<Eigen::Index>(frames.size()), scores.cols());
    Eigen::Index r = 0;
    for (const auto& [frame, row] : frames) {
      idx.push_back(frame);
      values.row(r++) = scores.row(row);
    }
    out.emplace_back(video, features.fps, std::move(idx), std::move(values), kind);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Post-processing

std::vector<Timeline> timelines_from_tracks(const std::vector<FrameTrack>& tracks) {
  std::vector<Timeline> out;
  for (const auto& t : tracks) out.push_back({t.video_id(), t.fps(), t.frames()});
  std::sort(out.begin(), out.end(), [](const Timeline& a, const Timeline& b) { return a.video_id < b.video_id; });
  return out;
}

std::vector<FrameTrack> align_to_timelines(const std::vector<FrameTrack>& preds, const std::vector<Timeline>& timelines,
                                           Task task, std::size_t workers) {
  std::map<std::string, const FrameTrack*> by_video;
  for (const auto& p : preds) {
    if (p.width() != task_width(task)) {
      throw Error(ErrorKind::kTaskMismatch, "prediction for '" + p.video_id() + "' has " + std::to_string(p.width()) +
                                                " columns, task " + to_string(task) + " needs " +
                                                std::to_string(task_width(task)));
    }
    by_video[p.video_id()] = &p;
  }
  const TrackKind kind = score_kind(task);
  std::vector<std::optional<FrameTrack>> slots(timelines.size());
  parallel_for(timelines.size(), workers, [&](std::size_t i) {
    const Timeline& tl = timelines[i];
    auto it = by_video.find(tl.video_id);
    if (it == by_video.end()) {
      slots[i].emplace(tl.video_id, tl.fps, tl.frames,
                       Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tl.frames.size()),
                                             static_cast<Eigen::Index>(task_width(task))),
                       kind);
    } else {
      const FrameTrack interp = interpolate_to(*it->second, tl.fps, tl.frames);
      slots[i].emplace(interp.with_values(interp.values(), kind));
    }
  });
  std::vector<FrameTrack> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<FrameTrack> smooth_tracks(const std::vector<FrameTrack>& tracks, const SmoothingSpec& spec,
                                      std::size_t workers) {
  std::vector<std::optional<FrameTrack>> slots(tracks.size());
  parallel_for(tracks.size(), workers, [&](std::size_t i) { slots[i].emplace(hamming_smooth(tracks[i], spec)); });
  std::vector<FrameTrack> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

namespace {

void check_model_layout(const ModelTracks& models) {
  if (models.empty()) throw Error(ErrorKind::kAlignment, "no models to fuse");
  for (std::size_t m = 1; m < models.size(); ++m) {
    if (models[m].size() != models.front().size()) {
      throw Error(ErrorKind::kAlignment, "model " + std::to_string(m) + " covers " + std::to_string(models[m].size()) +
                                             " videos, model 0 covers " + std::to_string(models.front().size()));
    }
  }
}

std::vector<FrameTrack> video_slice(const ModelTracks& models, std::size_t v) {
  std::vector<FrameTrack> out;
  for (const auto& m : models) out.push_back(m[v]);
  return out;
}

}  // namespace

std::vector<FrameTrack> fuse_mean_stage(const ModelTracks& models) {
  check_model_layout(models);
  std::vector<FrameTrack> out;
  for (std::size_t v = 0; v < models.front().size(); ++v) out.push_back(mean_fusion(video_slice(models, v)));
  return out;
}

DevSet collect_dev_set(const ModelTracks& models, const LabelSet& truth, const std::map<std::string, std::string>& splits,
                       const std::string& dev_split, Task task) {
  check_model_layout(models);
  DevSet dev;
  dev.preds.resize(models.size());
  std::vector<std::vector<Eigen::RowVectorXd>> rows(models.size());
  std::vector<Eigen::RowVectorXd> truth_rows;
  for (std::size_t v = 0; v < models.front().size(); ++v) {
    const std::vector<FrameTrack> tracks = video_slice(models, v);
    check_aligned(tracks);
    const std::string& video = tracks.front().video_id();
    auto split = splits.find(video);
    if (split == splits.end() || split->second != dev_split) continue;
    const std::size_t ti = find_video(truth.tracks, video);
    if (ti == truth.tracks.size()) continue;
    const FrameTrack& gt = truth.tracks[ti];
    const auto& frames = tracks.front().frames();
    for (std::size_t r = 0; r < frames.size(); ++r) {
      auto it = std::lower_bound(gt.frames().begin(), gt.frames().end(), frames[r]);
      if (it == gt.frames().end() || *it != frames[r]) continue;
      truth_rows.push_back(gt.values().row(it - gt.frames().begin()));
      for (std::size_t m = 0; m < models.size(); ++m) rows[m].push_back(tracks[m].values().row(static_cast<Eigen::Index>(r)));
    }
  }
  if (truth_rows.empty()) config_error("no labelled development frames in split '" + dev_split + "' to fit fusion");
  const auto n = static_cast<Eigen::Index>(truth_rows.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    dev.preds[m].resize(n, rows[m].front().size());
    for (Eigen::Index i = 0; i < n; ++i) dev.preds[m].row(i) = rows[m][static_cast<std::size_t>(i)];
  }
  if (task == Task::kExpr) {
    for (const auto& r : truth_rows) dev.truth.labels.push_back(static_cast<int>(r(0)));
  } else {
    dev.truth.values.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) dev.truth.values.row(i) = truth_rows[static_cast<std::size_t>(i)];
  }
  return dev;
}

DwfFit fit_dwf_stage(const ModelTracks& models, const LabelSet& truth, const std::map<std::string, std::string>& splits,
                     const std::string& dev_split, Task task, std::size_t pool_size, double alpha, bool include_selectors,
                     std::uint64_t seed, std::size_t workers) {
  const DevSet dev = collect_dev_set(models, truth, splits, dev_split, task);
  const DevMetric metric = task == Task::kExpr ? DevMetric::kMacroF1 : DevMetric::kMeanCcc;
  const std::size_t K = task_width(task);
  DwfFit fit;
  fit.pool = sample_pool(models.size(), K, pool_size, alpha, seed, include_selectors);
  fit.result = dwf_search(fit.pool, dev.preds, dev.truth, metric, workers);
  for (const auto& p : dev.preds) {
    fit.single_model_scores.push_back(score_predictions(task == Task::kVa ? Eigen::MatrixXd(p.cwiseMax(-1.0).cwiseMin(1.0)) : p,
                                                        dev.truth, metric, K));
  }
  return fit;
}

std::vector<FrameTrack> apply_dwf_stage(const ModelTracks& models, const FusionMatrix& matrix) {
  check_model_layout(models);
  std::vector<FrameTrack> out;
  for (std::size_t v = 0; v < models.front().size(); ++v) out.push_back(apply_fusion(video_slice(models, v), matrix));
  return out;
}

RfFusionModel fit_rf_stage(const ModelTracks& models, const LabelSet& truth,
                           const std::map<std::string, std::string>& splits, const std::string& dev_split, Task task,
                           const std::vector<std::size_t>& tree_grid, const ForestSpec& spec) {
  const DevSet dev = collect_dev_set(models, truth, splits, dev_split, task);
  return fit_rf_fusion(dev.preds, dev.truth, task, tree_grid, spec);
}

std::vector<FrameTrack> apply_rf_stage(const ModelTracks& models, const RfFusionModel& model) {
  check_model_layout(models);
  std::vector<FrameTrack> out;
  for (std::size_t v = 0; v < models.front().size(); ++v) {
    const std::vector<FrameTrack> tracks = video_slice(models, v);
    check_aligned(tracks);
    std::vector<Eigen::MatrixXd> values;
    for (const auto& t : tracks) values.push_back(t.values());
    out.push_back(tracks.front().with_values(apply_rf_fusion(model, values), tracks.front().kind()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_tracks(const std::vector<FrameTrack>& preds, const LabelSet& truth, Task task,
                           const std::vector<std::string>& videos, bool exclude_absent) {
  if (truth.task != task) {
    throw Error(ErrorKind::kTaskMismatch, std::string("truth holds ") + to_string(truth.task) + " labels, task is " +
                                              to_string(task));
  }
  const std::set<std::string> wanted(videos.begin(), videos.end());
  std::vector<int> y_true, y_pred;
  std::vector<Eigen::RowVector2d> t_rows, p_rows;
  std::vector<const FrameTrack*> sorted;
  for (const auto& p : preds) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](const FrameTrack* a, const FrameTrack* b) { return a->video_id() < b->video_id(); });

  for (const FrameTrack* p : sorted) {
    if (!wanted.empty() && !wanted.count(p->video_id())) continue;
    const std::size_t ti = find_video(truth.tracks, p->video_id());
    if (ti == truth.tracks.size()) continue;
    const FrameTrack& gt = truth.tracks[ti];
    std::vector<int> labels;
    if (task == Task::kExpr) {
      if (p->width() == 1) {
        for (Eigen::Index i = 0; i < p->values().rows(); ++i) labels.push_back(static_cast<int>(p->values()(i, 0)));
      } else if (p->width() == kExprClasses) {
        labels = argmax_rows(p->values());
      } else {
        throw Error(ErrorKind::kTaskMismatch, "EXPR predictions need 1 label column or 8 score columns, got " +
                                                  std::to_string(p->width()));
      }
    } else if (p->width() != 2) {
      throw Error(ErrorKind::kTaskMismatch, "VA predictions need 2 columns, got " + std::to_string(p->width()));
    }
    for (std::size_t r = 0; r < p->n_frames(); ++r) {
      auto it = std::lower_bound(gt.frames().begin(), gt.frames().end(), p->frames()[r]);
      if (it == gt.frames().end() || *it != p->frames()[r]) continue;
      const Eigen::Index g = it - gt.frames().begin();
      if (task == Task::kExpr) {
        y_true.push_back(static_cast<int>(gt.values()(g, 0)));
        y_pred.push_back(labels[r]);
      } else {
        t_rows.push_back(gt.values().row(g));
        p_rows.push_back(p->values().row(static_cast<Eigen::Index>(r)));
      }
    }
  }
  if (task == Task::kExpr) {
    if (y_true.empty()) throw Error(ErrorKind::kAlignment, "no (video, frame) keys shared by predictions and truth");
    return classification_report(y_true, y_pred, kExprClasses, exclude_absent);
  }
  if (t_rows.empty()) throw Error(ErrorKind::kAlignment, "no (video, frame) keys shared by predictions and truth");
  Eigen::MatrixXd t(static_cast<Eigen::Index>(t_rows.size()), 2), p(static_cast<Eigen::Index>(p_rows.size()), 2);
  for (std::size_t i = 0; i < t_rows.size(); ++i) {
    t.row(static_cast<Eigen::Index>(i)) = t_rows[i];
    p.row(static_cast<Eigen::Index>(i)) = p_rows[i];
  }
  return va_report(t, p);
}

EvalReport evaluate_files(const std::string& pred_csv, const std::string& truth_csv, Task task) {
  // Only the (video, frame) keys matter here, so any rate will do.
  const FpsLookup any_rate = fps_lookup({}, Fps(1));
  const LabelSet truth = read_label_csv(truth_csv, any_rate);
  if (truth.task != task) {
    throw Error(ErrorKind::kTaskMismatch, "'" + truth_csv + "' holds " + to_string(truth.task) + " labels, task is " +
                                              to_string(task));
  }
  const auto preds = read_track_csv(pred_csv, any_rate, TrackKind::kEmbedding);
  return evaluate_tracks(preds, truth, task);
}

// ---------------------------------------------------------------------------
// Full run

RunResult run_pipeline(const PipelineConfig& config) {
  StageClock clock;
  RunResult result;
  const std::string config_hash = config.hash();

  const PipelineInputs inputs = clock.run("ingest", [&] { return load_inputs(config); });
  if (!inputs.labels) config_error("data.labels is required for a run (timelines and evaluation)");
  const LabelSet& labels = *inputs.labels;

  const fs::path run_dir = fs::path(config.out_dir) / ("run-" + config_hash.substr(0, 16));
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create run directory '" + run_dir.string() + "': " + ec.message());
  RunWriter writer(run_dir);
  result.run_dir = run_dir.string();

  json selection = json::object();
  std::vector<std::string> model_names;
  std::vector<std::vector<FrameTrack>> raw_models;

  if (config.kelm.enabled) {
    const WindowTable windows = clock.run("window", [&] { return build_windows(inputs, config); });
    writer.write("windows.csv", window_table_csv(windows));
    const FeatureTable features = clock.run("features", [&] { return compute_features(windows, config.functionals); });
    writer.write("features.csv", feature_table_csv(features));
    const KelmTraining training = clock.run("train-kelm", [&] { return train_kelm_stage(features, inputs.splits, config); });
    writer.write("kelm_model.txt", serialize_kelm(training.model));
    std::string table = "C,dev_score\n";
    for (const auto& [c, s] : training.selection.table) table += format_number(c) + "," + format_number(s) + "\n";
    writer.write("kelm_c_selection.csv", table);
    selection["kelm_C"] = training.selection.C;
    selection["kelm_train_windows"] = training.train_windows;
    selection["kelm_dropped_windows"] = training.dropped_windows;
    if (training.dropped_windows > 0) {
      result.warnings.push_back(std::to_string(training.dropped_windows) +
                                " training windows had no valid label and were dropped");
    }
    auto preds = clock.run("predict-kelm", [&] { return predict_kelm_stage(training.model, features); });
    writer.write("kelm_predictions.csv", track_csv_text(preds));
    model_names.push_back("kelm");
    raw_models.push_back(std::move(preds));
  }
  for (std::size_t m = 0; m < config.fusion.base_models.size(); ++m) {
    model_names.push_back(config.fusion.base_models[m].name);
    raw_models.push_back(inputs.base_predictions[m]);
  }
  if (raw_models.empty()) config_error("nothing to predict: enable kelm or list fusion.base_models");
  if (raw_models.size() > 1 && config.fusion.method == FusionMethod::kNone) {
    config_error(std::to_string(raw_models.size()) + " models but fusion.method is none");
  }

  // Videos to predict: evaluation splits, plus the dev split when fusion is fitted.
  const bool fits_fusion = config.fusion.method == FusionMethod::kDwf || config.fusion.method == FusionMethod::kRf;
  std::set<std::string> wanted_splits(config.eval_splits.begin(), config.eval_splits.end());
  if (fits_fusion) wanted_splits.insert(config.dev_split);
  std::vector<Timeline> timelines;
  {
    std::set<std::string> seen;
    auto consider = [&](const std::vector<FrameTrack>& tracks) {
      for (const auto& t : tracks) {
        const bool selected = inputs.splits.empty() || wanted_splits.count(inputs.split_of(t.video_id()));
        if (selected && seen.insert(t.video_id()).second) timelines.push_back({t.video_id(), t.fps(), t.frames()});
      }
    };
    consider(labels.tracks);  // ground truth first: predictions must cover its keys
    consider(inputs.embeddings);
    for (const auto& m : inputs.base_predictions) consider(m);
    std::sort(timelines.begin(), timelines.end(), [](const Timeline& a, const Timeline& b) { return a.video_id < b.video_id; });
  }

  ModelTracks aligned = clock.run("interpolate", [&] {
    ModelTracks out;
    for (const auto& m : raw_models) out.push_back(align_to_timelines(m, timelines, config.task, config.workers));
    return out;
  });

  std::vector<FrameTrack> fused = clock.run("fuse", [&]() -> std::vector<FrameTrack> {
    switch (config.fusion.method) {
      case FusionMethod::kNone: return aligned.front();
      case FusionMethod::kMean: return fuse_mean_stage(aligned);
      case FusionMethod::kDwf: {
        const DwfFit fit = fit_dwf_stage(aligned, labels, inputs.splits, config.dev_split, config.task,
                                         config.fusion.pool_size, config.fusion.alpha, config.fusion.include_selectors,
                                         config.seed, config.workers);
        const FusionMatrix& best = fit.pool.matrices[fit.result.best_index];
        writer.write("fusion_matrix.csv", fusion_matrix_csv(best, model_names,
                                                            config.task == Task::kVa ? std::vector<std::string>{"valence", "arousal"}
                                                                                     : std::vector<std::string>{}));
        writer.write("dwf_scores.csv", score_table_csv(fit.result));
        selection["dwf_pool_index"] = fit.result.best_index;
        selection["dwf_dev_score"] = fit.result.dev_score;
        selection["dwf_single_model_dev_scores"] = fit.single_model_scores;
        return apply_dwf_stage(aligned, best);
      }
      case FusionMethod::kRf: {
        ForestSpec spec;
        spec.seed = config.seed;
        spec.max_depth = config.fusion.max_depth;
        const RfFusionModel rf = fit_rf_stage(aligned, labels, inputs.splits, config.dev_split, config.task,
                                              config.fusion.tree_grid, spec);
        std::string oob = "output,n_trees,oob_score\n";
        for (std::size_t k = 0; k < rf.forests.size(); ++k) {
          writer.write("rf_fusion_" + std::to_string(k) + ".txt", serialize_forest(rf.forests[k]));
          for (const auto& [n, s] : rf.selections[k].oob_scores) {
            oob += std::to_string(k) + "," + std::to_string(n) + "," + format_number(s) + "\n";
          }
        }
        writer.write("rf_oob.csv", oob);
        std::vector<std::size_t> trees;
        for (const auto& s : rf.selections) trees.push_back(s.n_trees);
        selection["rf_n_trees"] = trees;
        selection["rf_fit_score"] = rf.fit_score;
        selection["rf_oob_score"] = rf.oob_score;
        std::ostringstream warn;
        warn << "rf fusion is fit on the development split: fit-split "
             << (config.task == Task::kExpr ? "accuracy " : "-MSE ") << rf.fit_oob_units << " vs out-of-bag "
             << rf.oob_score << "; development scores of this system are optimistic (overfitting)";
        result.warnings.push_back(warn.str());
        return apply_rf_stage(aligned, rf);
      }
    }
    return aligned.front();
  });

  if (config.postprocess.smooth) {
    fused = clock.run("smooth", [&] {
      return smooth_tracks(fused, SmoothingSpec{config.postprocess.smooth_seconds}, config.workers);
    });
  }

  clock.run("evaluate", [&] {
    std::map<std::string, std::vector<std::string>> videos_of_split;
    for (const auto& t : fused) videos_of_split[inputs.splits.empty() ? "all" : inputs.split_of(t.video_id())].push_back(t.video_id());
    for (const auto& [split, videos] : videos_of_split) {
      if (!inputs.splits.empty() && std::find(config.eval_splits.begin(), config.eval_splits.end(), split) == config.eval_splits.end()) {
        continue;
      }
      const std::set<std::string> members(videos.begin(), videos.end());
      writer.write("predictions_" + split + ".csv", track_csv_text(tracks_of_videos(fused, members)));
      bool labelled = false;
      for (const auto& v : videos) labelled = labelled || find_video(labels.tracks, v) < labels.tracks.size();
      if (!labelled) continue;
      const EvalReport report = evaluate_tracks(fused, labels, config.task, videos);
      writer.write("report_" + split + ".txt", report_text(report));
      writer.write("report_" + split + ".csv", report_csv(report));
      result.reports[split] = report;
    }
  });

  json manifest;
  manifest["config_hash"] = config_hash;
  manifest["seed"] = config.seed;
  manifest["task"] = to_string(config.task);
  manifest["config"] = config.to_json();
  json input_digests = json::object();
  for (const auto& [role, path] : std::vector<std::pair<std::string, std::string>>{
           {"embeddings", config.data.embeddings}, {"labels", config.data.labels}, {"vad", config.data.vad},
           {"fps", config.data.fps}, {"splits", config.data.splits}}) {
    if (!path.empty() && (role != "embeddings" || config.kelm.enabled) && (role != "vad" || config.window.use_vad)) {
      input_digests[role] = sha256_file(path);
    }
  }
  for (const auto& m : config.fusion.base_models) input_digests["base_model:" + m.name] = sha256_file(m.predictions);
  manifest["inputs"] = input_digests;
  manifest["outputs"] = writer.outputs();
  manifest["selection"] = selection;
  json scores = json::object();
  for (const auto& [split, r] : result.reports) scores[split] = r.challenge_score();
  manifest["scores"] = scores;
  result.manifest_path = (run_dir / "manifest.json").string();
  write_text_file(result.manifest_path, manifest.dump(2) + "\n");
  write_text_file((run_dir / "timings.csv").string(), clock.csv());
  return result;
}

}  // namespace affect
