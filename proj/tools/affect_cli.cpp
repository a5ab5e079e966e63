// affect: command-line front end for the audiovisual affect toolkit.
//
//   affect synth --out-dir data --seed 1
//   affect run --config run.json
//
// Every stage of `run` is also available as its own subcommand reading and
// writing the same intermediate files.

#include "affect/error.hpp"
#include "affect/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>

namespace {

using namespace affect;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out_dir;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--workers", c.workers, "Worker threads (overrides the config)");
  cmd->add_option("--out-dir", c.out_dir, "Output directory (overrides the config)");
}

// Flags beat the file, the file beats defaults.
PipelineConfig resolve_config(const Common& c) {
  PipelineConfig config = c.config.empty() ? PipelineConfig{} : PipelineConfig::load(c.config);
  if (c.seed) config.seed = *c.seed;
  if (c.workers) config.workers = std::max<std::size_t>(1, *c.workers);
  if (!c.out_dir.empty()) config.out_dir = c.out_dir;
  return config;
}

PipelineConfig require_config(const Common& c, const char* command) {
  if (c.config.empty()) throw Error(ErrorKind::kConfig, std::string(command) + " needs --config");
  return resolve_config(c);
}

TrackKind score_kind(Task task) { return task == Task::kExpr ? TrackKind::kClassScores : TrackKind::kVa; }

// Output path: explicit, or <out_dir>/<name>.
std::string output_path(const std::string& explicit_path, const std::string& out_dir, const std::string& name) {
  if (!explicit_path.empty()) return explicit_path;
  std::filesystem::create_directories(out_dir.empty() ? "." : out_dir);
  return (std::filesystem::path(out_dir.empty() ? "." : out_dir) / name).string();
}

struct RateOptions {
  std::string fps_file;
  std::string pred_fps;

  void add(CLI::App* cmd) {
    cmd->add_option("--fps", fps_file, "video_id,fps table for prediction and label files");
    cmd->add_option("--pred-fps", pred_fps, "Single rate for every prediction video (e.g. 5 or 30000/1001)");
  }

  FpsLookup labels() const {
    if (fps_file.empty()) throw Error(ErrorKind::kConfig, "--fps is required to place labels on a timeline");
    return fps_lookup(read_fps_csv(fps_file));
  }
  FpsLookup predictions() const {
    if (!pred_fps.empty()) return fps_lookup({}, Fps::parse(pred_fps));
    if (fps_file.empty()) throw Error(ErrorKind::kConfig, "give --pred-fps or --fps for prediction files");
    return fps_lookup(read_fps_csv(fps_file));
  }
};

Task task_option(const std::string& text) {
  try {
    return parse_task(text);
  } catch (const Error& e) {
    throw Error(ErrorKind::kInvalidArgument, e.what());
  }
}

ModelTracks read_models(const std::vector<std::string>& paths, const FpsLookup& fps_of, Task task) {
  ModelTracks models;
  for (const auto& p : paths) models.push_back(read_track_csv(p, fps_of, score_kind(task)));
  return models;
}

void print_warning(const std::string& w) { std::fprintf(stderr, "warning: %s\n", w.c_str()); }

template <typename Fn>
void stage(const char* name, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw with_stage(e, name);
  } catch (const nlohmann::json::exception& e) {
    throw with_stage(Error(ErrorKind::kConfig, e.what()), name);
  } catch (const std::filesystem::filesystem_error& e) {
    throw with_stage(Error(ErrorKind::kIo, e.what()), name);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audiovisual affect recognition toolkit: windowing, KELM, fusion, evaluation"};
  app.require_subcommand(1);

  // synth
  Common synth_c;
  SyntheticSpec synth_spec;
  std::string synth_task = "expr", synth_fps = "10";
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  add_common(synth, synth_c);
  synth->add_option("--videos", synth_spec.n_videos, "Number of videos")->capture_default_str();
  synth->add_option("--frames", synth_spec.frames_per_video, "Frames per video")->capture_default_str();
  synth->add_option("--dim", synth_spec.embedding_dim, "Embedding width")->capture_default_str();
  synth->add_option("--task", synth_task, "expr or va")->capture_default_str();
  synth->add_option("--noise", synth_spec.noise, "Embedding noise std-dev")->capture_default_str();
  synth->add_option("--fps", synth_fps, "Frame rate of every video")->capture_default_str();
  synth->add_option("--priors", synth_spec.class_priors, "Class priors (EXPR)");

  // window
  Common window_c;
  std::string window_out;
  auto* window = app.add_subcommand("window", "Resample, normalise and slice embeddings into windows");
  add_common(window, window_c);
  window->add_option("-o,--out", window_out, "Window table CSV");

  // features
  Common features_c;
  std::string features_in, features_out, features_set;
  auto* features = app.add_subcommand("features", "Functionals and window targets from a window table");
  add_common(features, features_c);
  features->add_option("--windows", features_in, "Window table CSV")->required();
  features->add_option("--functionals", features_set, "Comma-separated subset of mean,max,min");
  features->add_option("-o,--out", features_out, "Feature table CSV");

  // train-kelm
  Common train_c;
  std::string train_in, train_model, train_table;
  auto* train = app.add_subcommand("train-kelm", "Select C on the dev split and train a (weighted) KELM");
  add_common(train, train_c);
  train->add_option("--features", train_in, "Feature table CSV")->required();
  train->add_option("--model", train_model, "Model output file");
  train->add_option("--c-table", train_table, "C,dev_score table output");

  // predict-kelm
  Common predict_c;
  std::string predict_model, predict_in, predict_out;
  auto* predict = app.add_subcommand("predict-kelm", "Frame-level score tracks from a KELM model");
  add_common(predict, predict_c);
  predict->add_option("--model", predict_model, "KELM model file")->required();
  predict->add_option("--features", predict_in, "Feature table CSV")->required();
  predict->add_option("-o,--out", predict_out, "Prediction track CSV");

  // fuse-*
  struct FuseArgs {
    Common common;
    std::vector<std::string> preds;
    std::vector<std::string> names;
    std::string task = "expr";
    RateOptions rates;
    std::string labels, splits, dev_split = "dev", out;
  };
  FuseArgs dwf_a, rf_a, mean_a;
  auto add_fuse = [&](const char* name, const char* help, FuseArgs& a, bool fitted) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, a.common);
    cmd->add_option("--pred", a.preds, "Aligned prediction track CSV, one per model")->required();
    cmd->add_option("--names", a.names, "Model names, in --pred order");
    cmd->add_option("--task", a.task, "expr or va")->capture_default_str();
    a.rates.add(cmd);
    cmd->add_option("-o,--out", a.out, "Fused track CSV");
    if (fitted) {
      cmd->add_option("--labels", a.labels, "Ground-truth label CSV")->required();
      cmd->add_option("--splits", a.splits, "video_id,split table")->required();
      cmd->add_option("--dev-split", a.dev_split, "Split the fusion is fitted on")->capture_default_str();
    }
    return cmd;
  };
  std::size_t pool_size = 10000;
  double alpha = 1.0;
  bool no_selectors = false;
  std::string matrix_out, scores_out;
  auto* dwf = add_fuse("fuse-dwf", "Dirichlet random weighted fusion", dwf_a, true);
  dwf->add_option("--pool-size", pool_size, "Number of sampled matrices")->capture_default_str();
  dwf->add_option("--alpha", alpha, "Dirichlet concentration")->capture_default_str();
  dwf->add_flag("--no-selectors", no_selectors, "Do not append single-model selector matrices");
  dwf->add_option("--matrix-out", matrix_out, "Selected fusion matrix CSV");
  dwf->add_option("--scores-out", scores_out, "pool_index,score table");

  std::vector<std::size_t> tree_grid = default_tree_grid();
  std::optional<std::size_t> max_depth;
  std::string forest_out;
  auto* rf = add_fuse("fuse-rf", "Random-forest stacking fusion", rf_a, true);
  rf->add_option("--trees", tree_grid, "Tree-count grid, chosen by out-of-bag score");
  rf->add_option("--max-depth", max_depth, "Tree depth limit");
  rf->add_option("--forest-out", forest_out, "Forest dump prefix");

  auto* mean = add_fuse("fuse-mean", "Unweighted mean fusion", mean_a, false);

  // postprocess
  Common post_c;
  std::string post_in, post_out, post_labels, post_task = "expr", post_splits, post_split;
  RateOptions post_rates;
  bool post_interp = false, post_smooth = false;
  double smooth_seconds = 0.5;
  auto* post = app.add_subcommand("postprocess", "Interpolate onto label timelines and/or Hamming-smooth");
  add_common(post, post_c);
  post->add_option("--pred", post_in, "Prediction track CSV")->required();
  post->add_option("--task", post_task, "expr or va")->capture_default_str();
  post_rates.add(post);
  post->add_flag("--interpolate", post_interp, "Interpolate onto the label timelines");
  post->add_option("--labels", post_labels, "Label CSV defining the target timelines");
  post->add_flag("--smooth", post_smooth, "Apply Hamming smoothing");
  post->add_option("--smooth-seconds", smooth_seconds, "Hamming window length")->capture_default_str();
  post->add_option("--splits", post_splits, "video_id,split table");
  post->add_option("--split", post_split, "Keep only videos of this split");
  post->add_option("-o,--out", post_out, "Output track CSV");

  // evaluate
  Common eval_c;
  std::string eval_pred, eval_labels, eval_task = "expr", eval_csv, eval_splits, eval_split;
  bool exclude_absent = false;
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against labels on (video, frame) keys");
  add_common(evaluate, eval_c);
  evaluate->add_option("--pred", eval_pred, "Prediction CSV (labels or scores)")->required();
  evaluate->add_option("--labels", eval_labels, "Ground-truth label CSV")->required();
  evaluate->add_option("--task", eval_task, "expr or va")->capture_default_str();
  evaluate->add_option("--splits", eval_splits, "video_id,split table");
  evaluate->add_option("--split", eval_split, "Evaluate only videos of this split");
  evaluate->add_flag("--exclude-absent", exclude_absent, "Leave classes absent from truth and predictions out of macro means");
  evaluate->add_option("--report-csv", eval_csv, "metric,value report output");

  // run
  Common run_c;
  auto* run = app.add_subcommand("run", "Full pipeline from a config file");
  add_common(run, run_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(ErrorKind::kInvalidArgument);
  }

  try {
    if (*synth) {
      stage("synth", [&] {
        synth_spec.task = task_option(synth_task);
        synth_spec.fps = Fps::parse(synth_fps);
        if (synth_c.seed) synth_spec.seed = *synth_c.seed;
        const std::string dir = synth_c.out_dir.empty() ? "data" : synth_c.out_dir;
        write_dataset(synth_generate(synth_spec), dir);
        std::printf("wrote synthetic %s dataset to %s\n", to_string(synth_spec.task), dir.c_str());
      });
    } else if (*window) {
      stage("window", [&] {
        const PipelineConfig config = require_config(window_c, "window");
        const PipelineInputs inputs = load_inputs(config);
        const WindowTable table = build_windows(inputs, config);
        const std::string path = output_path(window_out, window_c.out_dir, "windows.csv");
        write_text_file(path, window_table_csv(table));
        std::printf("%zu windows -> %s\n", table.windows.size(), path.c_str());
      });
    } else if (*features) {
      stage("features", [&] {
        FunctionalSet set = resolve_config(features_c).functionals;
        if (!features_set.empty()) set = FunctionalSet::parse(features_set);
        const FeatureTable table = compute_features(read_window_table(features_in), set);
        const std::string path = output_path(features_out, features_c.out_dir, "features.csv");
        write_text_file(path, feature_table_csv(table));
        std::printf("%zu feature rows -> %s\n", table.rows.size(), path.c_str());
      });
    } else if (*train) {
      stage("train-kelm", [&] {
        const PipelineConfig config = require_config(train_c, "train-kelm");
        if (config.data.splits.empty()) throw Error(ErrorKind::kConfig, "config has no data.splits");
        const KelmTraining t = train_kelm_stage(read_feature_table(train_in), read_split_csv(config.data.splits), config);
        const std::string path = output_path(train_model, train_c.out_dir, "kelm_model.txt");
        save_kelm(path, t.model);
        if (!train_table.empty()) {
          std::string table = "C,dev_score\n";
          for (const auto& [c, s] : t.selection.table) table += format_number(c) + "," + format_number(s) + "\n";
          write_text_file(train_table, table);
        }
        if (t.dropped_windows > 0) {
          print_warning(std::to_string(t.dropped_windows) + " training windows had no valid label and were dropped");
        }
        std::printf("C=%s dev=%s on %zu windows -> %s\n", format_number(t.selection.C).c_str(),
                    format_score(t.selection.dev_score, 4).c_str(), t.train_windows, path.c_str());
      });
    } else if (*predict) {
      stage("predict-kelm", [&] {
        const auto tracks = predict_kelm_stage(load_kelm(predict_model), read_feature_table(predict_in));
        const std::string path = output_path(predict_out, predict_c.out_dir, "kelm_predictions.csv");
        write_track_csv(path, tracks);
        std::printf("%zu videos -> %s\n", tracks.size(), path.c_str());
      });
    } else if (*dwf || *rf || *mean) {
      FuseArgs& a = *dwf ? dwf_a : *rf ? rf_a : mean_a;
      const char* name = *dwf ? "fuse-dwf" : *rf ? "fuse-rf" : "fuse-mean";
      stage(name, [&] {
        const PipelineConfig config = resolve_config(a.common);
        const Task task = task_option(a.task);
        const ModelTracks models = read_models(a.preds, a.rates.predictions(), task);
        std::vector<FrameTrack> fused;
        if (*mean) {
          fused = fuse_mean_stage(models);
        } else {
          const LabelSet truth = read_label_csv(a.labels, a.rates.labels());
          const auto splits = read_split_csv(a.splits);
          if (*dwf) {
            const DwfFit fit = fit_dwf_stage(models, truth, splits, a.dev_split, task, pool_size, alpha, !no_selectors,
                                             config.seed, config.workers);
            const FusionMatrix& best = fit.pool.matrices[fit.result.best_index];
            std::vector<std::string> names = a.names;
            for (std::size_t m = names.size(); m < models.size(); ++m) names.push_back("m" + std::to_string(m));
            if (!matrix_out.empty()) {
              write_text_file(matrix_out, fusion_matrix_csv(best, names,
                                                            task == Task::kVa ? std::vector<std::string>{"valence", "arousal"}
                                                                              : std::vector<std::string>{}));
            }
            if (!scores_out.empty()) write_text_file(scores_out, score_table_csv(fit.result));
            std::printf("pool index %zu, dev %s\n", fit.result.best_index, format_score(fit.result.dev_score, 4).c_str());
            fused = apply_dwf_stage(models, best);
          } else {
            ForestSpec spec;
            spec.seed = config.seed;
            spec.max_depth = max_depth;
            const RfFusionModel model = fit_rf_stage(models, truth, splits, a.dev_split, task, tree_grid, spec);
            if (!forest_out.empty()) {
              for (std::size_t k = 0; k < model.forests.size(); ++k) {
                save_forest(forest_out + "_" + std::to_string(k) + ".txt", model.forests[k]);
              }
            }
            std::printf("trees %zu, fit-split score %s, out-of-bag %s\n", model.selections.front().n_trees,
                        format_score(model.fit_score, 4).c_str(), format_score(model.oob_score, 4).c_str());
            print_warning("rf fusion is fit on the development split: fit-split " +
                          std::string(task == Task::kExpr ? "accuracy " : "-MSE ") +
                          format_score(model.fit_oob_units, 4) + " vs out-of-bag " + format_score(model.oob_score, 4) +
                          "; development scores of this system are optimistic (overfitting)");
            fused = apply_rf_stage(models, model);
          }
        }
        const std::string path = output_path(a.out, a.common.out_dir, "fused.csv");
        write_track_csv(path, fused);
        std::printf("%zu videos -> %s\n", fused.size(), path.c_str());
      });
    } else if (*post) {
      stage("postprocess", [&] {
        const PipelineConfig config = resolve_config(post_c);
        const Task task = task_option(post_task);
        if (!post_interp && !post_smooth) throw Error(ErrorKind::kInvalidArgument, "give --interpolate and/or --smooth");
        std::vector<FrameTrack> tracks = read_track_csv(post_in, post_rates.predictions(), score_kind(task));
        std::set<std::string> keep;
        if (!post_split.empty()) {
          if (post_splits.empty()) throw Error(ErrorKind::kInvalidArgument, "--split needs --splits");
          for (const auto& [video, split] : read_split_csv(post_splits)) {
            if (split == post_split) keep.insert(video);
          }
        }
        if (post_interp) {
          if (post_labels.empty()) throw Error(ErrorKind::kInvalidArgument, "--interpolate needs --labels");
          const LabelSet truth = read_label_csv(post_labels, post_rates.labels());
          std::vector<Timeline> timelines;
          for (auto& tl : timelines_from_tracks(truth.tracks)) {
            if (keep.empty() || keep.count(tl.video_id)) timelines.push_back(std::move(tl));
          }
          tracks = align_to_timelines(tracks, timelines, task, config.workers);
        }
        if (post_smooth) tracks = smooth_tracks(tracks, SmoothingSpec{smooth_seconds}, config.workers);
        if (!keep.empty()) {
          std::vector<FrameTrack> kept;
          for (auto& t : tracks) {
            if (keep.count(t.video_id())) kept.push_back(std::move(t));
          }
          tracks = std::move(kept);
        }
        const std::string path = output_path(post_out, post_c.out_dir, "postprocessed.csv");
        write_track_csv(path, tracks);
        std::printf("%zu videos -> %s\n", tracks.size(), path.c_str());
      });
    } else if (*evaluate) {
      stage("evaluate", [&] {
        const Task task = task_option(eval_task);
        const FpsLookup any_rate = fps_lookup({}, Fps(1));
        const LabelSet truth = read_label_csv(eval_labels, any_rate);
        if (truth.task != task) {
          throw Error(ErrorKind::kTaskMismatch, "'" + eval_labels + "' holds " + to_string(truth.task) +
                                                    " labels, task is " + to_string(task));
        }
        if (truth.dropped > 0) print_warning(std::to_string(truth.dropped) + " invalid label rows dropped");
        std::vector<std::string> videos;
        if (!eval_split.empty()) {
          if (eval_splits.empty()) throw Error(ErrorKind::kInvalidArgument, "--split needs --splits");
          for (const auto& [video, split] : read_split_csv(eval_splits)) {
            if (split == eval_split) videos.push_back(video);
          }
          if (videos.empty()) throw Error(ErrorKind::kInvalidArgument, "no videos in split '" + eval_split + "'");
        }
        const auto preds = read_track_csv(eval_pred, any_rate, TrackKind::kEmbedding);
        const EvalReport report = evaluate_tracks(preds, truth, task, videos, exclude_absent);
        std::fputs(report_text(report).c_str(), stdout);
        if (!eval_csv.empty()) write_text_file(eval_csv, report_csv(report));
      });
    } else if (*run) {
      PipelineConfig config;
      stage("config", [&] { config = require_config(run_c, "run"); });
      const RunResult result = run_pipeline(config);
      for (const auto& w : result.warnings) print_warning(w);
      for (const auto& [split, report] : result.reports) {
        std::printf("%s: %s %s\n", split.c_str(), config.task == Task::kExpr ? "macro_f1" : "ccc_mean",
                    format_score(report.challenge_score()).c_str());
      }
      std::printf("run directory: %s\nmanifest: %s\n", result.run_dir.c_str(), result.manifest_path.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
