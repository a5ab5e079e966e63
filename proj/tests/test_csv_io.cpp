#include "affect/csv_io.hpp"
#include "affect/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

using namespace affect;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("affect_csv_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInvalidArgument;
}

}  // namespace

TEST_CASE("format_number round-trips doubles exactly") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = g(rng) * std::pow(10.0, static_cast<double>(static_cast<int>(rng() % 20)) - 10);
    CHECK(parse_number(format_number(x)) == x);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(3.0) == "3");
  CHECK(parse_number("nan") != parse_number("nan"));
  CHECK(kind_of([] { parse_number("abc"); }) == ErrorKind::kIo);
  CHECK(kind_of([] { parse_number("1.5x"); }) == ErrorKind::kIo);
}

TEST_CASE("track csv round trip with gaps and several videos") {
  TempDir dir;
  Eigen::MatrixXd a(3, 2), b(2, 2);
  a << 0.1, -0.2, 1.0 / 3.0, 2.0, 1e-12, -7.5;
  b << 4, 5, 6, 7;
  const std::vector<FrameTrack> tracks = {
      FrameTrack("a", Fps(5), {0, 2, 7}, a, TrackKind::kClassScores),
      FrameTrack::contiguous("b", Fps(5), b, TrackKind::kClassScores, 10)};
  write_track_csv(dir.file("t.csv"), tracks, {"x", "y"});
  CHECK(read_text_file(dir.file("t.csv")).rfind("video_id,frame,x,y\n", 0) == 0);
  const auto back = read_track_csv(dir.file("t.csv"), fps_lookup({}, Fps(5)), TrackKind::kClassScores);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].video_id() == tracks[i].video_id());
    CHECK(back[i].frames() == tracks[i].frames());
    CHECK(back[i].values() == tracks[i].values());
  }
  CHECK(track_csv_text(back) == track_csv_text(tracks));
}

TEST_CASE("track csv rows are sorted by video and frame; duplicates rejected") {
  TempDir dir;
  write_text_file(dir.file("t.csv"), "video_id,frame,c0\nz,3,1\nz,1,2\na,0,3\n");
  const auto t = read_track_csv(dir.file("t.csv"), fps_lookup({}, Fps(5)), TrackKind::kEmbedding);
  REQUIRE(t.size() == 2);
  CHECK(t[0].video_id() == "a");
  CHECK(t[1].frames() == std::vector<std::int64_t>{1, 3});
  CHECK(t[1].values()(0, 0) == 2.0);

  write_text_file(dir.file("d.csv"), "video_id,frame,c0\nz,3,1\nz,3,2\n");
  CHECK(kind_of([&] { read_track_csv(dir.file("d.csv"), fps_lookup({}, Fps(5)), TrackKind::kEmbedding); }) ==
        ErrorKind::kIo);
  write_text_file(dir.file("r.csv"), "video_id,frame,c0\nz,3\n");
  CHECK(kind_of([&] { read_track_csv(dir.file("r.csv"), fps_lookup({}, Fps(5)), TrackKind::kEmbedding); }) ==
        ErrorKind::kIo);
  CHECK(kind_of([&] { read_track_csv(dir.file("missing.csv"), fps_lookup({}, Fps(5)), TrackKind::kEmbedding); }) ==
        ErrorKind::kIo);
  CHECK(kind_of([&] { read_track_csv(dir.file("t.csv"), fps_lookup({}), TrackKind::kEmbedding); }) == ErrorKind::kIo);
}

TEST_CASE("windows line endings are tolerated") {
  TempDir dir;
  write_text_file(dir.file("t.csv"), "video_id,frame,c0\r\nv,0,1.5\r\n");
  const auto t = read_track_csv(dir.file("t.csv"), fps_lookup({}, Fps(5)), TrackKind::kEmbedding);
  CHECK(t[0].values()(0, 0) == 1.5);
}

TEST_CASE("label files: task detection and invalid rows dropped") {
  TempDir dir;
  write_text_file(dir.file("e.csv"), "video_id,frame,label\nv,0,3\nv,1,-1\nv,2,8\nv,3,7\nw,0,-1\n");
  const LabelSet e = read_label_csv(dir.file("e.csv"), fps_lookup({}, Fps(30)));
  CHECK(e.task == Task::kExpr);
  CHECK(e.dropped == 3);
  REQUIRE(e.tracks.size() == 1);
  CHECK(e.tracks[0].frames() == std::vector<std::int64_t>{0, 3});
  CHECK(e.tracks[0].kind() == TrackKind::kLabel);

  write_text_file(dir.file("v.csv"), "video_id,frame,valence,arousal\nv,0,0.5,-0.5\nv,1,-5,-5\nv,2,1,1\n");
  const LabelSet v = read_label_csv(dir.file("v.csv"), fps_lookup({}, Fps(30)));
  CHECK(v.task == Task::kVa);
  CHECK(v.dropped == 1);
  CHECK(v.tracks[0].values() == (Eigen::MatrixXd(2, 2) << 0.5, -0.5, 1, 1).finished());

  write_text_file(dir.file("x.csv"), "video_id,frame,score\nv,0,1\n");
  CHECK(kind_of([&] { read_label_csv(dir.file("x.csv"), fps_lookup({}, Fps(30))); }) == ErrorKind::kTaskMismatch);
}

TEST_CASE("label, vad, fps and split files round trip") {
  TempDir dir;
  LabelSet labels;
  labels.task = Task::kExpr;
  labels.tracks.push_back(FrameTrack("v", Fps(30), {0, 1, 5}, Eigen::Vector3d(0, 7, 2), TrackKind::kLabel));
  write_label_csv(dir.file("l.csv"), labels);
  const LabelSet l = read_label_csv(dir.file("l.csv"), fps_lookup({}, Fps(30)));
  CHECK(l.tracks[0].frames() == labels.tracks[0].frames());
  CHECK(l.tracks[0].values() == labels.tracks[0].values());

  const std::vector<VadTrack> vad = {{"a", {0, 1, 2}, {true, false, true}}, {"b", {4}, {false}}};
  write_vad_csv(dir.file("vad.csv"), vad);
  const auto vb = read_vad_csv(dir.file("vad.csv"));
  REQUIRE(vb.size() == 2);
  CHECK(vb[0].frames == vad[0].frames);
  CHECK(vb[0].voiced == vad[0].voiced);
  CHECK(vb[1].voiced == vad[1].voiced);
  write_text_file(dir.file("badvad.csv"), "video_id,frame,voiced\na,0,2\n");
  CHECK(kind_of([&] { read_vad_csv(dir.file("badvad.csv")); }) == ErrorKind::kIo);

  const std::map<std::string, Fps> fps = {{"a", Fps(30000, 1001)}, {"b", Fps(15, 2)}, {"c", Fps(25)}};
  write_fps_csv(dir.file("fps.csv"), fps);
  CHECK(read_fps_csv(dir.file("fps.csv")) == fps);

  const std::map<std::string, std::string> splits = {{"a", "train"}, {"b", "dev"}, {"c", "test"}};
  write_split_csv(dir.file("s.csv"), splits);
  CHECK(read_split_csv(dir.file("s.csv")) == splits);
}

TEST_CASE("fps lookup prefers the table and falls back") {
  const FpsLookup f = fps_lookup({{"a", Fps(30)}}, Fps(5));
  CHECK(f("a") == Fps(30));
  CHECK(f("zzz") == Fps(5));
  CHECK(kind_of([] { fps_lookup({})("a"); }) == ErrorKind::kIo);
}

TEST_CASE("csv tables name missing columns") {
  TempDir dir;
  write_text_file(dir.file("t.csv"), "a,b\n1,2\n");
  const CsvTable t = read_csv(dir.file("t.csv"));
  CHECK(t.column("b") == 1);
  try {
    (void)t.column("c");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }
}
