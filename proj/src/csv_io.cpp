#include "affect/csv_io.hpp"

#include "affect/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace affect {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    if (comma == std::string::npos) {
      out.push_back(line.substr(begin));
      break;
    }
    out.push_back(line.substr(begin, comma - begin));
    begin = comma + 1;
  }
  return out;
}

std::int64_t parse_frame(const std::string& text, const std::string& path) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::kIo, path + ": bad frame index '" + text + "'");
  }
  return out;
}

struct KeyedRow {
  std::int64_t frame;
  std::size_t row;
};

// Groups table rows by video id (sorted) and frame (sorted); rejects duplicates.
std::map<std::string, std::vector<KeyedRow>> group_rows(const CsvTable& table, const std::string& path) {
  const std::size_t vid = table.column("video_id");
  const std::size_t frm = table.column("frame");
  std::map<std::string, std::vector<KeyedRow>> groups;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    groups[table.rows[r][vid]].push_back({parse_frame(table.rows[r][frm], path), r});
  }
  for (auto& [video, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [](const KeyedRow& a, const KeyedRow& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].frame == rows[i - 1].frame) {
        throw Error(ErrorKind::kIo, path + ": duplicate frame " + std::to_string(rows[i].frame) +
                                        " for video '" + video + "'");
      }
    }
  }
  return groups;
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw Error(ErrorKind::kIo, "cannot format number");
  return std::string(buf, ptr);
}

double parse_number(const std::string& text) {
  double out = 0.0;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::kIo, "bad number '" + text + "'");
  }
  return out;
}

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorKind::kIo, "missing CSV column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_fields(line);
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw Error(ErrorKind::kIo, path + ":" + std::to_string(line_no) + ": expected " +
                                      std::to_string(table.header.size()) + " fields, got " +
                                      std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw Error(ErrorKind::kIo, "'" + path + "' has no header");
  return table;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path + "'");
  out << content;
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<FrameTrack> read_track_csv(const std::string& path, const FpsLookup& fps_of,
                                       TrackKind kind) {
  const CsvTable table = read_csv(path);
  const std::size_t vid = table.column("video_id");
  const std::size_t frm = table.column("frame");
  std::vector<std::size_t> value_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c != vid && c != frm) value_cols.push_back(c);
  }
  if (value_cols.empty()) throw Error(ErrorKind::kIo, path + ": no value columns");

  std::vector<FrameTrack> tracks;
  for (const auto& [video, rows] : group_rows(table, path)) {
    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(value_cols.size()));
    std::vector<std::int64_t> frames(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      frames[i] = rows[i].frame;
      const auto& cells = table.rows[rows[i].row];
      for (std::size_t j = 0; j < value_cols.size(); ++j) {
        values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_number(cells[value_cols[j]]);
      }
    }
    tracks.emplace_back(video, fps_of(video), std::move(frames), std::move(values), kind);
  }
  return tracks;
}

std::string track_csv_text(const std::vector<FrameTrack>& tracks,
                           const std::vector<std::string>& column_names) {
  std::vector<const FrameTrack*> sorted;
  for (const auto& t : tracks) sorted.push_back(&t);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const FrameTrack* a, const FrameTrack* b) { return a->video_id() < b->video_id(); });

  std::string out = "video_id,frame";
  const std::size_t width = tracks.empty() ? column_names.size() : tracks.front().width();
  for (std::size_t j = 0; j < width; ++j) {
    out += ',';
    out += j < column_names.size() ? column_names[j] : "c" + std::to_string(j);
  }
  out += '\n';
  for (const FrameTrack* t : sorted) {
    if (t->width() != width) throw Error(ErrorKind::kAlignment, "tracks written together must share a width");
    for (std::size_t i = 0; i < t->n_frames(); ++i) {
      out += t->video_id();
      out += ',';
      out += std::to_string(t->frames()[i]);
      for (std::size_t j = 0; j < width; ++j) {
        out += ',';
        out += format_number(t->values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
      out += '\n';
    }
  }
  return out;
}

void write_track_csv(const std::string& path, const std::vector<FrameTrack>& tracks,
                     const std::vector<std::string>& column_names) {
  write_text_file(path, track_csv_text(tracks, column_names));
}

LabelSet read_label_csv(const std::string& path, const FpsLookup& fps_of) {
  const CsvTable table = read_csv(path);
  LabelSet set;
  std::vector<std::size_t> cols;
  if (std::find(table.header.begin(), table.header.end(), "label") != table.header.end()) {
    set.task = Task::kExpr;
    cols = {table.column("label")};
  } else if (std::find(table.header.begin(), table.header.end(), "valence") != table.header.end()) {
    set.task = Task::kVa;
    cols = {table.column("valence"), table.column("arousal")};
  } else {
    throw Error(ErrorKind::kTaskMismatch, path + ": expected a 'label' or 'valence,arousal' column");
  }

  for (const auto& [video, rows] : group_rows(table, path)) {
    std::vector<std::int64_t> frames;
    std::vector<double> flat;
    for (const auto& kr : rows) {
      const auto& cells = table.rows[kr.row];
      bool valid = true;
      std::vector<double> v;
      for (std::size_t c : cols) {
        const double x = parse_number(cells[c]);
        v.push_back(x);
        if (set.task == Task::kExpr) {
          valid = valid && x == std::floor(x) && x >= 0.0 && x <= 7.0;
        } else {
          valid = valid && std::isfinite(x) && x >= -1.0 && x <= 1.0;
        }
      }
      if (!valid) {
        ++set.dropped;
        continue;
      }
      frames.push_back(kr.frame);
      flat.insert(flat.end(), v.begin(), v.end());
    }
    if (frames.empty()) continue;
    const auto width = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd values(static_cast<Eigen::Index>(frames.size()), width);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      for (Eigen::Index j = 0; j < width; ++j) values(i, j) = flat[static_cast<std::size_t>(i * width + j)];
    }
    set.tracks.emplace_back(video, fps_of(video), std::move(frames), std::move(values),
                            set.task == Task::kExpr ? TrackKind::kLabel : TrackKind::kVa);
  }
  return set;
}

void write_label_csv(const std::string& path, const LabelSet& labels) {
  std::string out = labels.task == Task::kExpr ? "video_id,frame,label\n" : "video_id,frame,valence,arousal\n";
  for (const auto& t : labels.tracks) {
    for (std::size_t i = 0; i < t.n_frames(); ++i) {
      out += t.video_id() + "," + std::to_string(t.frames()[i]);
      for (Eigen::Index j = 0; j < t.values().cols(); ++j) {
        const double v = t.values()(static_cast<Eigen::Index>(i), j);
        out += ',';
        out += labels.task == Task::kExpr ? std::to_string(static_cast<int>(v)) : format_number(v);
      }
      out += '\n';
    }
  }
  write_text_file(path, out);
}

std::vector<VadTrack> read_vad_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::size_t col = table.column("voiced");
  std::vector<VadTrack> out;
  for (const auto& [video, rows] : group_rows(table, path)) {
    VadTrack vad{video, {}, {}};
    for (const auto& kr : rows) {
      const std::string& cell = table.rows[kr.row][col];
      if (cell != "0" && cell != "1") {
        throw Error(ErrorKind::kIo, path + ": voiced must be 0 or 1, got '" + cell + "'");
      }
      vad.frames.push_back(kr.frame);
      vad.voiced.push_back(cell == "1");
    }
    out.push_back(std::move(vad));
  }
  return out;
}

void write_vad_csv(const std::string& path, const std::vector<VadTrack>& vad) {
  std::string out = "video_id,frame,voiced\n";
  for (const auto& v : vad) {
    for (std::size_t i = 0; i < v.frames.size(); ++i) {
      out += v.video_id + "," + std::to_string(v.frames[i]) + (v.voiced[i] ? ",1\n" : ",0\n");
    }
  }
  write_text_file(path, out);
}

std::map<std::string, Fps> read_fps_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::size_t vid = table.column("video_id");
  const std::size_t col = table.column("fps");
  std::map<std::string, Fps> out;
  for (const auto& row : table.rows) out[row[vid]] = Fps::parse(row[col]);
  return out;
}

void write_fps_csv(const std::string& path, const std::map<std::string, Fps>& fps) {
  std::string out = "video_id,fps\n";
  for (const auto& [video, rate] : fps) out += video + "," + rate.str() + "\n";
  write_text_file(path, out);
}

std::map<std::string, std::string> read_split_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::size_t vid = table.column("video_id");
  const std::size_t col = table.column("split");
  std::map<std::string, std::string> out;
  for (const auto& row : table.rows) out[row[vid]] = row[col];
  return out;
}

void write_split_csv(const std::string& path, const std::map<std::string, std::string>& splits) {
  std::string out = "video_id,split\n";
  for (const auto& [video, split] : splits) out += video + "," + split + "\n";
  write_text_file(path, out);
}

FpsLookup fps_lookup(std::map<std::string, Fps> table, std::optional<Fps> fallback) {
  return [table = std::move(table), fallback](const std::string& video) {
    if (auto it = table.find(video); it != table.end()) return it->second;
    if (fallback) return *fallback;
    throw Error(ErrorKind::kIo, "no fps known for video '" + video + "'");
  };
}

}  // namespace affect
