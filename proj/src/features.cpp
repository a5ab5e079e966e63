#include "affect/features.hpp"

#include "affect/csv_io.hpp"
#include "affect/error.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

namespace affect {

FunctionalSet::FunctionalSet() : items_{Functional::kMean, Functional::kMax, Functional::kMin} {}

FunctionalSet::FunctionalSet(std::vector<Functional> selected) {
  for (Functional f : {Functional::kMean, Functional::kMax, Functional::kMin}) {
    if (std::find(selected.begin(), selected.end(), f) != selected.end()) items_.push_back(f);
  }
  if (items_.empty()) throw Error(ErrorKind::kInvalidArgument, "functional set must not be empty");
}

FunctionalSet FunctionalSet::parse(const std::string& text) {
  std::vector<Functional> selected;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    auto end = text.find(',', begin);
    if (end == std::string::npos) end = text.size();
    const std::string name = text.substr(begin, end - begin);
    if (name == "mean") {
      selected.push_back(Functional::kMean);
    } else if (name == "max") {
      selected.push_back(Functional::kMax);
    } else if (name == "min") {
      selected.push_back(Functional::kMin);
    } else if (!name.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "unknown functional '" + name + "'");
    }
    begin = end + 1;
  }
  return FunctionalSet(std::move(selected));
}

std::string FunctionalSet::str() const {
  std::string out;
  for (Functional f : items_) {
    if (!out.empty()) out += ',';
    out += f == Functional::kMean ? "mean" : f == Functional::kMax ? "max" : "min";
  }
  return out;
}

Eigen::VectorXd functionals(const Eigen::MatrixXd& payload, const FunctionalSet& set,
                            const std::vector<bool>* pad_mask) {
  const Eigen::Index d = payload.cols();
  if (payload.rows() < 1) throw Error(ErrorKind::kInvalidArgument, "functionals of an empty window");
  if (pad_mask && pad_mask->size() != static_cast<std::size_t>(payload.rows())) {
    throw Error(ErrorKind::kInvalidArgument, "pad mask length differs from window length");
  }

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd hi = Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  std::size_t used = 0;
  for (Eigen::Index i = 0; i < payload.rows(); ++i) {
    if (pad_mask && !(*pad_mask)[static_cast<std::size_t>(i)]) continue;
    const auto row = payload.row(i).transpose();
    sum += row;
    hi = hi.cwiseMax(row);
    lo = lo.cwiseMin(row);
    ++used;
  }
  if (used == 0) throw Error(ErrorKind::kInvalidArgument, "window has no unpadded rows");

  Eigen::VectorXd out(static_cast<Eigen::Index>(set.size()) * d);
  Eigen::Index offset = 0;
  for (Functional f : set.items()) {
    switch (f) {
      case Functional::kMean: out.segment(offset, d) = sum / static_cast<double>(used); break;
      case Functional::kMax: out.segment(offset, d) = hi; break;
      case Functional::kMin: out.segment(offset, d) = lo; break;
    }
    offset += d;
  }
  return out;
}

MinMaxScaler fit_minmax(std::span<const FrameTrack> tracks) {
  if (tracks.empty()) throw Error(ErrorKind::kInvalidArgument, "fit_minmax needs at least one track");
  const Eigen::Index d = tracks.front().values().cols();
  MinMaxScaler scaler;
  scaler.lo = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  scaler.hi = Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  for (const FrameTrack& t : tracks) {
    if (t.values().cols() != d) {
      throw Error(ErrorKind::kAlignment, "fit_minmax: track '" + t.video_id() + "' has a different width");
    }
    scaler.lo = scaler.lo.cwiseMin(t.values().colwise().minCoeff().transpose());
    scaler.hi = scaler.hi.cwiseMax(t.values().colwise().maxCoeff().transpose());
  }
  scaler.scope = ScalerScope::kGlobal;
  return scaler;
}

FrameTrack apply_minmax(const FrameTrack& track, const MinMaxScaler& scaler) {
  const Eigen::Index d = track.values().cols();
  if (scaler.lo.size() != d || scaler.hi.size() != d) {
    throw Error(ErrorKind::kAlignment, "scaler width " + std::to_string(scaler.lo.size()) +
                                           " differs from track width " + std::to_string(d));
  }
  Eigen::MatrixXd out(track.values().rows(), d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double range = scaler.hi(j) - scaler.lo(j);
    if (!(range > 0.0)) {
      out.col(j).setZero();
      continue;
    }
    out.col(j) = ((track.values().col(j).array() - scaler.lo(j)) / range).cwiseMax(0.0).cwiseMin(1.0);
  }
  return track.with_values(std::move(out), track.kind());
}

FrameTrack per_video_minmax(const FrameTrack& track) {
  MinMaxScaler scaler = fit_minmax(std::span<const FrameTrack>(&track, 1));
  scaler.scope = ScalerScope::kPerVideo;
  return apply_minmax(track, scaler);
}

void write_scaler_csv(const std::string& path, const MinMaxScaler& scaler) {
  std::string out = std::string("# scope=") + (scaler.scope == ScalerScope::kGlobal ? "global" : "per_video") + "\n";
  out += "dim,lo,hi\n";
  for (Eigen::Index j = 0; j < scaler.lo.size(); ++j) {
    out += std::to_string(j) + "," + format_number(scaler.lo(j)) + "," + format_number(scaler.hi(j)) + "\n";
  }
  write_text_file(path, out);
}

MinMaxScaler read_scaler_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::string first;
  std::getline(in, first);
  MinMaxScaler scaler;
  if (first.rfind("# scope=per_video", 0) == 0) {
    scaler.scope = ScalerScope::kPerVideo;
  } else if (first.rfind("# scope=global", 0) != 0) {
    throw Error(ErrorKind::kIo, path + ": missing '# scope=' line");
  }
  const CsvTable table = read_csv(path);
  const std::size_t lo = table.column("lo");
  const std::size_t hi = table.column("hi");
  scaler.lo.resize(static_cast<Eigen::Index>(table.rows.size()));
  scaler.hi.resize(static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    scaler.lo(static_cast<Eigen::Index>(r)) = parse_number(table.rows[r][lo]);
    scaler.hi(static_cast<Eigen::Index>(r)) = parse_number(table.rows[r][hi]);
    if (scaler.lo(static_cast<Eigen::Index>(r)) > scaler.hi(static_cast<Eigen::Index>(r))) {
      throw Error(ErrorKind::kIo, path + ": lo > hi on dim " + std::to_string(r));
    }
  }
  return scaler;
}

}  // namespace affect
