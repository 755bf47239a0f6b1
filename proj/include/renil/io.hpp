#pragma once

// Canonical file formats: IMU / truth / trajectory CSVs, IPDP lists,
// prediction and belief traces, ellipse polylines and dataset manifests.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "renil/bayes.hpp"
#include "renil/errors.hpp"
#include "renil/imu.hpp"
#include "renil/metrics.hpp"

namespace renil::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV primitives

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
  std::size_t column(const std::string& name, const std::string& file) const {
    const auto c = find(name);
    if (!c) throw SchemaError(file + ": missing column '" + name + "'");
    return *c;
  }
};

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Empty cells read as NaN.
inline double parse_double(const std::string& s, const std::string& where) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw SchemaError(where + ": not a number '" + s + "'");
  return v;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  return is;
}

inline std::ofstream open_out(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << std::setprecision(17);
  return os;
}

inline void finish(std::ofstream& os, const std::string& path) {
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

// Header row followed by numeric rows; blank lines and '#' comments skipped.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream is = open_in(path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    auto fields = split_fields(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    const std::string where = path + ":" + std::to_string(lineno);
    if (fields.size() != t.header.size()) throw SchemaError(where + ": expected " + std::to_string(t.header.size()) + " fields");
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_double(f, where));
    t.rows.push_back(std::move(row));
  }
  if (is.bad()) throw IoError("read failed: " + path);
  if (t.header.empty()) throw SchemaError(path + ": no header row");
  return t;
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ofstream os = open_out(path);
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }
  finish(os, path);
}

// ---------------------------------------------------------------------------
// IMU and truth

inline const std::vector<std::string> kImuColumns{"t", "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz"};
inline const std::vector<std::string> kTruthColumns{"t", "px", "py", "pz", "qw", "qx", "qy", "qz"};

// Sample rate from the median timestamp step.
inline double infer_rate(const std::vector<double>& t, const std::string& path) {
  if (t.size() < 2) throw SchemaError(path + ": need at least two samples");
  const double step = metrics::median_step(t);
  if (!(step > 0.0)) throw SchemaError(path + ": timestamps must increase");
  return 1.0 / step;
}

// Magnetometer columns are optional; the frame is supplied by the caller.
inline ImuSequence read_imu_csv(const std::string& path, Frame frame = Frame::kDevice) {
  const CsvTable tab = read_csv(path);
  std::size_t c[10];
  for (std::size_t i = 0; i < 7; ++i) c[i] = tab.column(kImuColumns[i], path);
  const bool mag = tab.find("mx").has_value();
  if (mag)
    for (std::size_t i = 7; i < 10; ++i) c[i] = tab.column(kImuColumns[i], path);
  ImuSequence s;
  s.frame = frame;
  for (const auto& r : tab.rows) {
    for (double v : r)
      if (!std::isfinite(v)) throw SchemaError(path + ": IMU samples must be finite");
    s.t.push_back(r[c[0]]);
    s.accel.push_back({r[c[1]], r[c[2]], r[c[3]]});
    s.gyro.push_back({r[c[4]], r[c[5]], r[c[6]]});
    if (mag) s.mag.push_back({r[c[7]], r[c[8]], r[c[9]]});
  }
  s.sample_rate = infer_rate(s.t, path);
  try {
    s.validate(1e-6 + 1e-3 / s.sample_rate);
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return s;
}

inline void write_imu_csv(const std::string& path, const ImuSequence& s) {
  CsvTable t;
  t.header = kImuColumns;
  if (!s.has_mag()) t.header.resize(7);
  for (std::size_t k = 0; k < s.size(); ++k) {
    std::vector<double> r{s.t[k], s.accel[k].x, s.accel[k].y, s.accel[k].z, s.gyro[k].x, s.gyro[k].y, s.gyro[k].z};
    if (s.has_mag()) r.insert(r.end(), {s.mag[k].x, s.mag[k].y, s.mag[k].z});
    t.rows.push_back(std::move(r));
  }
  write_csv(path, t);
}

inline std::vector<PoseSample> read_truth_csv(const std::string& path) {
  const CsvTable tab = read_csv(path);
  std::size_t c[8];
  for (std::size_t i = 0; i < 8; ++i) c[i] = tab.column(kTruthColumns[i], path);
  std::vector<PoseSample> out;
  for (const auto& r : tab.rows) {
    PoseSample p;
    p.t = r[c[0]];
    p.position = {r[c[1]], r[c[2]], r[c[3]]};
    p.q = Quaternion{r[c[4]], r[c[5]], r[c[6]], r[c[7]]};
    if (std::abs(p.q.norm() - 1.0) > 1e-6) throw SchemaError(path + ": truth quaternion is not unit");
    if (!out.empty() && !(p.t > out.back().t)) throw SchemaError(path + ": timestamps must increase");
    out.push_back(p);
  }
  return out;
}

inline void write_truth_csv(const std::string& path, const std::vector<PoseSample>& truth) {
  CsvTable t;
  t.header = kTruthColumns;
  for (const auto& p : truth) {
    t.rows.push_back({p.t, p.position.x, p.position.y, p.position.z, p.q.w, p.q.x, p.q.y, p.q.z});
  }
  write_csv(path, t);
}

// Attaches truth poses sample by sample; timestamps must agree.
inline void attach_truth(ImuSequence& s, std::vector<PoseSample> truth, const std::string& path) {
  if (truth.size() != s.size()) throw SchemaError(path + ": truth and IMU sample counts differ");
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (std::abs(truth[k].t - s.t[k]) > 1e-6) throw SchemaError(path + ": truth timestamps differ from IMU");
  }
  s.truth = std::move(truth);
}

inline metrics::TrajectoryEstimate truth_trajectory(const std::vector<PoseSample>& truth) {
  metrics::TrajectoryEstimate tr;
  for (const auto& p : truth) {
    tr.t.push_back(p.t);
    tr.p.emplace_back(p.position.x, p.position.y);
    tr.q.push_back(p.q);
  }
  return tr;
}

// Any CSV with t and optional px,py / qw..qz / bx,by columns. Missing positions
// are left as zeros and reported through `has_position`.
struct TrajectoryFile {
  metrics::TrajectoryEstimate traj;
  bool has_position = false;
};

inline TrajectoryFile read_trajectory_csv(const std::string& path) {
  const CsvTable tab = read_csv(path);
  TrajectoryFile f;
  const std::size_t ct = tab.column("t", path);
  const auto cx = tab.find("px"), cy = tab.find("py");
  f.has_position = cx && cy;
  const bool has_q = tab.find("qw").has_value();
  std::size_t cq[4]{};
  if (has_q) {
    const char* names[4] = {"qw", "qx", "qy", "qz"};
    for (int i = 0; i < 4; ++i) cq[i] = tab.column(names[i], path);
  }
  const auto bx = tab.find("bx"), by = tab.find("by");
  for (const auto& r : tab.rows) {
    f.traj.t.push_back(r[ct]);
    f.traj.p.push_back(f.has_position ? metrics::Vec2(r[*cx], r[*cy]) : metrics::Vec2::Zero());
    if (has_q) f.traj.q.push_back(Quaternion{r[cq[0]], r[cq[1]], r[cq[2]], r[cq[3]]});
    if (bx && by) f.traj.b.emplace_back(r[*bx], r[*by]);
  }
  try {
    f.traj.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(path + ": " + e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------
// orientation log

struct OrientationRecord {
  double t = 0.0;
  Quaternion q;
  std::optional<double> w_a, w_m;
};

// Empty weight cells mean no correction at that sample.
inline void write_orientation_log(const std::string& path, const std::vector<OrientationRecord>& log) {
  std::ofstream os = open_out(path);
  os << "t,qw,qx,qy,qz,w_a,w_m\n";
  for (const auto& r : log) {
    os << r.t << ',' << r.q.w << ',' << r.q.x << ',' << r.q.y << ',' << r.q.z << ',';
    if (r.w_a) os << *r.w_a;
    os << ',';
    if (r.w_m) os << *r.w_m;
    os << '\n';
  }
  finish(os, path);
}

inline std::vector<OrientationRecord> read_orientation_log(const std::string& path) {
  const CsvTable tab = read_csv(path);
  const char* names[7] = {"t", "qw", "qx", "qy", "qz", "w_a", "w_m"};
  std::size_t c[7];
  for (int i = 0; i < 7; ++i) c[i] = tab.column(names[i], path);
  std::vector<OrientationRecord> out;
  for (const auto& r : tab.rows) {
    OrientationRecord o;
    o.t = r[c[0]];
    o.q = Quaternion{r[c[1]], r[c[2]], r[c[3]], r[c[4]]};
    if (!std::isnan(r[c[5]])) o.w_a = r[c[5]];
    if (!std::isnan(r[c[6]])) o.w_m = r[c[6]];
    out.push_back(o);
  }
  return out;
}

// ---------------------------------------------------------------------------
// IPDPs, predictions, observations, beliefs

struct IpdpPair {
  double t0 = 0.0;
  double t1 = 0.0;
};

// One "t0,t1" pair per line; '#' comments allowed.
inline std::vector<IpdpPair> read_ipdp_list(const std::string& path) {
  std::ifstream is = open_in(path);
  std::vector<IpdpPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto f = split_fields(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (f.size() != 2) throw SchemaError(where + ": expected 't0,t1'");
    IpdpPair p{parse_double(f[0], where), parse_double(f[1], where)};
    if (!(p.t1 > p.t0)) throw SchemaError(where + ": t1 must exceed t0");
    out.push_back(p);
  }
  if (out.empty()) throw SchemaError(path + ": no IPDP pairs");
  return out;
}

inline void write_ipdp_list(const std::string& path, const std::vector<IpdpPair>& pairs) {
  std::ofstream os = open_out(path);
  for (const auto& p : pairs) os << p.t0 << ',' << p.t1 << '\n';
  finish(os, path);
}

struct PredictionRecord {
  double t0 = 0.0;
  double t1 = 0.0;
  bayes::Vec2 dp = bayes::Vec2::Zero();  // m
  bayes::Vec2 b = bayes::Vec2::Ones();   // m

  bayes::AsleControl control() const { return {dp, b, t1 - t0}; }
};

inline void write_predictions(const std::string& path, const std::vector<PredictionRecord>& preds) {
  CsvTable t;
  t.header = {"t0", "t1", "dpx", "dpy", "bx", "by"};
  for (const auto& p : preds) t.rows.push_back({p.t0, p.t1, p.dp.x(), p.dp.y(), p.b.x(), p.b.y()});
  write_csv(path, t);
}

inline std::vector<PredictionRecord> read_predictions(const std::string& path) {
  const CsvTable tab = read_csv(path);
  const char* names[6] = {"t0", "t1", "dpx", "dpy", "bx", "by"};
  std::size_t c[6];
  for (int i = 0; i < 6; ++i) c[i] = tab.column(names[i], path);
  std::vector<PredictionRecord> out;
  for (const auto& r : tab.rows) {
    PredictionRecord p{r[c[0]], r[c[1]], {r[c[2]], r[c[3]]}, {r[c[4]], r[c[5]]}};
    if (!(p.t1 > p.t0)) throw SchemaError(path + ": prediction with t1 <= t0");
    if (!(p.b.minCoeff() > 0.0)) throw SchemaError(path + ": Laplace scales must be positive");
    if (!out.empty() && p.t0 < out.back().t1 - 1e-9) throw SchemaError(path + ": predictions overlap or are unordered");
    out.push_back(p);
  }
  if (out.empty()) throw SchemaError(path + ": no predictions");
  return out;
}

// Planar position fix z = p + v, v ~ N(0, R) at time t.
struct ObservationRecord {
  double t = 0.0;
  bayes::ExternalObservation obs;
};

inline std::vector<ObservationRecord> read_observations(const std::string& path) {
  const CsvTable tab = read_csv(path);
  const char* names[6] = {"t", "zx", "zy", "rxx", "rxy", "ryy"};
  std::size_t c[6];
  for (int i = 0; i < 6; ++i) c[i] = tab.column(names[i], path);
  std::vector<ObservationRecord> out;
  for (const auto& r : tab.rows) {
    ObservationRecord o;
    o.t = r[c[0]];
    o.obs.z = Eigen::Vector2d(r[c[1]], r[c[2]]);
    o.obs.h = Eigen::Matrix2d::Identity();
    o.obs.r.resize(2, 2);
    o.obs.r << r[c[3]], r[c[4]], r[c[4]], r[c[5]];
    try {
      o.obs.validate();
    } catch (const std::invalid_argument& e) {
      throw SchemaError(path + ": " + e.what());
    }
    if (!out.empty() && !(o.t > out.back().t)) throw SchemaError(path + ": timestamps must increase");
    out.push_back(std::move(o));
  }
  return out;
}

inline void write_observations(const std::string& path, const std::vector<ObservationRecord>& obs) {
  CsvTable t;
  t.header = {"t", "zx", "zy", "rxx", "rxy", "ryy"};
  for (const auto& o : obs) t.rows.push_back({o.t, o.obs.z[0], o.obs.z[1], o.obs.r(0, 0), o.obs.r(0, 1), o.obs.r(1, 1)});
  write_csv(path, t);
}

inline void write_beliefs(const std::string& path, const std::vector<bayes::PositionBelief>& trace) {
  CsvTable t;
  t.header = {"t", "px", "py", "cxx", "cxy", "cyy"};
  for (const auto& b : trace) t.rows.push_back({b.t, b.mean.x(), b.mean.y(), b.cov(0, 0), b.cov(0, 1), b.cov(1, 1)});
  write_csv(path, t);
}

inline std::vector<bayes::PositionBelief> read_beliefs(const std::string& path) {
  const CsvTable tab = read_csv(path);
  const char* names[6] = {"t", "px", "py", "cxx", "cxy", "cyy"};
  std::size_t c[6];
  for (int i = 0; i < 6; ++i) c[i] = tab.column(names[i], path);
  std::vector<bayes::PositionBelief> out;
  for (const auto& r : tab.rows) {
    bayes::PositionBelief b;
    b.t = r[c[0]];
    b.mean = {r[c[1]], r[c[2]]};
    b.cov << r[c[3]], r[c[4]], r[c[4]], r[c[5]];
    out.push_back(b);
  }
  return out;
}

inline std::vector<bayes::Vec2> ellipse_polyline(const bayes::Ellipse& e, std::size_t points) {
  std::vector<bayes::Vec2> out;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  for (std::size_t k = 0; k < points; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(points);
    const double u = e.semi_major * std::cos(a), v = e.semi_minor * std::sin(a);
    out.emplace_back(e.center.x() + c * u - s * v, e.center.y() + s * u + c * v);
  }
  return out;
}

// One row per polyline vertex: t,k,x,y.
inline void write_ellipses(const std::string& path, const std::vector<bayes::PositionBelief>& trace, double confidence,
                           std::size_t points = 64) {
  std::ofstream os = open_out(path);
  os << "t,k,x,y\n";
  for (const auto& b : trace) {
    const auto poly = ellipse_polyline(bayes::uncertainty_ellipse(b, confidence), points);
    for (std::size_t k = 0; k < poly.size(); ++k) os << b.t << ',' << k << ',' << poly[k].x() << ',' << poly[k].y() << '\n';
  }
  finish(os, path);
}

// ---------------------------------------------------------------------------
// manifest

enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw SchemaError("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string id;
  std::string imu;    // relative to the manifest root
  std::string truth;
  std::string subject;
  bool seen = true;
  Split split = Split::kTrain;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::string root;  // directory the entry paths are relative to
  std::vector<ManifestEntry> sequences;

  bool operator==(const Manifest&) const = default;

  std::string path_of(const std::string& rel) const { return (fs::path(root) / rel).string(); }

  std::vector<const ManifestEntry*> select(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : sequences)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  void validate(bool check_files = true) const {
    std::map<std::string, int> ids;
    for (const auto& e : sequences) {
      if (e.id.empty()) throw SchemaError("manifest entry without id");
      if (ids[e.id]++) throw SchemaError("duplicate manifest id '" + e.id + "'");
      if (check_files) {
        for (const auto* f : {&e.imu, &e.truth}) {
          if (!fs::exists(path_of(*f))) throw IoError("manifest file missing: " + path_of(*f));
        }
      }
    }
  }
};

namespace detail {
inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& what) {
  if (!j.is_object()) throw SchemaError(what + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw SchemaError(what + ": unknown key '" + k + "'");
    }
  }
}
}  // namespace detail

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& e : m.sequences) {
    seqs.push_back({{"id", e.id}, {"imu", e.imu}, {"truth", e.truth}, {"subject", e.subject},
                    {"seen", e.seen}, {"split", to_string(e.split)}});
  }
  return {{"root", m.root}, {"sequences", seqs}};
}

// A relative root is resolved against the manifest's directory.
inline Manifest manifest_from_json(const nlohmann::json& j, const std::string& base_dir = ".") {
  detail::reject_unknown(j, {"root", "sequences"}, "manifest");
  Manifest m;
  try {
    m.root = j.value("root", std::string("."));
    for (const auto& s : j.at("sequences")) {
      detail::reject_unknown(s, {"id", "imu", "truth", "subject", "seen", "split"}, "manifest entry");
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.imu = s.at("imu").get<std::string>();
      e.truth = s.at("truth").get<std::string>();
      e.subject = s.value("subject", std::string());
      e.seen = s.value("seen", true);
      e.split = split_from_string(s.at("split").get<std::string>());
      m.sequences.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  if (fs::path(m.root).is_relative()) m.root = (fs::path(base_dir) / m.root).lexically_normal().string();
  return m;
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream is = open_in(path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream os = open_out(path);
  os << j.dump(2) << '\n';
  finish(os, path);
}

inline Manifest read_manifest(const std::string& path, bool check_files = true) {
  const fs::path p(path);
  Manifest m = manifest_from_json(read_json(path), p.has_parent_path() ? p.parent_path().string() : ".");
  m.validate(check_files);
  return m;
}

}  // namespace renil::io
