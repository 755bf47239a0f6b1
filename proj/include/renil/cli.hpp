#pragma once

// Pipeline commands behind the `renil` executable. Each command reads and
// writes the canonical files of renil/io.hpp and is deterministic given its
// inputs and seed.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "renil/asle/checkpoint.hpp"
#include "renil/asle/train.hpp"
#include "renil/bayes.hpp"
#include "renil/config.hpp"
#include "renil/io.hpp"
#include "renil/metrics.hpp"
#include "renil/orient.hpp"
#include "renil/synthimu.hpp"

namespace renil::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// logging: RENIL_LOG = quiet | info (default) | debug

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
  const char* v = std::getenv("RENIL_LOG");
  if (!v) return LogLevel::kInfo;
  const std::string s(v);
  if (s == "quiet") return LogLevel::kQuiet;
  if (s == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

inline void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) <= static_cast<int>(log_level())) std::cerr << "renil: " << msg << '\n';
}

inline std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// ---------------------------------------------------------------------------
// synth

struct SynthOutputs {
  std::string manifest;
  std::vector<std::string> imu_files;
  std::vector<std::string> truth_files;
};

inline SynthOutputs cmd_synth(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  SynthOutputs out;
  io::Manifest m;
  m.root = ".";
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.count)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(spec.count)));
  for (std::size_t i = 0; i < spec.count; ++i) {
    synth::TrajectorySpec ts =
        synth::random_walk_spec(spec.kinds[i % spec.kinds.size()], spec.duration, derive_seed(spec.seed, i, 1));
    ts.sample_rate = spec.sample_rate;
    if (spec.speed >= 0.0) ts.gait = spec.speed > 0.0 ? synth::walking_gait(spec.speed) : synth::GaitModel{0.0};
    const auto poses = synth::generate_trajectory(ts, derive_seed(spec.seed, i, 2));
    const ImuSequence imu = synth::add_noise(synth::inverse_imu(poses), spec.noise, derive_seed(spec.seed, i, 3));

    char id[32];
    std::snprintf(id, sizeof id, "seq%03zu", i);
    io::ManifestEntry e;
    e.id = id;
    e.imu = e.id + "_imu.csv";
    e.truth = e.id + "_truth.csv";
    e.subject = "subject" + std::to_string(i % spec.subjects);
    e.split = i < n_train ? io::Split::kTrain : (i < n_train + n_val ? io::Split::kVal : io::Split::kTest);
    io::write_imu_csv(join(out_dir, e.imu), imu);
    io::write_truth_csv(join(out_dir, e.truth), imu.truth);
    out.imu_files.push_back(join(out_dir, e.imu));
    out.truth_files.push_back(join(out_dir, e.truth));
    m.sequences.push_back(std::move(e));
  }
  // A subject is seen when any of its sequences is used for training.
  for (auto& e : m.sequences) {
    e.seen = false;
    for (const auto& o : m.sequences) e.seen = e.seen || (o.split == io::Split::kTrain && o.subject == e.subject);
  }
  out.manifest = join(out_dir, "manifest.json");
  io::write_json(out.manifest, io::manifest_to_json(m));
  io::write_json(join(out_dir, "synth_spec.json"), to_json(spec));
  log(LogLevel::kInfo, "synthesised " + std::to_string(spec.count) + " sequences into " + out_dir);
  return out;
}

// ---------------------------------------------------------------------------
// align

// Attitude of a device at rest from the mean specific force and field over
// its first accelerometer window; the yaw puts the horizontal field on the
// reference field's bearing.
inline Quaternion static_initial_orientation(const ImuSequence& imu, const orient::FilterParams& p,
                                             const Vec3& ref_field = synth::kDefaultMagField) {
  const std::size_t n = std::min<std::size_t>(imu.size(), std::max<std::size_t>(1, std::llround(p.t_step * imu.sample_rate)));
  Vec3 a{}, m{};
  for (std::size_t k = 0; k < n; ++k) {
    a += imu.accel[k];
    if (imu.has_mag()) m += imu.mag[k];
  }
  Euler e;
  e.roll = std::atan2(a.y, a.z);
  e.pitch = std::atan2(-a.x, std::hypot(a.y, a.z));
  if (imu.has_mag()) {
    const Vec3 level = rotate_to_nav(from_euler(e), m);
    e.yaw = std::atan2(ref_field.y, ref_field.x) - std::atan2(level.y, level.x);
  }
  return from_euler(e);
}

struct AlignOutputs {
  std::string aligned;
  std::string orientation;
  orient::FilterStats stats;
};

// With a truth track, the filter starts from the true initial orientation and
// closes magnetometer windows on true travelled distance.
inline AlignOutputs cmd_align(const std::string& imu_path, const std::optional<std::string>& truth_path,
                              const orient::FilterParams& params, const std::string& out_dir) {
  ImuSequence imu = io::read_imu_csv(imu_path);
  std::vector<Vec3> positions;
  Quaternion q0;
  if (truth_path) {
    io::attach_truth(imu, io::read_truth_csv(*truth_path), *truth_path);
    q0 = imu.truth[0].q;
    for (const auto& s : imu.truth) positions.push_back(s.position);
  } else {
    q0 = static_initial_orientation(imu, params);
  }
  const orient::AlignmentResult r = orient::align_sequence(imu, params, q0, positions);
  AlignOutputs out;
  out.aligned = join(out_dir, "aligned.csv");
  out.orientation = join(out_dir, "orientation.csv");
  out.stats = r.stats;
  io::write_imu_csv(out.aligned, r.aligned);
  std::vector<io::OrientationRecord> logv;
  for (std::size_t k = 0; k < imu.size(); ++k) logv.push_back({imu.t[k], r.orientation[k], r.w_a[k], r.w_m[k]});
  io::write_orientation_log(out.orientation, logv);
  log(LogLevel::kInfo, "aligned " + std::to_string(imu.size()) + " samples (" +
                           std::to_string(r.stats.accel_corrections) + " accel, " +
                           std::to_string(r.stats.mag_corrections) + " mag corrections)");
  return out;
}

// ---------------------------------------------------------------------------
// train

inline ImuSequence load_aligned_sequence(const io::Manifest& m, const io::ManifestEntry& e, const RunConfig& cfg) {
  const std::string imu_path = m.path_of(e.imu), truth_path = m.path_of(e.truth);
  ImuSequence imu = io::read_imu_csv(imu_path);
  io::attach_truth(imu, io::read_truth_csv(truth_path), truth_path);
  if (cfg.train_alignment == TrainAlignment::kTruth) return orient::align_with_truth(imu);
  std::vector<Vec3> pos;
  for (const auto& s : imu.truth) pos.push_back(s.position);
  return orient::align_sequence(imu, cfg.filter, imu.truth[0].q, pos).aligned;
}

struct TrainOutputs {
  std::string checkpoint;
  std::string loss_curve;
  std::vector<asle::EpochStats> history;
};

inline TrainOutputs cmd_train(const io::Manifest& manifest, const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::vector<ImuSequence> train, val;
  for (const auto* e : manifest.select(io::Split::kTrain)) train.push_back(load_aligned_sequence(manifest, *e, cfg));
  for (const auto* e : manifest.select(io::Split::kVal)) val.push_back(load_aligned_sequence(manifest, *e, cfg));
  if (train.empty()) throw SchemaError("manifest has no train sequences");
  if (val.empty()) throw SchemaError("manifest has no val sequences");

  asle::AsleModel<float> model(cfg.model, derive_seed(cfg.seed, 0, 0x3D));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  TrainOutputs out;
  out.checkpoint = join(out_dir, "checkpoint.bin");
  out.loss_curve = join(out_dir, "loss_curve.csv");
  out.history = asle::fit(model, std::span<const ImuSequence>(train), std::span<const ImuSequence>(val), cfg.train,
                          derive_seed(cfg.seed, 1, 0x3D), [](const asle::EpochStats& s) {
                            log(LogLevel::kInfo, "epoch " + std::to_string(s.epoch) + " loss " +
                                                     std::to_string(s.train.total) + " val mae " +
                                                     std::to_string(s.val.mae) + " m");
                          });
  asle::save_checkpoint(out.checkpoint, model);
  io::CsvTable curve;
  curve.header = {"epoch", "train_total", "train_nll", "train_fm", "val_nll", "val_mae", "val_baseline_mae", "lr"};
  for (const auto& s : out.history) {
    curve.rows.push_back({static_cast<double>(s.epoch), s.train.total, s.train.nll, s.train.fm, s.val.nll, s.val.mae,
                          s.val.baseline_mae, s.lr});
  }
  io::write_csv(out.loss_curve, curve);
  io::write_json(join(out_dir, "run_config.json"), to_json(cfg));
  return out;
}

// ---------------------------------------------------------------------------
// predict

// Consecutive pairs (t, t + interval) covering the sequence.
inline std::vector<io::IpdpPair> regular_ipdps(const ImuSequence& s, double interval) {
  if (!(interval > 0.0)) throw SchemaError("IPDP interval must be positive");
  std::vector<io::IpdpPair> out;
  const double end = s.t.back();
  for (double t0 = s.t.front(); t0 + interval <= end + 1e-9; t0 += interval) out.push_back({t0, t0 + interval});
  if (out.empty()) throw SchemaError("sequence shorter than one IPDP interval");
  return out;
}

inline std::size_t nearest_index(const ImuSequence& s, double t) {
  const double f = (t - s.t.front()) * s.sample_rate;
  if (f < -0.5 || f > static_cast<double>(s.size() - 1) + 0.5) {
    throw SchemaError("IPDP time " + std::to_string(t) + " outside the aligned sequence");
  }
  return static_cast<std::size_t>(std::clamp<long long>(std::llround(f), 0, static_cast<long long>(s.size()) - 1));
}

template <class T>
std::vector<io::PredictionRecord> predict_ipdps(const asle::AsleModel<T>& model, const ImuSequence& aligned,
                                                const std::vector<io::IpdpPair>& ipdps) {
  std::vector<asle::TrainingSample> samples;
  for (const auto& p : ipdps) {
    const std::size_t a = nearest_index(aligned, p.t0), b = nearest_index(aligned, p.t1);
    if (b <= a) throw SchemaError("IPDP pair covers no samples");
    asle::TrainingSample s;
    s.x = data::patch(data::extract(aligned, a, b), model.config().patch_length);
    s.t = static_cast<double>(b - a) / aligned.sample_rate;
    samples.push_back(std::move(s));
  }
  const auto pred = asle::predict_samples(model, std::span<const asle::TrainingSample>(samples));
  std::vector<io::PredictionRecord> out;
  for (std::size_t i = 0; i < ipdps.size(); ++i) out.push_back({ipdps[i].t0, ipdps[i].t1, pred[i].dp, pred[i].b});
  return out;
}

inline std::vector<io::PredictionRecord> cmd_predict(const std::string& checkpoint, const std::string& aligned_path,
                                                     const std::vector<io::IpdpPair>& ipdps, const std::string& out_path) {
  const auto model = asle::load_checkpoint<float>(checkpoint);
  const ImuSequence aligned = io::read_imu_csv(aligned_path, Frame::kNav);
  const auto preds = predict_ipdps(model, aligned, ipdps);
  io::write_predictions(out_path, preds);
  log(LogLevel::kInfo, "wrote " + std::to_string(preds.size()) + " predictions");
  return preds;
}

// ---------------------------------------------------------------------------
// chain / fuse

// Position of the truth track at time t, linearly interpolated.
inline bayes::Vec2 truth_position_at(const std::vector<PoseSample>& truth, double t) {
  if (truth.empty()) throw SchemaError("truth track is empty");
  if (t <= truth.front().t) return {truth.front().position.x, truth.front().position.y};
  if (t >= truth.back().t) return {truth.back().position.x, truth.back().position.y};
  const auto it = std::upper_bound(truth.begin(), truth.end(), t, [](double v, const PoseSample& p) { return v < p.t; });
  const PoseSample& b = *it;
  const PoseSample& a = *(it - 1);
  const double f = (t - a.t) / (b.t - a.t);
  return {a.position.x + f * (b.position.x - a.position.x), a.position.y + f * (b.position.y - a.position.y)};
}

inline bayes::PositionBelief initial_belief(const std::vector<io::PredictionRecord>& preds, const bayes::Vec2& p0,
                                            double variance) {
  if (!(variance >= 0.0)) throw SchemaError("initial variance must be non-negative");
  bayes::PositionBelief b;
  b.mean = p0;
  b.cov = bayes::Mat2::Identity() * variance;
  b.t = preds.front().t0;
  return b;
}

inline std::vector<bayes::PositionBelief> run_chain(const std::vector<io::PredictionRecord>& preds,
                                                    const bayes::PositionBelief& init) {
  std::vector<bayes::PositionBelief> trace{init};
  for (const auto& p : preds) {
    bayes::PositionBelief b = bayes::chain_step(trace.back(), p.control());
    b.t = p.t1;
    trace.push_back(b);
  }
  return trace;
}

// Observations are applied at the prediction whose end time they match
// within `tol` seconds.
inline std::vector<bayes::PositionBelief> run_fuse(const std::vector<io::PredictionRecord>& preds,
                                                   const std::vector<io::ObservationRecord>& obs,
                                                   const bayes::PositionBelief& init, const BayesSettings& s,
                                                   std::uint64_t seed, double tol = 1e-6) {
  s.validate();
  std::vector<bayes::PositionBelief> trace{init};
  std::size_t j = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    while (j < obs.size() && obs[j].t < p.t1 - tol) ++j;
    bayes::PositionBelief b;
    if (j < obs.size() && std::abs(obs[j].t - p.t1) <= tol) {
      bayes::GibbsConfig g;
      g.sweeps = s.sweeps;
      g.burn_in = s.burn_in;
      g.seed = derive_seed(seed, i, 0xF5);
      b = bayes::fuse_step(trace.back(), p.control(), obs[j].obs, g);
    } else {
      b = bayes::chain_step(trace.back(), p.control());
    }
    b.t = p.t1;
    trace.push_back(b);
  }
  return trace;
}

struct TraceOutputs {
  std::string beliefs;
  std::string ellipses;
  std::vector<bayes::PositionBelief> trace;
};

inline TraceOutputs write_trace(std::vector<bayes::PositionBelief> trace, const BayesSettings& s,
                                const std::string& out_dir) {
  TraceOutputs out;
  out.beliefs = join(out_dir, "beliefs.csv");
  out.ellipses = join(out_dir, "ellipses.csv");
  io::write_beliefs(out.beliefs, trace);
  io::write_ellipses(out.ellipses, trace, s.ellipse_confidence, s.ellipse_points);
  out.trace = std::move(trace);
  return out;
}

inline TraceOutputs cmd_chain(const std::vector<io::PredictionRecord>& preds, const bayes::PositionBelief& init,
                              const BayesSettings& s, const std::string& out_dir) {
  s.validate();
  return write_trace(run_chain(preds, init), s, out_dir);
}

inline TraceOutputs cmd_fuse(const std::vector<io::PredictionRecord>& preds,
                             const std::vector<io::ObservationRecord>& obs, const bayes::PositionBelief& init,
                             const BayesSettings& s, std::uint64_t seed, const std::string& out_dir) {
  return write_trace(run_fuse(preds, obs, init, s, seed), s, out_dir);
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::optional<std::string> predictions;  // adds coverage of predicted displacements
  std::vector<double> levels{0.683, 0.95, 0.997};
  double from = -std::numeric_limits<double>::infinity();  // s, ignore estimates before this time
};

inline metrics::Report cmd_eval(const std::string& estimates, const std::string& truth_path, const EvalOptions& opt,
                                const std::optional<std::string>& out_path) {
  io::TrajectoryFile est = io::read_trajectory_csv(estimates);
  const auto truth_poses = io::read_truth_csv(truth_path);
  const metrics::TrajectoryEstimate truth = io::truth_trajectory(truth_poses);

  metrics::TrajectoryEstimate e;
  for (std::size_t i = 0; i < est.traj.size(); ++i) {
    if (est.traj.t[i] < opt.from) continue;
    e.t.push_back(est.traj.t[i]);
    e.p.push_back(est.traj.p[i]);
    if (!est.traj.q.empty()) e.q.push_back(est.traj.q[i]);
  }
  metrics::Report r;
  try {
    if (est.has_position) {
      r = metrics::evaluate(e, truth);
    } else {
      r.matched = metrics::match(e, truth).size();
      if (r.matched == 0) throw std::invalid_argument("estimate and truth do not overlap in time");
      if (!e.q.empty()) {
        const auto [q, c] = metrics::orientation_errors(e, truth);
        r.qae = q;
        r.cs = c;
      }
    }
    if (opt.predictions) {
      const auto preds = io::read_predictions(*opt.predictions);
      std::vector<bayes::Vec2> dp, b, dp_true;
      for (const auto& p : preds) {
        dp.push_back(p.dp);
        b.push_back(p.b);
        dp_true.push_back(truth_position_at(truth_poses, p.t1) - truth_position_at(truth_poses, p.t0));
      }
      const auto rates = metrics::coverage(dp, b, dp_true, opt.levels);
      for (std::size_t i = 0; i < rates.size(); ++i) r.coverage.emplace_back(opt.levels[i], rates[i]);
    }
  } catch (const std::invalid_argument& ex) {
    throw SchemaError(std::string("eval: ") + ex.what());
  }
  if (out_path) {
    std::ofstream os = io::open_out(*out_path);
    metrics::write_report(os, r);
    io::finish(os, *out_path);
  }
  return r;
}

}  // namespace renil::cli
