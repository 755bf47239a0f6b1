#pragma once

// Run configuration and synthetic-corpus description, both strict JSON:
// missing keys keep their defaults, unknown keys are schema errors.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "renil/asle/config.hpp"
#include "renil/asle/train.hpp"
#include "renil/errors.hpp"
#include "renil/orient.hpp"
#include "renil/synthimu.hpp"

namespace renil {

enum class TrainAlignment { kTruth, kFilter };

struct BayesSettings {
  std::size_t sweeps = 5;
  std::size_t burn_in = 2;
  double ellipse_confidence = 0.997;
  std::size_t ellipse_points = 64;

  bool operator==(const BayesSettings&) const = default;

  void validate() const {
    if (!(sweeps > burn_in)) throw std::invalid_argument("bayes: sweeps must exceed burn_in");
    if (!(ellipse_confidence > 0.0 && ellipse_confidence < 1.0)) {
      throw std::invalid_argument("bayes: ellipse_confidence must lie in (0, 1)");
    }
    if (ellipse_points < 3) throw std::invalid_argument("bayes: ellipse_points must be >= 3");
  }
};

struct RunConfig {
  orient::FilterParams filter;
  asle::AsleConfig model = asle::AsleConfig::small();
  asle::TrainConfig train;
  TrainAlignment train_alignment = TrainAlignment::kTruth;
  BayesSettings bayes;
  std::uint64_t seed = 0;

  void validate() const {
    filter.validate();
    model.validate();
    train.validate();
    bayes.validate();
  }
};

struct SynthSpec {
  std::size_t count = 10;
  double duration = 60.0;  // s
  double sample_rate = 200.0;
  std::vector<synth::PathKind> kinds{synth::PathKind::kStraight, synth::PathKind::kCircle,
                                     synth::PathKind::kWaypointSpline};
  double speed = -1.0;  // m/s; negative draws a random walking speed
  synth::NoiseSpec noise;
  double train_fraction = 0.5;
  double val_fraction = 0.1;
  std::size_t subjects = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (count == 0) throw std::invalid_argument("synth: count must be positive");
    if (!(duration > 0.0 && sample_rate > 0.0)) throw std::invalid_argument("synth: duration and rate must be positive");
    if (kinds.empty()) throw std::invalid_argument("synth: kinds is empty");
    if (!(train_fraction >= 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0)) {
      throw std::invalid_argument("synth: split fractions must be non-negative and sum to at most 1");
    }
    if (subjects == 0) throw std::invalid_argument("synth: subjects must be positive");
  }
};

namespace config_detail {

using nlohmann::json;

// `known` is the serialised default; its keys are the accepted ones.
inline void check_keys(const json& j, const json& known, const std::string& what) {
  if (!j.is_object()) throw SchemaError(what + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) throw SchemaError(what + ": unknown key '" + k + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

inline json vec3_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

inline Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw SchemaError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json filter_json(const orient::FilterParams& p) {
  return {{"u", p.u},           {"v", p.v},
          {"h", p.h},           {"gravity", p.gravity},
          {"t_step", p.t_step}, {"delta", p.delta},
          {"enable_accel", p.enable_accel}, {"enable_mag", p.enable_mag},
          {"mag_weight_inverted", p.mag_weight_inverted}};
}

inline orient::FilterParams filter_from(const json& j) {
  orient::FilterParams p;
  check_keys(j, filter_json(p), "filter");
  get(j, "u", p.u);
  get(j, "v", p.v);
  get(j, "h", p.h);
  get(j, "gravity", p.gravity);
  get(j, "t_step", p.t_step);
  get(j, "delta", p.delta);
  get(j, "enable_accel", p.enable_accel);
  get(j, "enable_mag", p.enable_mag);
  get(j, "mag_weight_inverted", p.mag_weight_inverted);
  return p;
}

inline json augmentation_json(const data::AugmentationSpec& a) {
  return {{"mask_probability", a.mask_probability},
          {"quat_bias_max_angle", a.quat_bias_max_angle},
          {"accel_sigma", a.accel_sigma},
          {"gyro_sigma", a.gyro_sigma},
          {"heading_range", a.heading_range},
          {"protrusion_count", a.protrusion_count},
          {"protrusion_amplitude", a.protrusion_amplitude},
          {"protrusion_width", a.protrusion_width},
          {"p_mask", a.p_mask},
          {"p_quat_bias", a.p_quat_bias},
          {"p_gaussian", a.p_gaussian},
          {"p_heading", a.p_heading},
          {"p_protrusion", a.p_protrusion}};
}

inline data::AugmentationSpec augmentation_from(const json& j) {
  data::AugmentationSpec a;
  check_keys(j, augmentation_json(a), "train.augmentation");
  get(j, "mask_probability", a.mask_probability);
  get(j, "quat_bias_max_angle", a.quat_bias_max_angle);
  get(j, "accel_sigma", a.accel_sigma);
  get(j, "gyro_sigma", a.gyro_sigma);
  get(j, "heading_range", a.heading_range);
  get(j, "protrusion_count", a.protrusion_count);
  get(j, "protrusion_amplitude", a.protrusion_amplitude);
  get(j, "protrusion_width", a.protrusion_width);
  get(j, "p_mask", a.p_mask);
  get(j, "p_quat_bias", a.p_quat_bias);
  get(j, "p_gaussian", a.p_gaussian);
  get(j, "p_heading", a.p_heading);
  get(j, "p_protrusion", a.p_protrusion);
  return a;
}

inline json scale_json(const data::ScaleDistribution& s) {
  return {{"kind", data::to_string(s.kind)}, {"min_s", s.min_s}, {"max_s", s.max_s}};
}

inline data::ScaleDistribution scale_from(const json& j) {
  data::ScaleDistribution s;
  check_keys(j, scale_json(s), "train.scale");
  if (j.contains("kind")) s.kind = data::scale_kind_from_string(j.at("kind").get<std::string>());
  get(j, "min_s", s.min_s);
  get(j, "max_s", s.max_s);
  return s;
}

inline std::string to_string(TrainAlignment a) { return a == TrainAlignment::kTruth ? "truth" : "filter"; }

inline TrainAlignment alignment_from(const std::string& s) {
  if (s == "truth") return TrainAlignment::kTruth;
  if (s == "filter") return TrainAlignment::kFilter;
  throw SchemaError("train.alignment must be 'truth' or 'filter'");
}

inline json train_json(const asle::TrainConfig& t, TrainAlignment align) {
  return {{"lr", t.adam.lr},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"plateau_factor", t.plateau_factor},
          {"plateau_patience", t.plateau_patience},
          {"min_lr", t.min_lr},
          {"fm_weight", t.fm_weight},
          {"include_log_t", t.include_log_t},
          {"windows_per_epoch", t.windows_per_epoch},
          {"scale", scale_json(t.scale)},
          {"val_windows", t.val_windows},
          {"val_duration", t.val_duration},
          {"augmentation", augmentation_json(t.augmentation)},
          {"alignment", to_string(align)}};
}

inline void train_from(const json& j, asle::TrainConfig& t, TrainAlignment& align) {
  check_keys(j, train_json(t, align), "train");
  get(j, "lr", t.adam.lr);
  get(j, "beta1", t.adam.beta1);
  get(j, "beta2", t.adam.beta2);
  get(j, "eps", t.adam.eps);
  get(j, "batch_size", t.batch_size);
  get(j, "epochs", t.epochs);
  get(j, "plateau_factor", t.plateau_factor);
  get(j, "plateau_patience", t.plateau_patience);
  get(j, "min_lr", t.min_lr);
  get(j, "fm_weight", t.fm_weight);
  get(j, "include_log_t", t.include_log_t);
  get(j, "windows_per_epoch", t.windows_per_epoch);
  if (j.contains("scale")) t.scale = scale_from(j.at("scale"));
  get(j, "val_windows", t.val_windows);
  get(j, "val_duration", t.val_duration);
  if (j.contains("augmentation")) t.augmentation = augmentation_from(j.at("augmentation"));
  if (j.contains("alignment")) align = alignment_from(j.at("alignment").get<std::string>());
}

inline json bayes_json(const BayesSettings& b) {
  return {{"sweeps", b.sweeps},
          {"burn_in", b.burn_in},
          {"ellipse_confidence", b.ellipse_confidence},
          {"ellipse_points", b.ellipse_points}};
}

inline BayesSettings bayes_from(const json& j) {
  BayesSettings b;
  check_keys(j, bayes_json(b), "bayes");
  get(j, "sweeps", b.sweeps);
  get(j, "burn_in", b.burn_in);
  get(j, "ellipse_confidence", b.ellipse_confidence);
  get(j, "ellipse_points", b.ellipse_points);
  return b;
}

inline json noise_json(const synth::NoiseSpec& n) {
  json patches = json::array();
  for (const auto& p : n.mag_patches) {
    patches.push_back({{"location", vec3_json(p.location)}, {"radius", p.radius}, {"offset", vec3_json(p.offset)}});
  }
  return {{"accel_sigma", n.accel_sigma}, {"gyro_sigma", n.gyro_sigma}, {"gyro_bias", vec3_json(n.gyro_bias)},
          {"mag_sigma", n.mag_sigma},     {"mag_patches", patches}};
}

inline synth::NoiseSpec noise_from(const json& j) {
  synth::NoiseSpec n;
  check_keys(j, noise_json(n), "synth.noise");
  get(j, "accel_sigma", n.accel_sigma);
  get(j, "gyro_sigma", n.gyro_sigma);
  if (j.contains("gyro_bias")) n.gyro_bias = vec3_from(j.at("gyro_bias"));
  get(j, "mag_sigma", n.mag_sigma);
  if (j.contains("mag_patches")) {
    for (const auto& p : j.at("mag_patches")) {
      check_keys(p, json{{"location", 0}, {"radius", 0}, {"offset", 0}}, "synth.noise.mag_patches");
      synth::DisturbancePatch d;
      if (p.contains("location")) d.location = vec3_from(p.at("location"));
      get(p, "radius", d.radius);
      if (p.contains("offset")) d.offset = vec3_from(p.at("offset"));
      n.mag_patches.push_back(d);
    }
  }
  return n;
}

// Wraps json / validation exceptions into schema errors.
template <class F>
auto schema_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(what + ": " + e.what());
  }
}

}  // namespace config_detail

inline nlohmann::json to_json(const RunConfig& c) {
  using namespace config_detail;
  return {{"filter", filter_json(c.filter)},
          {"model", json(c.model)},
          {"train", train_json(c.train, c.train_alignment)},
          {"bayes", bayes_json(c.bayes)},
          {"seed", c.seed}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  return schema_guard("config", [&] {
    RunConfig c;
    check_keys(j, to_json(c), "config");
    if (j.contains("filter")) c.filter = filter_from(j.at("filter"));
    if (j.contains("model")) c.model = j.at("model").get<asle::AsleConfig>();
    if (j.contains("train")) train_from(j.at("train"), c.train, c.train_alignment);
    if (j.contains("bayes")) c.bayes = bayes_from(j.at("bayes"));
    get(j, "seed", c.seed);
    c.validate();
    return c;
  });
}

inline nlohmann::json to_json(const SynthSpec& s) {
  using namespace config_detail;
  json kinds = json::array();
  for (auto k : s.kinds) kinds.push_back(synth::to_string(k));
  return {{"count", s.count},
          {"duration", s.duration},
          {"sample_rate", s.sample_rate},
          {"kinds", kinds},
          {"speed", s.speed},
          {"noise", noise_json(s.noise)},
          {"train_fraction", s.train_fraction},
          {"val_fraction", s.val_fraction},
          {"subjects", s.subjects},
          {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  return schema_guard("synth spec", [&] {
    SynthSpec s;
    check_keys(j, to_json(s), "synth spec");
    get(j, "count", s.count);
    get(j, "duration", s.duration);
    get(j, "sample_rate", s.sample_rate);
    if (j.contains("kinds")) {
      s.kinds.clear();
      for (const auto& k : j.at("kinds")) s.kinds.push_back(synth::path_kind_from_string(k.get<std::string>()));
    }
    get(j, "speed", s.speed);
    if (j.contains("noise")) s.noise = noise_from(j.at("noise"));
    get(j, "train_fraction", s.train_fraction);
    get(j, "val_fraction", s.val_fraction);
    get(j, "subjects", s.subjects);
    get(j, "seed", s.seed);
    s.validate();
    return s;
  });
}

}  // namespace renil
