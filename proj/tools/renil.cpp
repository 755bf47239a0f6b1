// renil: synth -> align -> train -> predict -> chain / fuse -> eval.
//
// Exit codes: 0 ok, 2 schema or usage error, 3 numeric divergence, 4 I/O error.
// Log verbosity: RENIL_LOG=quiet|info|debug.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "renil/cli.hpp"

namespace {

using namespace renil;

constexpr int kExitSchema = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : run_config_from_json(io::read_json(path));
}

bayes::PositionBelief make_init(const std::vector<io::PredictionRecord>& preds, const std::string& truth,
                                const std::vector<double>& xy, double var) {
  bayes::Vec2 p0 = bayes::Vec2::Zero();
  if (!truth.empty()) {
    p0 = cli::truth_position_at(io::read_truth_csv(truth), preds.front().t0);
  } else if (!xy.empty()) {
    p0 = {xy[0], xy[1]};
  }
  return cli::initial_belief(preds, p0, var);
}

int run(int argc, char** argv) {
  CLI::App app{"Pedestrian inertial localisation pipeline"};
  app.require_subcommand(1);

  std::string config_path, out, manifest_path, truth, checkpoint, aligned, ipdp, predictions, observations, estimates;
  std::optional<std::uint64_t> seed;
  double interval = 0.0, init_var = 0.0, from = -std::numeric_limits<double>::infinity();
  std::vector<double> init_xy, levels{0.683, 0.95, 0.997};

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with ground truth and a manifest");
  std::string spec_path;
  synth->add_option("spec", spec_path, "Synthesis spec (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Override the synthesis seed");

  auto* align = app.add_subcommand("align", "Rotate device-frame IMU data into the navigation frame");
  std::string imu;
  align->add_option("imu", imu, "Device-frame IMU CSV")->required();
  align->add_option("--truth", truth, "Truth CSV: initial orientation and travelled distance");
  align->add_option("--config", config_path, "Run configuration (JSON)");
  align->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the displacement network");
  train->add_option("--manifest", manifest_path, "Dataset manifest (JSON)")->required();
  train->add_option("--config", config_path, "Run configuration (JSON)");
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Output directory")->required();

  auto* predict = app.add_subcommand("predict", "Predict displacements between IPDPs");
  predict->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  predict->add_option("--aligned", aligned, "Navigation-frame IMU CSV")->required();
  auto* ipdp_opt = predict->add_option("--ipdp", ipdp, "IPDP list: one 't0,t1' pair per line");
  predict->add_option("--interval", interval, "Regular IPDP spacing in seconds")->excludes(ipdp_opt);
  predict->add_option("--out", out, "Predictions CSV")->required();

  auto add_init = [&](CLI::App* c) {
    c->add_option("--truth", truth, "Start at the truth position of the first IPDP");
    c->add_option("--init", init_xy, "Initial position x y")->expected(2);
    c->add_option("--init-var", init_var, "Initial per-axis variance, m^2");
    c->add_option("--config", config_path, "Run configuration (JSON)");
    c->add_option("--out", out, "Output directory")->required();
  };
  auto* chain = app.add_subcommand("chain", "Propagate beliefs through the IPDP chain");
  chain->add_option("--predictions", predictions, "Predictions CSV")->required();
  add_init(chain);

  auto* fuse = app.add_subcommand("fuse", "Fuse predictions with external position fixes");
  fuse->add_option("--predictions", predictions, "Predictions CSV")->required();
  fuse->add_option("--observations", observations, "Observations CSV")->required();
  fuse->add_option("--seed", seed, "Override the config seed");
  add_init(fuse);

  auto* eval = app.add_subcommand("eval", "Score estimates against ground truth");
  eval->add_option("--estimates", estimates, "Estimate CSV (beliefs, trajectory or orientation log)")->required();
  eval->add_option("--truth", truth, "Truth CSV")->required();
  eval->add_option("--predictions", predictions, "Predictions CSV for interval coverage");
  eval->add_option("--levels", levels, "Coverage levels");
  eval->add_option("--from", from, "Ignore estimates before this time, s");
  eval->add_option("--out", out, "Report file (also printed)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitSchema;
  }

  if (synth->parsed()) {
    SynthSpec spec = synth_spec_from_json(io::read_json(spec_path));
    if (seed) spec.seed = *seed;
    cli::cmd_synth(spec, out);
  } else if (align->parsed()) {
    const RunConfig cfg = load_config(config_path);
    cli::cmd_align(imu, truth.empty() ? std::nullopt : std::optional<std::string>(truth), cfg.filter, out);
  } else if (train->parsed()) {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    cli::cmd_train(io::read_manifest(manifest_path), cfg, out);
  } else if (predict->parsed()) {
    std::vector<io::IpdpPair> pairs;
    if (!ipdp.empty()) {
      pairs = io::read_ipdp_list(ipdp);
    } else if (interval > 0.0) {
      pairs = cli::regular_ipdps(io::read_imu_csv(aligned, Frame::kNav), interval);
    } else {
      throw SchemaError("predict needs --ipdp or --interval");
    }
    cli::cmd_predict(checkpoint, aligned, pairs, out);
  } else if (chain->parsed()) {
    const RunConfig cfg = load_config(config_path);
    const auto preds = io::read_predictions(predictions);
    cli::cmd_chain(preds, make_init(preds, truth, init_xy, init_var), cfg.bayes, out);
  } else if (fuse->parsed()) {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    const auto preds = io::read_predictions(predictions);
    cli::cmd_fuse(preds, io::read_observations(observations), make_init(preds, truth, init_xy, init_var), cfg.bayes,
                  cfg.seed, out);
  } else if (eval->parsed()) {
    cli::EvalOptions opt;
    if (!predictions.empty()) opt.predictions = predictions;
    opt.levels = levels;
    opt.from = from;
    const auto r = cli::cmd_eval(estimates, truth, opt, out.empty() ? std::nullopt : std::optional<std::string>(out));
    metrics::write_report(std::cout, r);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const SchemaError& e) {
    std::cerr << "renil: schema error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const std::invalid_argument& e) {
    std::cerr << "renil: invalid input: " << e.what() << '\n';
    return kExitSchema;
  } catch (const DivergenceError& e) {
    std::cerr << "renil: numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "renil: I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "renil: error: " << e.what() << '\n';
    return 1;
  }
}
