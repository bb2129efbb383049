// Command-line front end: trajectory prediction on road networks, from GPS
// ingestion through training, evaluation, and experiment grids.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "statvt/statvt.hpp"

namespace {

using statvt::ExperimentConfig;

std::vector<std::int64_t> parse_id_list(const std::string& csv) {
  std::vector<std::int64_t> out;
  for (const std::string& part : statvt::split(csv, ',')) {
    if (statvt::trim(part).empty()) continue;
    std::int64_t v = 0;
    if (!statvt::parse_int64(statvt::trim(part), &v))
      statvt::fail("bad id list entry: " + part);
    out.push_back(v);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  for (std::int64_t v : parse_id_list(csv)) out.push_back(static_cast<int>(v));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  for (std::int64_t v : parse_id_list(csv)) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"statvt: road-network trajectory prediction pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string workdir_flag;
  app.add_option("--config", config_path, "experiment config file (key=value or JSON)");
  app.add_option("--workdir", workdir_flag, "working directory (overrides config/env)");

  // shared overridable knobs; only applied when the user passes them
  double delta = 0;
  double radius = 0, sigma = 0;
  int k = 0, stride = 0, l_in = 0, l_out = 0, d_model = 0, epochs = 0, batch = 0;
  std::uint64_t seed = 0, split_seed = 0;
  int grid_n = 0, n_traj = 0;
  double noise = -1;
  bool no_gat = false, no_filter = false, literal_lr = false, by_vehicle = false;
  bool use_truth = false;
  std::string fusion;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--delta", delta, "UBODT distance bound in meters");
    cmd->add_option("--radius", radius, "candidate search radius in meters");
    cmd->add_option("--sigma", sigma, "GPS noise sigma for emissions in meters");
    cmd->add_option("--k", k, "candidates per GPS point");
    cmd->add_option("--stride", stride, "window stride");
    cmd->add_option("--l-in", l_in, "input sequence length");
    cmd->add_option("--l-out", l_out, "output sequence length");
    cmd->add_option("--d-model", d_model, "model feature width");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--seed", seed, "training/model seed");
    cmd->add_option("--split-seed", split_seed, "dataset split seed");
    cmd->add_option("--grid-n", grid_n, "synthetic grid side");
    cmd->add_option("--n-traj", n_traj, "synthetic trajectory count");
    cmd->add_option("--noise", noise, "synthetic GPS noise sigma in meters");
    cmd->add_flag("--no-gat", no_gat, "disable the spatial attention path");
    cmd->add_flag("--no-filter", no_filter, "disable connectivity filtering");
    cmd->add_flag("--literal-lr", literal_lr, "use the learning-rate factor verbatim");
    cmd->add_flag("--split-by-vehicle", by_vehicle, "split folds at trajectory level");
    cmd->add_flag("--from-truth", use_truth,
                  "prepare from ground-truth sequences instead of matched ones");
    cmd->add_option("--fusion", fusion, "spatial/temporal fusion: sum or concat");
  };

  CLI::App* c_synth = app.add_subcommand("synth", "generate a grid town with GPS traces");
  CLI::App* c_graph = app.add_subcommand("build-graph", "validate and summarize the network");
  CLI::App* c_ubodt = app.add_subcommand("build-ubodt", "precompute the bounded OD table");
  CLI::App* c_match = app.add_subcommand("match", "map-match GPS traces to segments");
  CLI::App* c_prepare = app.add_subcommand("prepare", "window, tokenize, and split");
  CLI::App* c_train = app.add_subcommand("train", "train the predictor");
  CLI::App* c_eval = app.add_subcommand("eval", "score a checkpoint on a split");
  CLI::App* c_predict = app.add_subcommand("predict", "dump stepwise predictions");
  CLI::App* c_sweep = app.add_subcommand("sweep", "input/output length grid");
  CLI::App* c_ablate = app.add_subcommand("ablate", "variant comparison table");
  CLI::App* c_geojson = app.add_subcommand("export-geojson", "render three traversals");
  for (CLI::App* cmd : {c_synth, c_graph, c_ubodt, c_match, c_prepare, c_train, c_eval,
                        c_predict, c_sweep, c_ablate, c_geojson})
    add_common(cmd);

  std::string samples_name = "samples_test.csv";
  c_eval->add_option("--samples", samples_name, "samples file to score");
  std::string predict_out = "predictions.csv";
  c_predict->add_option("--samples", samples_name, "samples file to decode");
  c_predict->add_option("--out", predict_out, "prediction dump file");

  std::string sweep_inputs = "2,4,6,8", sweep_outputs = "1,2,3,4", sweep_seeds;
  c_sweep->add_option("--inputs", sweep_inputs, "input lengths, comma separated");
  c_sweep->add_option("--outputs", sweep_outputs, "output lengths, comma separated");
  c_sweep->add_option("--seeds", sweep_seeds, "seeds, comma separated");
  std::string ablate_seeds;
  c_ablate->add_option("--seeds", ablate_seeds, "seeds, comma separated");

  std::string geo_history, geo_target, geo_predicted, geo_out = "trajectory.geojson";
  c_geojson->add_option("--history", geo_history, "segment ids, comma separated")
      ->required();
  c_geojson->add_option("--target", geo_target, "segment ids, comma separated")
      ->required();
  c_geojson->add_option("--predicted", geo_predicted, "segment ids, comma separated")
      ->required();
  c_geojson->add_option("--out", geo_out, "output file name");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = statvt::load_config_file(config_path);
    if (const char* env = std::getenv("STATVT_WORKDIR"))
      if (env[0] != '\0') cfg.workdir = env;
    if (!workdir_flag.empty()) cfg.workdir = workdir_flag;

    // flags override the config file
    if (delta > 0) cfg.ubodt_delta_m = delta;
    if (radius > 0) cfg.matcher.radius_m = radius;
    if (sigma > 0) cfg.matcher.sigma_m = sigma;
    if (k > 0) cfg.matcher.k = k;
    if (stride > 0) cfg.stride = stride;
    if (l_in > 0) cfg.model.l_in = l_in;
    if (l_out > 0) cfg.model.l_out = l_out;
    if (d_model > 0) cfg.model.d_model = d_model;
    if (epochs > 0) cfg.trainer.epochs = epochs;
    if (batch > 0) cfg.trainer.batch_size = batch;
    if (seed > 0) cfg.trainer.seed = seed;
    if (split_seed > 0) cfg.split_seed = split_seed;
    if (grid_n > 0) cfg.synth.grid_n = grid_n;
    if (n_traj > 0) cfg.synth.n_traj = n_traj;
    if (noise >= 0) cfg.synth.gps_noise_sigma_m = noise;
    if (no_gat) cfg.model.use_gat = false;
    if (no_filter) cfg.model.use_filter = false;
    if (literal_lr) cfg.trainer.literal_lr = true;
    if (by_vehicle) cfg.split_by_vehicle = true;
    if (use_truth) cfg.prepare_source = "truth";
    if (!fusion.empty()) cfg.model.fusion_mode = fusion;

    nlohmann::json results;
    if (*c_synth) results = statvt::harness::run_synth(cfg);
    if (*c_graph) results = statvt::harness::run_build_graph(cfg);
    if (*c_ubodt) results = statvt::harness::run_build_ubodt(cfg);
    if (*c_match) results = statvt::harness::run_match(cfg);
    if (*c_prepare) results = statvt::harness::run_prepare(cfg);
    if (*c_train) results = statvt::harness::run_train(cfg);
    if (*c_eval) results = statvt::harness::run_eval(cfg, samples_name);
    if (*c_predict) results = statvt::harness::run_predict(cfg, samples_name, predict_out);
    if (*c_sweep) {
      const auto seeds = sweep_seeds.empty()
                             ? std::vector<std::uint64_t>{cfg.trainer.seed}
                             : parse_seed_list(sweep_seeds);
      results = statvt::harness::run_sweep(cfg, parse_int_list(sweep_inputs),
                                           parse_int_list(sweep_outputs), seeds);
    }
    if (*c_ablate) {
      const auto seeds = ablate_seeds.empty()
                             ? std::vector<std::uint64_t>{cfg.trainer.seed}
                             : parse_seed_list(ablate_seeds);
      results = statvt::harness::run_ablate(cfg, seeds);
    }
    if (*c_geojson)
      results = statvt::harness::run_export_geojson(
          cfg, parse_id_list(geo_history), parse_id_list(geo_target),
          parse_id_list(geo_predicted), geo_out);

    std::cout << results.dump(2) << std::endl;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << std::endl;
    return 1;
  }
}
