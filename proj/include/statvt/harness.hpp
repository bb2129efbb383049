#pragma once

// Command implementations behind the CLI. Each command reads/writes only
// declared artifacts inside the workdir and leaves a deterministic manifest
// (config snapshot, seed, git description, results) next to them.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "statvt/config.hpp"
#include "statvt/dataset.hpp"
#include "statvt/geojson.hpp"
#include "statvt/mapmatch.hpp"
#include "statvt/metrics.hpp"
#include "statvt/model.hpp"
#include "statvt/roadnet.hpp"
#include "statvt/synth.hpp"
#include "statvt/ubodt.hpp"

#include "json.hpp"

namespace statvt::harness {

inline std::string git_describe() {
  FILE* pipe = ::popen("git describe --always --dirty 2>/dev/null", "r");
  if (pipe == nullptr) return "unknown";
  char buf[256];
  std::string out;
  while (std::fgets(buf, sizeof(buf), pipe) != nullptr) out += buf;
  ::pclose(pipe);
  const std::string t = trim(out);
  return t.empty() ? "unknown" : t;
}

inline void ensure_artifact(const std::string& path, const std::string& producer) {
  if (!std::filesystem::exists(path))
    fail("missing artifact '" + path + "'; produce it with `statvt " + producer +
         "` first");
}

inline void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                           const nlohmann::json& results) {
  nlohmann::json manifest{{"command", command},
                          {"git_describe", git_describe()},
                          {"config", cfg.to_json()},
                          {"results", results}};
  write_file(cfg.path(command + ".manifest.json"), manifest.dump(2) + "\n");
}

inline RoadNetwork load_network(const ExperimentConfig& cfg,
                                const std::string& producer = "synth") {
  const std::string path = cfg.path(cfg.network_file);
  ensure_artifact(path, producer);
  std::ifstream is(path);
  return RoadNetwork::build(read_edge_csv(is));
}

// ---- synth ----

inline nlohmann::json run_synth(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.workdir);
  const auto segments = synth_network(cfg.synth);
  {
    std::ofstream os(cfg.path(cfg.network_file));
    write_edge_csv(os, segments);
  }
  const RoadNetwork net = RoadNetwork::build(segments);
  const auto trajs = synth_trajectories(cfg.synth, net);
  std::size_t n_points = 0;
  for (const auto& t : trajs) n_points += t.gps.size();
  {
    std::ofstream os(cfg.path(cfg.gps_file));
    write_gps_csv(os, trajs);
  }
  {
    std::ofstream os(cfg.path(cfg.truth_file));
    write_truth_csv(os, trajs);
  }
  nlohmann::json results{{"n_segments", segments.size()},
                         {"n_trajectories", trajs.size()},
                         {"n_gps_points", n_points},
                         {"seed", cfg.synth.seed}};
  write_manifest(cfg, "synth", results);
  return results;
}

// ---- build-graph ----

inline nlohmann::json run_build_graph(const ExperimentConfig& cfg) {
  const RoadNetwork net = load_network(cfg);
  std::size_t n_edges = 0;
  for (const RoadSegment& s : net.segments()) n_edges += net.successors(s.id).size();
  nlohmann::json results{{"n_segments", net.segments().size()},
                         {"n_nodes", net.node_ids().size()},
                         {"n_edges", n_edges}};
  write_file(cfg.path("graph_summary.json"), results.dump(2) + "\n");
  write_manifest(cfg, "build-graph", results);
  return results;
}

// ---- build-ubodt ----

inline nlohmann::json run_build_ubodt(const ExperimentConfig& cfg) {
  const RoadNetwork net = load_network(cfg);
  const Ubodt table = Ubodt::build(net, cfg.ubodt_delta_m);
  {
    std::ofstream os(cfg.path(cfg.ubodt_file));
    table.save_csv(os);
  }
  nlohmann::json results{{"rows", table.size()}, {"delta_m", cfg.ubodt_delta_m}};
  write_manifest(cfg, "build-ubodt", results);
  return results;
}

// ---- match ----

inline nlohmann::json run_match(const ExperimentConfig& cfg) {
  const RoadNetwork net = load_network(cfg);
  const std::string ubodt_path = cfg.path(cfg.ubodt_file);
  ensure_artifact(ubodt_path, "build-ubodt");
  std::ifstream ubodt_is(ubodt_path);
  const Ubodt table = Ubodt::load_csv(ubodt_is);
  const std::string gps_path = cfg.path(cfg.gps_file);
  ensure_artifact(gps_path, "synth");
  std::ifstream gps_is(gps_path);
  GpsParseStats parse_stats;
  auto trajs = parse_gps_csv(gps_is, &parse_stats);

  MatchStats stats;
  std::vector<MatchResult> all;
  for (GpsTrajectory& traj : trajs) {
    stats.n_speed_outliers_dropped +=
        drop_speed_outliers(traj, cfg.matcher.max_speed_mps);
    if (traj.points.size() < 2) continue;
    auto parts = viterbi_match(traj, net, table, cfg.matcher, &stats);
    for (auto& p : parts) all.push_back(std::move(p));
  }
  {
    std::ofstream os(cfg.path(cfg.matched_file));
    write_match_csv(os, all);
  }
  const double mean_ll =
      stats.n_points_matched > 0
          ? stats.total_log_likelihood / static_cast<double>(stats.n_points_matched)
          : 0.0;
  nlohmann::json results{
      {"rows_ok", parse_stats.rows_ok},
      {"rows_malformed", parse_stats.rows_malformed},
      {"rows_out_of_range", parse_stats.rows_out_of_range},
      {"rows_duplicate", parse_stats.rows_duplicate},
      {"n_trajectories", stats.n_trajectories},
      {"n_points", stats.n_points},
      {"n_points_without_candidates", stats.n_points_without_candidates},
      {"n_candidate_gap_splits", stats.n_candidate_gap_splits},
      {"n_unreachable_splits", stats.n_unreachable_splits},
      {"n_singleton_parts_dropped", stats.n_singleton_parts_dropped},
      {"n_speed_outliers_dropped", stats.n_speed_outliers_dropped},
      {"n_parts", stats.n_parts},
      {"n_points_matched", stats.n_points_matched},
      {"mean_log_likelihood_per_point", mean_ll}};
  write_manifest(cfg, "match", results);
  return results;
}

// ---- prepare ----

struct PreparedData {
  Vocabulary vocab;
  NeighborMask mask;
  std::vector<Sample> train, val, test;
  std::size_t n_sequences = 0;
  std::size_t n_after_clean = 0;
  std::size_t n_windows = 0;
  std::size_t n_disconnected_dropped = 0;
};

/// Windows, vocabulary, mask, and split over raw segment sequences.
inline PreparedData prepare_data(const std::vector<std::vector<std::int64_t>>& seqs,
                                 const RoadNetwork& net, int l_in, int l_out, int stride,
                                 int min_len, double r_train, double r_val,
                                 double r_test, std::uint64_t seed, bool by_vehicle) {
  PreparedData out;
  out.n_sequences = seqs.size();
  const auto kept = clean(seqs, static_cast<std::size_t>(min_len));
  out.n_after_clean = kept.size();
  std::vector<SegmentWindow> all_windows;
  std::vector<std::vector<SegmentWindow>> per_seq;
  for (const auto& seq : kept) {
    auto ws = windows(seq, l_in, l_out, stride);
    if (ws.empty()) continue;
    all_windows.insert(all_windows.end(), ws.begin(), ws.end());
    per_seq.push_back(std::move(ws));
  }
  if (all_windows.empty()) fail("prepare: no windows survive cleaning");
  out.n_windows = all_windows.size();
  out.vocab = build_vocab(all_windows);
  out.mask = neighbor_mask(net, out.vocab);

  auto keep_connected = [&](std::vector<Sample> in) {
    std::vector<Sample> kept_samples;
    for (Sample& s : in) {
      if (sample_is_connected(s, out.mask))
        kept_samples.push_back(std::move(s));
      else
        ++out.n_disconnected_dropped;
    }
    return kept_samples;
  };

  if (by_vehicle) {
    std::vector<std::vector<Sample>> groups;
    for (const auto& ws : per_seq)
      groups.push_back(keep_connected(tokenize_windows(ws, out.vocab)));
    SplitResult split_result =
        split_by_trajectory(groups, r_train, r_val, r_test, seed);
    out.train = std::move(split_result.train);
    out.val = std::move(split_result.val);
    out.test = std::move(split_result.test);
  } else {
    const auto samples = keep_connected(tokenize_windows(all_windows, out.vocab));
    SplitResult split_result = split(samples, r_train, r_val, r_test, seed);
    out.train = std::move(split_result.train);
    out.val = std::move(split_result.val);
    out.test = std::move(split_result.test);
  }
  return out;
}

inline std::vector<std::vector<std::int64_t>> load_sequences(
    const ExperimentConfig& cfg) {
  const bool use_truth = cfg.prepare_source == "truth";
  const std::string path = cfg.path(use_truth ? cfg.truth_file : cfg.matched_file);
  ensure_artifact(path, use_truth ? "synth" : "match");
  std::ifstream is(path);
  std::vector<std::vector<std::int64_t>> seqs;
  for (auto& [key, seq] : read_match_csv(is)) seqs.push_back(std::move(seq));
  return seqs;
}

inline nlohmann::json run_prepare(const ExperimentConfig& cfg) {
  const RoadNetwork net = load_network(cfg);
  const auto seqs = load_sequences(cfg);
  PreparedData data = prepare_data(
      seqs, net, cfg.model.l_in, cfg.model.l_out, cfg.stride, cfg.effective_min_len(),
      cfg.split_train, cfg.split_val, cfg.split_test, cfg.split_seed,
      cfg.split_by_vehicle);
  {
    std::ofstream os(cfg.path(cfg.vocab_file));
    data.vocab.save_csv(os);
  }
  for (const auto& [name, samples] :
       {std::pair<std::string, const std::vector<Sample>*>{"samples_train.csv",
                                                           &data.train},
        {"samples_val.csv", &data.val},
        {"samples_test.csv", &data.test}}) {
    std::ofstream os(cfg.path(name));
    write_samples(os, *samples);
  }
  nlohmann::json results{{"n_sequences", data.n_sequences},
                         {"n_after_clean", data.n_after_clean},
                         {"n_windows", data.n_windows},
                         {"n_disconnected_dropped", data.n_disconnected_dropped},
                         {"n_tokens", data.vocab.n_tokens()},
                         {"n_train", data.train.size()},
                         {"n_val", data.val.size()},
                         {"n_test", data.test.size()}};
  write_manifest(cfg, "prepare", results);
  return results;
}

// ---- train ----

inline std::vector<Sample> load_samples(const ExperimentConfig& cfg,
                                        const std::string& name) {
  const std::string path = cfg.path(name);
  ensure_artifact(path, "prepare");
  std::ifstream is(path);
  return read_samples(is);
}

inline Vocabulary load_vocab(const ExperimentConfig& cfg) {
  const std::string path = cfg.path(cfg.vocab_file);
  ensure_artifact(path, "prepare");
  std::ifstream is(path);
  return Vocabulary::load_csv(is);
}

inline nlohmann::json run_train(const ExperimentConfig& cfg) {
  const RoadNetwork net = load_network(cfg);
  const Vocabulary vocab = load_vocab(cfg);
  const auto train_set = load_samples(cfg, "samples_train.csv");
  const auto val_set = load_samples(cfg, "samples_val.csv");
  NeighborMask mask = neighbor_mask(net, vocab);
  nn::StatvtpredModel model(cfg.model, vocab.n_tokens(), std::move(mask),
                            cfg.trainer.seed);
  const nn::TrainHistory history =
      nn::train(model, train_set, val_set, cfg.trainer, &net, &vocab);
  nn::save_checkpoint(model, cfg.path(cfg.checkpoint_stem), cfg.vocab_file);
  write_file(cfg.path("history.json"), history.to_json().dump(2) + "\n");
  nlohmann::json results{{"n_params", model.params.numel()},
                         {"epochs_run", history.epochs.size()},
                         {"best_epoch", history.best_epoch},
                         {"best_val_amr", history.best_val_amr},
                         {"diverged", history.diverged},
                         {"seed", cfg.trainer.seed}};
  write_manifest(cfg, "train", results);
  return results;
}

// ---- eval ----

inline nlohmann::json run_eval(const ExperimentConfig& cfg,
                               const std::string& samples_name = "samples_test.csv") {
  const RoadNetwork net = load_network(cfg);
  const Vocabulary vocab = load_vocab(cfg);
  ensure_artifact(cfg.path(cfg.checkpoint_stem) + ".json", "train");
  nn::StatvtpredModel model =
      nn::load_checkpoint(cfg.path(cfg.checkpoint_stem), net, vocab);
  const auto samples = load_samples(cfg, samples_name);
  const EvalReport report = nn::evaluate(model, samples, &net, &vocab);
  write_file(cfg.path("eval_report.json"), report.to_json().dump(2) + "\n");
  nlohmann::json results = report.to_json();
  results["samples_file"] = samples_name;
  write_manifest(cfg, "eval", results);
  return results;
}

// ---- predict ----

inline nlohmann::json run_predict(const ExperimentConfig& cfg,
                                  const std::string& samples_name = "samples_test.csv",
                                  const std::string& out_name = "predictions.csv") {
  const RoadNetwork net = load_network(cfg);
  const Vocabulary vocab = load_vocab(cfg);
  ensure_artifact(cfg.path(cfg.checkpoint_stem) + ".json", "train");
  nn::StatvtpredModel model =
      nn::load_checkpoint(cfg.path(cfg.checkpoint_stem), net, vocab);
  const auto samples = load_samples(cfg, samples_name);
  std::ofstream os(cfg.path(out_name));
  os << "sample_id,step,predicted_token,target_token,fallback_fired\n";
  std::int64_t fallbacks = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    nn::DecodeStats ds;
    const auto pred = model.greedy_decode(samples[i].input_tokens, &net, &vocab, &ds);
    fallbacks += ds.fallback_count;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const int target = k < samples[i].target_tokens.size()
                             ? samples[i].target_tokens[k]
                             : -1;
      os << i << "," << k + 1 << "," << pred[k] << "," << target << ","
         << static_cast<int>(ds.step_fired[k]) << "\n";
    }
  }
  nlohmann::json results{{"n_samples", samples.size()},
                         {"fallback_count", fallbacks},
                         {"output", out_name}};
  write_manifest(cfg, "predict", results);
  return results;
}

// ---- sweep ----

/// Trains and scores one configuration fully in memory.
inline EvalReport train_eval_once(const ExperimentConfig& cfg, const RoadNetwork& net,
                                  const std::vector<std::vector<std::int64_t>>& seqs,
                                  int l_in, int l_out, std::uint64_t seed,
                                  bool use_gat, bool use_filter,
                                  EvalReport* minus_filter = nullptr) {
  ExperimentConfig local = cfg;
  local.model.l_in = l_in;
  local.model.l_out = l_out;
  local.model.use_gat = use_gat;
  local.model.use_filter = use_filter;
  local.trainer.seed = seed;
  PreparedData data = prepare_data(seqs, net, l_in, l_out, local.stride,
                                   std::max(local.effective_min_len(), l_in + l_out),
                                   local.split_train, local.split_val, local.split_test,
                                   local.split_seed, local.split_by_vehicle);
  nn::StatvtpredModel model(local.model, data.vocab.n_tokens(), data.mask, seed);
  nn::train(model, data.train, data.val, local.trainer, &net, &data.vocab);
  const EvalReport report = nn::evaluate(model, data.test, &net, &data.vocab);
  if (minus_filter != nullptr) {
    model.config.use_filter = false;
    *minus_filter = nn::evaluate(model, data.test, &net, &data.vocab);
    model.config.use_filter = use_filter;
  }
  return report;
}

inline nlohmann::json run_sweep(const ExperimentConfig& cfg,
                                const std::vector<int>& input_lengths,
                                const std::vector<int>& output_lengths,
                                const std::vector<std::uint64_t>& seeds) {
  const RoadNetwork net = load_network(cfg);
  const auto seqs = load_sequences(cfg);
  nlohmann::json per_seed = nlohmann::json::array();
  std::vector<std::vector<double>> mean_amr(
      input_lengths.size(), std::vector<double>(output_lengths.size(), 0.0));
  std::vector<std::vector<EvalReport>> last_cells;
  for (const std::uint64_t seed : seeds) {
    nlohmann::json cells = nlohmann::json::array();
    std::vector<std::vector<EvalReport>> cell_reports;
    for (std::size_t i = 0; i < input_lengths.size(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      std::vector<EvalReport> row_reports;
      for (std::size_t j = 0; j < output_lengths.size(); ++j) {
        const EvalReport r =
            train_eval_once(cfg, net, seqs, input_lengths[i], output_lengths[j], seed,
                            cfg.model.use_gat, cfg.model.use_filter);
        row.push_back(r.to_json());
        row_reports.push_back(r);
        mean_amr[i][j] += r.amr / static_cast<double>(seeds.size());
      }
      cells.push_back(row);
      cell_reports.push_back(row_reports);
    }
    per_seed.push_back({{"seed", seed}, {"cells", cells}});
    last_cells = cell_reports;
  }
  nlohmann::json results{{"input_lengths", input_lengths},
                         {"output_lengths", output_lengths},
                         {"per_seed", per_seed},
                         {"mean_amr", mean_amr}};
  write_file(cfg.path("sweep.json"), results.dump(2) + "\n");
  write_file(cfg.path("sweep.txt"),
             format_sweep_table(input_lengths, output_lengths, last_cells));
  write_manifest(cfg, "sweep", results);
  return results;
}

// ---- ablate ----

inline nlohmann::json run_ablate(const ExperimentConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds) {
  const RoadNetwork net = load_network(cfg);
  const auto seqs = load_sequences(cfg);
  nlohmann::json per_seed = nlohmann::json::array();
  for (const std::uint64_t seed : seeds) {
    // the filter is decode-only, so the full model and its -Filter ablation
    // share one training run; the plain transformer trains separately
    EvalReport minus_filter;
    const EvalReport full = train_eval_once(cfg, net, seqs, cfg.model.l_in,
                                            cfg.model.l_out, seed, /*use_gat=*/true,
                                            /*use_filter=*/true, &minus_filter);
    const EvalReport baseline =
        train_eval_once(cfg, net, seqs, cfg.model.l_in, cfg.model.l_out, seed,
                        /*use_gat=*/false, /*use_filter=*/false);
    per_seed.push_back({{"seed", seed},
                        {"rows",
                         {{{"method", "Transformer"}, {"report", baseline.to_json()}},
                          {{"method", "STATVTPred(-Filter)"},
                           {"report", minus_filter.to_json()}},
                          {{"method", "STATVTPred"}, {"report", full.to_json()}}}}});
  }
  nlohmann::json results{{"per_seed", per_seed}};
  // text table of the last seed, one row per variant
  std::string table = "method\tDE%\tAMR%\n";
  for (const auto& row : per_seed.back().at("rows")) {
    const EvalReport r = EvalReport::from_json(row.at("report"));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "\t%.2f\t%.2f\n", r.de * 100.0, r.amr * 100.0);
    table += row.at("method").get<std::string>() + buf;
  }
  write_file(cfg.path("ablate.json"), results.dump(2) + "\n");
  write_file(cfg.path("ablate.txt"), table);
  write_manifest(cfg, "ablate", results);
  return results;
}

// ---- export-geojson ----

inline nlohmann::json run_export_geojson(const ExperimentConfig& cfg,
                                         const std::vector<std::int64_t>& history,
                                         const std::vector<std::int64_t>& target,
                                         const std::vector<std::int64_t>& predicted,
                                         const std::string& out_name) {
  const RoadNetwork net = load_network(cfg);
  const nlohmann::json fc = export_geojson(net, history, target, predicted);
  write_file(cfg.path(out_name), fc.dump(2) + "\n");
  nlohmann::json results{{"output", out_name},
                         {"history_len", history.size()},
                         {"target_len", target.size()},
                         {"predicted_len", predicted.size()}};
  write_manifest(cfg, "export-geojson", results);
  return results;
}

}  // namespace statvt::harness
