#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "statvt/config.hpp"
#include "statvt/geojson.hpp"
#include "statvt/harness.hpp"
#include "statvt/synth.hpp"

using namespace statvt;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.grid_n = 4;
  s.n_traj = 30;
  s.traj_len = 16;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("synth_network produces the analytic grid") {
  SynthSpec s2;
  s2.grid_n = 2;
  CHECK(synth_network(s2).size() == 8);
  SynthSpec s3;
  s3.grid_n = 3;
  const auto segs = synth_network(s3);
  CHECK(segs.size() == 24);

  // connectivity equals the analytic adjacency: w follows u iff u ends where
  // w starts; on the grid that is exactly "w leaves u's head intersection"
  auto net = RoadNetwork::build(segs);
  std::map<std::int64_t, std::set<std::int64_t>> out_at;
  for (const auto& s : segs) out_at[s.from_node].insert(s.id);
  for (const auto& u : segs) {
    const auto& succ = net.successors(u.id);
    std::set<std::int64_t> got(succ.begin(), succ.end());
    CHECK(got == out_at[u.to_node]);
  }
  // ids are deterministic
  const auto again = synth_network(s3);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK(again[i].id == segs[i].id);
    CHECK(again[i].from_node == segs[i].from_node);
    CHECK(again[i].to_node == segs[i].to_node);
  }

  SynthSpec bad = s3;
  bad.p_left = 0.5;
  CHECK_THROWS_AS(synth_network(bad), Error);
}

TEST_CASE("synthetic walks respect connectivity and avoid U-turns") {
  SynthSpec spec = small_spec();
  auto net = RoadNetwork::build(synth_network(spec));
  const auto trajs = synth_trajectories(spec, net);
  REQUIRE(trajs.size() == 30);
  for (const auto& t : trajs) {
    REQUIRE(t.segments.size() == 16);
    for (std::size_t i = 0; i + 1 < t.segments.size(); ++i) {
      CHECK(net.connected(t.segments[i], t.segments[i + 1]));
      const RoadSegment& a = net.segment(t.segments[i]);
      const RoadSegment& b = net.segment(t.segments[i + 1]);
      const bool uturn = a.from_node == b.to_node && a.to_node == b.from_node;
      CHECK_FALSE(uturn);  // interior grid nodes always offer an alternative
    }
    CHECK(t.gps.size() == t.gps_truth.size());
    for (std::size_t i = 1; i < t.gps.size(); ++i)
      CHECK(t.gps[i].t > t.gps[i - 1].t);
  }
}

TEST_CASE("turn frequencies track the policy on interior steps") {
  SynthSpec spec;
  spec.grid_n = 12;
  spec.n_traj = 700;
  spec.traj_len = 30;
  spec.p_straight = 0.6;
  spec.p_left = 0.25;
  spec.p_right = 0.15;
  spec.turn_inertia = 0.5;  // side-neutral so marginals match the triple
  spec.seed = 11;
  auto net = RoadNetwork::build(synth_network(spec));
  const auto trajs = synth_trajectories(spec, net);
  std::size_t n_straight = 0, n_left = 0, n_right = 0, n = 0;
  for (const auto& t : trajs) {
    for (std::size_t i = 0; i + 1 < t.segments.size(); ++i) {
      // count only steps where all three moves were available
      std::set<TurnClass> avail;
      for (std::int64_t nxt : net.successors(t.segments[i]))
        avail.insert(classify_turn(net, t.segments[i], nxt));
      if (avail.count(TurnClass::kStraight) == 0 ||
          avail.count(TurnClass::kLeft) == 0 || avail.count(TurnClass::kRight) == 0)
        continue;
      ++n;
      switch (classify_turn(net, t.segments[i], t.segments[i + 1])) {
        case TurnClass::kStraight: ++n_straight; break;
        case TurnClass::kLeft: ++n_left; break;
        case TurnClass::kRight: ++n_right; break;
        default: break;
      }
    }
  }
  REQUIRE(n > 10000);
  CHECK(std::abs(static_cast<double>(n_straight) / n - 0.6) < 0.02);
  CHECK(std::abs(static_cast<double>(n_left) / n - 0.25) < 0.02);
  CHECK(std::abs(static_cast<double>(n_right) / n - 0.15) < 0.02);
}

TEST_CASE("gps csv written by synth parses back") {
  SynthSpec spec = small_spec();
  auto net = RoadNetwork::build(synth_network(spec));
  const auto trajs = synth_trajectories(spec, net);
  std::ostringstream os;
  write_gps_csv(os, trajs);
  std::istringstream is(os.str());
  GpsParseStats st;
  const auto parsed = parse_gps_csv(is, &st);
  CHECK(st.rows_malformed == 0);
  std::size_t expect_points = 0;
  for (const auto& t : trajs) expect_points += t.gps.size();
  CHECK(st.rows_ok == expect_points);
  REQUIRE(parsed.size() == trajs.size());
  // timestamps survive the epoch -> text -> epoch round trip
  std::map<std::string, const SynthTrajectory*> by_id;
  for (const auto& t : trajs) by_id[t.vehicle_id] = &t;
  for (const auto& p : parsed) {
    const SynthTrajectory* t = by_id.at(p.vehicle_id);
    REQUIRE(p.points.size() == t->gps.size());
    for (std::size_t i = 0; i < p.points.size(); ++i)
      CHECK(p.points[i].t == t->gps[i].t);
  }
}

TEST_CASE("config parses TOML-style text with sections and dotted keys") {
  const std::string text = R"(
# experiment file
workdir = "exp1"
ubodt_delta_m = 1500.5
split_by_vehicle = true
synth.grid_n = 5

[matcher]
radius_m = 80
k = 4

[model]
d_model = 32
use_gat = false
fusion_mode = "concat"

[trainer]
epochs = 7
seed = 99
)";
  const ExperimentConfig cfg = parse_config_text(text);
  CHECK(cfg.workdir == "exp1");
  CHECK(cfg.ubodt_delta_m == 1500.5);
  CHECK(cfg.split_by_vehicle);
  CHECK(cfg.matcher.radius_m == 80.0);
  CHECK(cfg.matcher.k == 4);
  CHECK(cfg.model.d_model == 32);
  CHECK_FALSE(cfg.model.use_gat);
  CHECK(cfg.model.fusion_mode == "concat");
  CHECK(cfg.trainer.epochs == 7);
  CHECK(cfg.trainer.seed == 99);
  CHECK(cfg.synth.grid_n == 5);
  // untouched fields keep their defaults
  CHECK(cfg.model.l_in == 8);
  CHECK(cfg.trainer.batch_size == 100);

  CHECK_THROWS_AS(parse_config_text("key value\n"), Error);
  CHECK_THROWS_AS(parse_config_text("[unterminated\n"), Error);
}

TEST_CASE("config JSON round trip is lossless") {
  ExperimentConfig cfg;
  cfg.workdir = "w";
  cfg.model.d_model = 48;
  cfg.model.use_filter = false;
  cfg.trainer.epochs = 3;
  cfg.synth.turn_inertia = 0.9;
  cfg.matcher.sigma_m = 12.5;
  const auto j = cfg.to_json();
  const ExperimentConfig back = ExperimentConfig::from_json(j);
  CHECK(back.to_json().dump() == j.dump());
  // JSON text is also accepted by the config loader
  const ExperimentConfig again = parse_config_text(j.dump(2));
  CHECK(again.to_json().dump() == j.dump());
}

TEST_CASE("geojson export carries roles, colors, and exact geometry") {
  SynthSpec spec = small_spec();
  auto net = RoadNetwork::build(synth_network(spec));
  const auto fc = export_geojson(net, {1}, {3, 5}, {3, 7});
  CHECK(fc.at("type") == "FeatureCollection");
  REQUIRE(fc.at("features").size() == 3);
  const auto& hist = fc.at("features")[0];
  CHECK(hist.at("properties").at("role") == "history");
  CHECK(hist.at("properties").at("stroke") == "#800080");
  CHECK(hist.at("geometry").at("type") == "LineString");
  const auto& coords = hist.at("geometry").at("coordinates");
  const auto& geom = net.segment(1).geometry;
  REQUIRE(coords.size() == geom.size());
  for (std::size_t i = 0; i < geom.size(); ++i) {
    CHECK(coords[i][0].get<double>() == geom[i].lon);
    CHECK(coords[i][1].get<double>() == geom[i].lat);
  }
  const auto& target = fc.at("features")[1];
  CHECK(target.at("properties").at("role") == "target");
  CHECK(target.at("properties").at("stroke") == "#008000");
  CHECK(target.at("geometry").at("type") == "MultiLineString");
  CHECK(fc.at("features")[2].at("properties").at("stroke") == "#FF0000");

  CHECK_THROWS_AS(export_geojson(net, {999}, {1}, {1}), Error);
}

TEST_CASE("pipeline commands produce consumable artifacts and manifests") {
  const fs::path dir = fs::temp_directory_path() / "statvt_harness_pipeline";
  fs::remove_all(dir);
  ExperimentConfig cfg;
  cfg.workdir = (dir / "work").string();
  cfg.synth = small_spec();
  cfg.prepare_source = "truth";
  cfg.model.d_model = 8;
  cfg.model.heads = 2;
  cfg.model.gat_heads = 2;
  cfg.model.enc_layers = 1;
  cfg.model.dec_layers = 1;
  cfg.model.l_in = 6;
  cfg.model.l_out = 3;
  cfg.model.d_ff = 16;
  cfg.trainer.epochs = 1;
  cfg.trainer.batch_size = 32;

  // missing-artifact errors name the producing command
  try {
    harness::run_match(cfg);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("synth") != std::string::npos);
  }

  harness::run_synth(cfg);
  const auto graph = harness::run_build_graph(cfg);
  CHECK(graph.at("n_segments").get<int>() == 48);
  CHECK(graph.at("n_nodes").get<int>() == 16);

  try {
    harness::run_match(cfg);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("build-ubodt") != std::string::npos);
  }
  harness::run_build_ubodt(cfg);
  const auto match = harness::run_match(cfg);
  CHECK(match.at("n_parts").get<int>() > 0);

  const auto prep = harness::run_prepare(cfg);
  CHECK(prep.at("n_train").get<int>() > 0);
  CHECK(prep.at("n_disconnected_dropped").get<int>() == 0);

  const auto train_res = harness::run_train(cfg);
  CHECK(train_res.at("epochs_run").get<int>() == 1);
  CHECK(fs::exists(cfg.path("model.params")));
  CHECK(fs::exists(cfg.path("model.json")));

  const auto eval_res = harness::run_eval(cfg);
  CHECK(eval_res.at("n_samples").get<int>() > 0);
  const double de = eval_res.at("de").get<double>();
  const double amr = eval_res.at("amr").get<double>();
  CHECK(de <= 1.0 - amr + 1e-15);

  const auto pred_res = harness::run_predict(cfg);
  CHECK(fs::exists(cfg.path("predictions.csv")));
  CHECK(pred_res.at("n_samples").get<int>() == eval_res.at("n_samples").get<int>());
  // dump format: sample_id,step,predicted_token,target_token,fallback_fired
  std::ifstream pred_file(cfg.path("predictions.csv"));
  std::string header;
  std::getline(pred_file, header);
  CHECK(header == "sample_id,step,predicted_token,target_token,fallback_fired");
  std::string first_row;
  REQUIRE(std::getline(pred_file, first_row).good());
  CHECK(split(first_row, ',').size() == 5);

  const auto geo = harness::run_export_geojson(cfg, {1, 3}, {5}, {7}, "demo.geojson");
  CHECK(fs::exists(cfg.path("demo.geojson")));
  CHECK(geo.at("history_len").get<int>() == 2);

  for (const char* name :
       {"synth", "build-graph", "build-ubodt", "match", "prepare", "train", "eval",
        "predict", "export-geojson"})
    CHECK(fs::exists(cfg.path(std::string(name) + ".manifest.json")));
  fs::remove_all(dir);
}

TEST_CASE("rerunning the pipeline yields byte-identical manifests and checkpoints") {
  const fs::path dir = fs::temp_directory_path() / "statvt_harness_repro";
  fs::remove_all(dir);
  ExperimentConfig cfg;
  cfg.workdir = (dir / "work").string();
  cfg.synth = small_spec();
  cfg.prepare_source = "truth";
  cfg.model.d_model = 8;
  cfg.model.heads = 2;
  cfg.model.gat_heads = 2;
  cfg.model.enc_layers = 1;
  cfg.model.dec_layers = 1;
  cfg.model.l_in = 6;
  cfg.model.l_out = 3;
  cfg.model.d_ff = 16;
  cfg.trainer.epochs = 2;
  cfg.trainer.batch_size = 32;

  auto run_all = [&] {
    harness::run_synth(cfg);
    harness::run_build_ubodt(cfg);
    harness::run_match(cfg);
    harness::run_prepare(cfg);
    harness::run_train(cfg);
    harness::run_eval(cfg);
    std::map<std::string, std::string> bytes;
    for (const char* f : {"synth.manifest.json", "match.manifest.json",
                          "prepare.manifest.json", "train.manifest.json",
                          "eval.manifest.json", "model.params", "history.json",
                          "eval_report.json"})
      bytes[f] = read_file(cfg.path(f));
    return bytes;
  };
  const auto first = run_all();
  const auto second = run_all();
  for (const auto& [name, content] : first) {
    INFO(name);
    CHECK(second.at(name) == content);
  }
  fs::remove_all(dir);
}
