#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/mapmatch.hpp"
#include "statvt/model.hpp"
#include "statvt/synth.hpp"

#include "json.hpp"

namespace statvt {

/** Everything one experiment needs, with documented defaults. */
struct ExperimentConfig {
  std::string workdir = "work";
  // artifact names, resolved inside workdir unless absolute
  std::string network_file = "network.csv";
  std::string gps_file = "gps.csv";
  std::string truth_file = "truth.csv";
  std::string ubodt_file = "ubodt.csv";
  std::string matched_file = "matched.csv";
  std::string vocab_file = "vocab.csv";
  std::string checkpoint_stem = "model";

  double ubodt_delta_m = 3000.0;
  MatchParams matcher;

  // windowing and splits
  int stride = 4;
  int min_len = 0;  // 0 -> model.l_in + model.l_out
  double split_train = 0.8;
  double split_val = 0.1;
  double split_test = 0.1;
  std::uint64_t split_seed = 1;
  bool split_by_vehicle = false;
  // which sequence file feeds prepare: "matched" or "truth"
  std::string prepare_source = "matched";

  nn::ModelConfig model;
  nn::TrainConfig trainer;
  SynthSpec synth;

  int effective_min_len() const {
    return min_len > 0 ? min_len : model.l_in + model.l_out;
  }

  std::string path(const std::string& name) const {
    if (!name.empty() && name.front() == '/') return name;
    return workdir + "/" + name;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"workdir", workdir},
        {"network_file", network_file},
        {"gps_file", gps_file},
        {"truth_file", truth_file},
        {"ubodt_file", ubodt_file},
        {"matched_file", matched_file},
        {"vocab_file", vocab_file},
        {"checkpoint_stem", checkpoint_stem},
        {"ubodt_delta_m", ubodt_delta_m},
        {"matcher",
         {{"radius_m", matcher.radius_m},
          {"k", matcher.k},
          {"sigma_m", matcher.sigma_m},
          {"max_speed_mps", matcher.max_speed_mps}}},
        {"stride", stride},
        {"min_len", min_len},
        {"split_train", split_train},
        {"split_val", split_val},
        {"split_test", split_test},
        {"split_seed", split_seed},
        {"split_by_vehicle", split_by_vehicle},
        {"prepare_source", prepare_source},
        {"model", model.to_json()},
        {"trainer", trainer.to_json()},
        {"synth", synth.to_json()}};
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.workdir = j.value("workdir", c.workdir);
    c.network_file = j.value("network_file", c.network_file);
    c.gps_file = j.value("gps_file", c.gps_file);
    c.truth_file = j.value("truth_file", c.truth_file);
    c.ubodt_file = j.value("ubodt_file", c.ubodt_file);
    c.matched_file = j.value("matched_file", c.matched_file);
    c.vocab_file = j.value("vocab_file", c.vocab_file);
    c.checkpoint_stem = j.value("checkpoint_stem", c.checkpoint_stem);
    c.ubodt_delta_m = j.value("ubodt_delta_m", c.ubodt_delta_m);
    if (j.contains("matcher")) {
      const auto& m = j.at("matcher");
      c.matcher.radius_m = m.value("radius_m", c.matcher.radius_m);
      c.matcher.k = m.value("k", c.matcher.k);
      c.matcher.sigma_m = m.value("sigma_m", c.matcher.sigma_m);
      c.matcher.max_speed_mps = m.value("max_speed_mps", c.matcher.max_speed_mps);
    }
    c.stride = j.value("stride", c.stride);
    c.min_len = j.value("min_len", c.min_len);
    c.split_train = j.value("split_train", c.split_train);
    c.split_val = j.value("split_val", c.split_val);
    c.split_test = j.value("split_test", c.split_test);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.split_by_vehicle = j.value("split_by_vehicle", c.split_by_vehicle);
    c.prepare_source = j.value("prepare_source", c.prepare_source);
    if (j.contains("model")) c.model = nn::ModelConfig::from_json(j.at("model"));
    if (j.contains("trainer")) c.trainer = nn::TrainConfig::from_json(j.at("trainer"));
    if (j.contains("synth")) c.synth = SynthSpec::from_json(j.at("synth"));
    return c;
  }
};

namespace detail {

inline nlohmann::json parse_scalar(const std::string& raw) {
  const std::string v = trim(raw);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"')
    return v.substr(1, v.size() - 2);
  if (v == "true") return true;
  if (v == "false") return false;
  std::int64_t i = 0;
  if (parse_int64(v, &i)) return i;
  double d = 0.0;
  if (parse_double(v, &d)) return d;
  return v;  // bare string
}

inline void set_dotted(nlohmann::json& root, const std::string& dotted,
                       const nlohmann::json& value) {
  nlohmann::json* cur = &root;
  const auto parts = split(dotted, '.');
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &((*cur)[trim(parts[i])]);
  (*cur)[trim(parts.back())] = value;
}

}  // namespace detail

/**
 * Parses an experiment config from text. JSON when it starts with '{';
 * otherwise simple TOML-style: [section] headers, key = value lines, dotted
 * keys, # comments, quoted strings, numbers, booleans.
 */
inline ExperimentConfig parse_config_text(const std::string& text) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{')
    return ExperimentConfig::from_json(nlohmann::json::parse(body));
  nlohmann::json root = nlohmann::json::object();
  std::string section;
  std::size_t lineno = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = line;
    const auto hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        fail("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      fail("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = s.substr(eq + 1);
    if (key.empty()) fail("config line " + std::to_string(lineno) + ": empty key");
    const std::string dotted = section.empty() ? key : section + "." + key;
    detail::set_dotted(root, dotted, detail::parse_scalar(value));
  }
  return ExperimentConfig::from_json(root);
}

inline ExperimentConfig load_config_file(const std::string& path) {
  return parse_config_text(read_file(path));
}

}  // namespace statvt
