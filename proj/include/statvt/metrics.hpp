#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "statvt/common.hpp"

#include "json.hpp"

namespace statvt {

/// Levenshtein distance: unit-cost insert/delete/substitute.
inline int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace detail {

/// Pads/truncates a prediction to length l_out; the pad value never matches.
inline std::vector<int> fit_length(const std::vector<int>& pred, int l_out) {
  std::vector<int> out(pred.begin(),
                       pred.begin() + std::min<std::size_t>(pred.size(),
                                                            static_cast<std::size_t>(l_out)));
  while (static_cast<int>(out.size()) < l_out) out.push_back(-1);
  return out;
}

}  // namespace detail

/// (1 / (N * L_out)) * sum of edit distances.
inline double distance_error(const std::vector<std::vector<int>>& preds,
                             const std::vector<std::vector<int>>& targets, int l_out) {
  if (preds.empty() || preds.size() != targets.size())
    fail("distance_error: needs equal non-empty prediction/target batches");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (static_cast<int>(targets[i].size()) != l_out)
      fail("distance_error: target length != L_out");
    total += edit_distance(detail::fit_length(preds[i], l_out), targets[i]);
  }
  return total / (static_cast<double>(preds.size()) * l_out);
}

/// Fraction of output positions predicted exactly.
inline double average_match_rate(const std::vector<std::vector<int>>& preds,
                                 const std::vector<std::vector<int>>& targets,
                                 int l_out) {
  if (preds.empty() || preds.size() != targets.size())
    fail("average_match_rate: needs equal non-empty prediction/target batches");
  double hits = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (static_cast<int>(targets[i].size()) != l_out)
      fail("average_match_rate: target length != L_out");
    const std::vector<int> p = detail::fit_length(preds[i], l_out);
    for (int j = 0; j < l_out; ++j)
      if (p[static_cast<std::size_t>(j)] == targets[i][static_cast<std::size_t>(j)])
        hits += 1.0;
  }
  return hits / (static_cast<double>(preds.size()) * l_out);
}

/** Full scoring of one evaluation run. */
struct EvalReport {
  double de = 0.0;
  double amr = 0.0;
  int n_samples = 0;
  int l_out = 0;
  std::vector<double> per_position_match;  // match rate at each output position
  std::int64_t fallback_count = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"de", de},
                          {"amr", amr},
                          {"n_samples", n_samples},
                          {"l_out", l_out},
                          {"per_position_match", per_position_match},
                          {"fallback_count", fallback_count}};
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.de = j.at("de").get<double>();
    r.amr = j.at("amr").get<double>();
    r.n_samples = j.at("n_samples").get<int>();
    r.l_out = j.at("l_out").get<int>();
    r.per_position_match = j.at("per_position_match").get<std::vector<double>>();
    r.fallback_count = j.at("fallback_count").get<std::int64_t>();
    return r;
  }
};

inline EvalReport score_predictions(const std::vector<std::vector<int>>& preds,
                                    const std::vector<std::vector<int>>& targets,
                                    int l_out, std::int64_t fallback_count = 0) {
  EvalReport r;
  r.n_samples = static_cast<int>(preds.size());
  r.l_out = l_out;
  r.de = distance_error(preds, targets, l_out);
  r.amr = average_match_rate(preds, targets, l_out);
  r.per_position_match.assign(static_cast<std::size_t>(l_out), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::vector<int> p = detail::fit_length(preds[i], l_out);
    for (int j = 0; j < l_out; ++j)
      if (p[static_cast<std::size_t>(j)] == targets[i][static_cast<std::size_t>(j)])
        r.per_position_match[static_cast<std::size_t>(j)] += 1.0;
  }
  for (double& v : r.per_position_match) v /= static_cast<double>(preds.size());
  r.fallback_count = fallback_count;
  return r;
}

/// Table-style text block for length sweeps: one row per input length,
/// DE/AMR columns (printed as percentages) per output length.
inline std::string format_sweep_table(
    const std::vector<int>& input_lengths, const std::vector<int>& output_lengths,
    const std::vector<std::vector<EvalReport>>& cells) {
  std::string out = "input \\ output";
  for (int l : output_lengths)
    out += "\tDE%(" + std::to_string(l) + ")\tAMR%(" + std::to_string(l) + ")";
  out += "\n";
  char buf[64];
  for (std::size_t i = 0; i < input_lengths.size(); ++i) {
    out += std::to_string(input_lengths[i]);
    for (std::size_t j = 0; j < output_lengths.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "\t%.2f\t%.2f", cells[i][j].de * 100.0,
                    cells[i][j].amr * 100.0);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace statvt
