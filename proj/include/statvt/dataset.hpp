#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/roadnet.hpp"
#include "statvt/vocab.hpp"

namespace statvt {

/** An (input, target) window pair in token space. */
struct Sample {
  std::vector<int> input_tokens;   // length L_in
  std::vector<int> target_tokens;  // length L_out
};

inline bool operator==(const Sample& a, const Sample& b) {
  return a.input_tokens == b.input_tokens && a.target_tokens == b.target_tokens;
}

/** A window pair still in segment-id space (pre-vocabulary). */
struct SegmentWindow {
  std::vector<std::int64_t> input;
  std::vector<std::int64_t> target;
};

/// Drops sequences shorter than min_len.
inline std::vector<std::vector<std::int64_t>> clean(
    const std::vector<std::vector<std::int64_t>>& seqs, std::size_t min_len) {
  std::vector<std::vector<std::int64_t>> out;
  for (const auto& s : seqs)
    if (s.size() >= min_len) out.push_back(s);
  return out;
}

/// Fixed-length windows at offsets 0, stride, 2*stride, ...
inline std::vector<SegmentWindow> windows(const std::vector<std::int64_t>& seq, int l_in,
                                          int l_out, int stride) {
  if (stride < 1) fail("windows: stride must be >= 1");
  if (l_in < 1 || l_out < 1) fail("windows: window lengths must be >= 1");
  std::vector<SegmentWindow> out;
  const std::size_t need = static_cast<std::size_t>(l_in + l_out);
  if (seq.size() < need) return out;
  for (std::size_t off = 0; off + need <= seq.size();
       off += static_cast<std::size_t>(stride)) {
    SegmentWindow w;
    w.input.assign(seq.begin() + static_cast<std::ptrdiff_t>(off),
                   seq.begin() + static_cast<std::ptrdiff_t>(off + l_in));
    w.target.assign(seq.begin() + static_cast<std::ptrdiff_t>(off + l_in),
                    seq.begin() + static_cast<std::ptrdiff_t>(off + need));
    out.push_back(std::move(w));
  }
  return out;
}

/// Tokens 2..n assigned in sorted segment-id order over everything the
/// windows mention.
inline Vocabulary build_vocab(const std::vector<SegmentWindow>& windows) {
  if (windows.empty()) fail("build_vocab: no windows");
  std::set<std::int64_t> ids;
  for (const SegmentWindow& w : windows) {
    ids.insert(w.input.begin(), w.input.end());
    ids.insert(w.target.begin(), w.target.end());
  }
  return Vocabulary::from_segment_ids(std::move(ids));
}

inline std::vector<Sample> tokenize_windows(const std::vector<SegmentWindow>& windows,
                                            const Vocabulary& vocab) {
  std::vector<Sample> out;
  out.reserve(windows.size());
  for (const SegmentWindow& w : windows)
    out.push_back({vocab.tokenize(w.input), vocab.tokenize(w.target)});
  return out;
}

struct SplitResult {
  std::vector<Sample> train, val, test;
};

/**
 * Deterministic random partition. Validation/test sizes floor to their
 * ratios; the remainder goes to train.
 */
inline SplitResult split(const std::vector<Sample>& samples, double r_train,
                         double r_val, double r_test, std::uint64_t seed) {
  if (std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
    fail("split: ratios must sum to 1");
  if (samples.size() < 3) fail("split: need at least 3 samples");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n = samples.size();
  const std::size_t n_val = static_cast<std::size_t>(r_val * static_cast<double>(n));
  const std::size_t n_test = static_cast<std::size_t>(r_test * static_cast<double>(n));
  const std::size_t n_train = n - n_val - n_test;
  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[order[i]];
    if (i < n_train)
      out.train.push_back(s);
    else if (i < n_train + n_val)
      out.val.push_back(s);
    else
      out.test.push_back(s);
  }
  return out;
}

/// Per-trajectory variant of split: assigns whole trajectories to folds.
/// Ratios apply to trajectory counts; windows follow their trajectory.
inline SplitResult split_by_trajectory(
    const std::vector<std::vector<Sample>>& per_traj, double r_train, double r_val,
    double r_test, std::uint64_t seed) {
  if (std::abs(r_train + r_val + r_test - 1.0) > 1e-9)
    fail("split: ratios must sum to 1");
  if (per_traj.size() < 3) fail("split: need at least 3 trajectories");
  std::vector<std::size_t> order(per_traj.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n = per_traj.size();
  const std::size_t n_val = static_cast<std::size_t>(r_val * static_cast<double>(n));
  const std::size_t n_test = static_cast<std::size_t>(r_test * static_cast<double>(n));
  const std::size_t n_train = n - n_val - n_test;
  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& group = per_traj[order[i]];
    auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.insert(dst.end(), group.begin(), group.end());
  }
  return out;
}

/// True when input || target is edge-consistent under the mask.
inline bool sample_is_connected(const Sample& s, const NeighborMask& mask) {
  std::vector<int> seq = s.input_tokens;
  seq.insert(seq.end(), s.target_tokens.begin(), s.target_tokens.end());
  for (std::size_t i = 0; i + 1 < seq.size(); ++i)
    if (!mask.at(seq[i], seq[i + 1])) return false;
  return true;
}

// samples file: one line per sample, "input tokens|target tokens",
// space-separated within each side.
inline void write_samples(std::ostream& os, const std::vector<Sample>& samples) {
  for (const Sample& s : samples) {
    for (std::size_t i = 0; i < s.input_tokens.size(); ++i)
      os << (i ? " " : "") << s.input_tokens[i];
    os << "|";
    for (std::size_t i = 0; i < s.target_tokens.size(); ++i)
      os << (i ? " " : "") << s.target_tokens[i];
    os << "\n";
  }
}

inline std::vector<Sample> read_samples(std::istream& is) {
  std::vector<Sample> out;
  std::string line;
  auto parse_side = [](const std::string& side, std::vector<int>* dst) {
    for (const std::string& tok : split(trim(side), ' ')) {
      if (tok.empty()) continue;
      std::int64_t v = 0;
      if (!parse_int64(tok, &v)) fail("samples file: malformed token '" + tok + "'");
      dst->push_back(static_cast<int>(v));
    }
  };
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto halves = split(trim(line), '|');
    if (halves.size() != 2) fail("samples file: expected 'input|target' in: " + line);
    Sample s;
    parse_side(halves[0], &s.input_tokens);
    parse_side(halves[1], &s.target_tokens);
    if (s.input_tokens.empty() || s.target_tokens.empty())
      fail("samples file: empty side in: " + line);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace statvt
