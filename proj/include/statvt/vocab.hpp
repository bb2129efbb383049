#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "statvt/common.hpp"

namespace statvt {

/**
 * Bijection between road-segment ids and dense token ids. Tokens 0 and 1 are
 * reserved (PAD, BOS); segment tokens start at 2 and are assigned in sorted
 * segment-id order so the mapping is stable across runs.
 */
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kFirstSegmentToken = 2;

  Vocabulary() = default;

  static Vocabulary from_segment_ids(std::set<std::int64_t> ids) {
    Vocabulary v;
    v.token_to_seg_.assign(kFirstSegmentToken, -1);
    for (std::int64_t id : ids) {
      v.seg_to_token_[id] = static_cast<int>(v.token_to_seg_.size());
      v.token_to_seg_.push_back(id);
    }
    return v;
  }

  int n_tokens() const { return static_cast<int>(token_to_seg_.size()); }

  bool has_segment(std::int64_t segment_id) const {
    return seg_to_token_.count(segment_id) > 0;
  }

  int token(std::int64_t segment_id) const {
    auto it = seg_to_token_.find(segment_id);
    if (it == seg_to_token_.end())
      fail("segment id not in vocabulary: " + std::to_string(segment_id));
    return it->second;
  }

  bool is_special(int token) const { return token == kPad || token == kBos; }

  std::int64_t segment(int token) const {
    if (token < kFirstSegmentToken || token >= n_tokens())
      fail("token has no segment: " + std::to_string(token));
    return token_to_seg_[static_cast<std::size_t>(token)];
  }

  std::vector<int> tokenize(const std::vector<std::int64_t>& segment_ids) const {
    std::vector<int> out;
    out.reserve(segment_ids.size());
    for (std::int64_t id : segment_ids) out.push_back(token(id));
    return out;
  }

  std::vector<std::int64_t> detokenize(const std::vector<int>& tokens) const {
    std::vector<std::int64_t> out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(segment(t));
    return out;
  }

  // CSV: header segment_id,token
  void save_csv(std::ostream& os) const {
    os << "segment_id,token\n";
    for (int t = kFirstSegmentToken; t < n_tokens(); ++t) {
      os << token_to_seg_[static_cast<std::size_t>(t)] << "," << t << "\n";
    }
  }

  static Vocabulary load_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || trim(line) != "segment_id,token")
      fail("vocabulary file: expected header 'segment_id,token'");
    std::map<int, std::int64_t> rows;
    while (std::getline(is, line)) {
      if (trim(line).empty()) continue;
      const auto f = split(trim(line), ',');
      std::int64_t seg = 0, tok = 0;
      if (f.size() != 2 || !parse_int64(f[0], &seg) || !parse_int64(f[1], &tok))
        fail("vocabulary file: malformed row: " + line);
      rows[static_cast<int>(tok)] = seg;
    }
    Vocabulary v;
    v.token_to_seg_.assign(kFirstSegmentToken, -1);
    int expect = kFirstSegmentToken;
    for (const auto& [tok, seg] : rows) {
      if (tok != expect)
        fail("vocabulary file: tokens must be contiguous from 2, got " +
             std::to_string(tok));
      v.seg_to_token_[seg] = tok;
      v.token_to_seg_.push_back(seg);
      ++expect;
    }
    if (v.seg_to_token_.size() + kFirstSegmentToken != v.token_to_seg_.size())
      fail("vocabulary file: duplicate segment id");
    return v;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (int t = kFirstSegmentToken; t < n_tokens(); ++t) {
      const std::int64_t s = token_to_seg_[static_cast<std::size_t>(t)];
      h = fnv1a(&s, sizeof(s), h);
    }
    return h;
  }

 private:
  std::map<std::int64_t, int> seg_to_token_;
  std::vector<std::int64_t> token_to_seg_;  // index = token; specials hold -1
};

}  // namespace statvt
