#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "statvt/dataset.hpp"
#include "test_support.hpp"

using namespace statvt;
using test_support::make_grid_segments;

namespace {

std::vector<std::int64_t> iota_seq(int n, std::int64_t start = 0) {
  std::vector<std::int64_t> s(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = start + i;
  return s;
}

}  // namespace

TEST_CASE("clean drops short sequences") {
  auto kept = clean({iota_seq(11), iota_seq(12), iota_seq(30)}, 12);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].size() == 12);

  // injected short tracks: survivor count equals a direct recount
  Rng rng(71);
  std::vector<std::vector<std::int64_t>> corpus;
  std::size_t expect = 0;
  for (int i = 0; i < 200; ++i) {
    const int len = rng.uniform() < 0.1 ? static_cast<int>(rng.below(12))
                                        : 12 + static_cast<int>(rng.below(20));
    corpus.push_back(iota_seq(len));
    if (len >= 12) ++expect;
  }
  CHECK(clean(corpus, 12).size() == expect);
}

TEST_CASE("windows counts and offsets") {
  CHECK(windows(iota_seq(12), 8, 4, 1).size() == 1);
  CHECK(windows(iota_seq(15), 8, 4, 1).size() == 4);
  CHECK(windows(iota_seq(11), 8, 4, 1).empty());

  const auto w = windows(iota_seq(100), 8, 4, 3);
  REQUIRE(w.size() == 30);  // floor((100-12)/3)+1
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::int64_t off = static_cast<std::int64_t>(i) * 3;
    CHECK(w[i].input.front() == off);
    CHECK(w[i].input.size() == 8);
    CHECK(w[i].target.front() == off + 8);
    CHECK(w[i].target.size() == 4);
  }
  CHECK_THROWS_AS(windows(iota_seq(20), 8, 4, 0), Error);
}

TEST_CASE("windows cover every adjacent pair when stride <= L_in + L_out - 1") {
  Rng rng(72);
  const auto seq = iota_seq(57);
  for (int stride = 1; stride <= 11; ++stride) {
    const auto ws = windows(seq, 8, 4, stride);
    std::set<std::pair<std::int64_t, std::int64_t>> covered;
    for (const auto& w : ws) {
      std::vector<std::int64_t> whole = w.input;
      whole.insert(whole.end(), w.target.begin(), w.target.end());
      for (std::size_t i = 0; i + 1 < whole.size(); ++i)
        covered.insert({whole[i], whole[i + 1]});
    }
    const std::size_t last_window_end =
        (ws.size() - 1) * static_cast<std::size_t>(stride) + 12;
    for (std::size_t i = 0; i + 1 < last_window_end; ++i)
      CHECK(covered.count({seq[i], seq[i + 1]}) == 1);
  }
}

TEST_CASE("split produces 8/1/1 on ten samples and is deterministic") {
  std::vector<Sample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back({{i}, {i}});
  auto r1 = split(samples, 0.8, 0.1, 0.1, 42);
  CHECK(r1.train.size() == 8);
  CHECK(r1.val.size() == 1);
  CHECK(r1.test.size() == 1);
  auto r2 = split(samples, 0.8, 0.1, 0.1, 42);
  CHECK(r1.train == r2.train);
  CHECK(r1.val == r2.val);
  CHECK(r1.test == r2.test);
  auto r3 = split(samples, 0.8, 0.1, 0.1, 43);
  CHECK((r1.train != r3.train || r1.val != r3.val || r1.test != r3.test));
}

TEST_CASE("split sizes floor with the remainder going to train") {
  std::vector<Sample> samples(124845, Sample{{1}, {1}});
  auto r = split(samples, 0.8, 0.1, 0.1, 7);
  CHECK(r.train.size() == 99877);
  CHECK(r.val.size() == 12484);
  CHECK(r.test.size() == 12484);
}

TEST_CASE("split is an exact partition and rejects tiny inputs") {
  std::vector<Sample> samples;
  for (int i = 0; i < 103; ++i) samples.push_back({{i}, {i + 1000}});
  auto r = split(samples, 0.8, 0.1, 0.1, 5);
  CHECK(r.train.size() + r.val.size() + r.test.size() == samples.size());
  std::multiset<int> seen;
  for (const auto& s : r.train) seen.insert(s.input_tokens[0]);
  for (const auto& s : r.val) seen.insert(s.input_tokens[0]);
  for (const auto& s : r.test) seen.insert(s.input_tokens[0]);
  std::multiset<int> expect;
  for (int i = 0; i < 103; ++i) expect.insert(i);
  CHECK(seen == expect);

  CHECK_THROWS_AS(split({{Sample{{1}, {1}}, Sample{{2}, {2}}}}, 0.8, 0.1, 0.1, 1), Error);
  CHECK_THROWS_AS(split(samples, 0.8, 0.1, 0.2, 1), Error);
}

TEST_CASE("split_by_trajectory keeps windows of one trajectory together") {
  std::vector<std::vector<Sample>> per_traj;
  for (int t = 0; t < 20; ++t) {
    std::vector<Sample> group;
    for (int k = 0; k < 3; ++k) group.push_back({{t}, {k}});
    per_traj.push_back(group);
  }
  auto r = split_by_trajectory(per_traj, 0.8, 0.1, 0.1, 9);
  CHECK(r.train.size() + r.val.size() + r.test.size() == 60);
  std::set<int> train_ids, other_ids;
  for (const auto& s : r.train) train_ids.insert(s.input_tokens[0]);
  for (const auto& s : r.val) other_ids.insert(s.input_tokens[0]);
  for (const auto& s : r.test) other_ids.insert(s.input_tokens[0]);
  for (int id : train_ids) CHECK(other_ids.count(id) == 0);
}

TEST_CASE("build_vocab assigns tokens in sorted segment order") {
  std::vector<SegmentWindow> ws{{{7, 3}, {7, 3}}};
  auto vocab = build_vocab(ws);
  CHECK(vocab.n_tokens() == 4);
  CHECK(vocab.token(3) == 2);
  CHECK(vocab.token(7) == 3);
  CHECK(vocab.segment(vocab.token(3)) == 3);
  CHECK(vocab.segment(vocab.token(7)) == 7);
  CHECK_THROWS_AS(vocab.token(5), Error);
  CHECK_THROWS_AS(vocab.segment(0), Error);
  CHECK_THROWS_AS(build_vocab({}), Error);
}

TEST_CASE("vocab from a 3x3 grid corpus has 24 + 2 tokens") {
  auto segs = make_grid_segments(3);
  auto net = RoadNetwork::build(segs);
  Rng rng(73);
  std::vector<SegmentWindow> ws;
  // enough random walks to touch every segment
  for (int t = 0; t < 200; ++t) {
    std::vector<std::int64_t> seq;
    std::int64_t cur = static_cast<std::int64_t>(rng.below(segs.size())) + 1;
    for (int i = 0; i < 12; ++i) {
      seq.push_back(cur);
      const auto& nx = net.successors(cur);
      cur = nx[rng.below(nx.size())];
    }
    for (auto& w : windows(seq, 8, 4, 4)) ws.push_back(w);
  }
  auto vocab = build_vocab(ws);
  CHECK(vocab.n_tokens() == 26);
}

TEST_CASE("windows over connected walks yield mask-consistent samples") {
  auto segs = make_grid_segments(3);
  auto net = RoadNetwork::build(segs);
  Rng rng(74);
  std::vector<SegmentWindow> ws;
  for (int t = 0; t < 50; ++t) {
    std::vector<std::int64_t> seq;
    std::int64_t cur = static_cast<std::int64_t>(rng.below(segs.size())) + 1;
    for (int i = 0; i < 16; ++i) {
      seq.push_back(cur);
      const auto& nx = net.successors(cur);
      cur = nx[rng.below(nx.size())];
    }
    for (auto& w : windows(seq, 8, 4, 4)) ws.push_back(w);
  }
  auto vocab = build_vocab(ws);
  auto mask = neighbor_mask(net, vocab);
  for (const Sample& s : tokenize_windows(ws, vocab))
    CHECK(sample_is_connected(s, mask));
}

TEST_CASE("samples file round trip") {
  std::vector<Sample> samples{{{2, 3, 4}, {5, 6}}, {{9, 9, 9}, {2, 2}}};
  std::ostringstream os;
  write_samples(os, samples);
  CHECK(os.str() == "2 3 4|5 6\n9 9 9|2 2\n");
  std::istringstream is(os.str());
  auto back = read_samples(is);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == samples[0]);
  CHECK(back[1] == samples[1]);

  std::istringstream bad("1 2 3\n");
  CHECK_THROWS_AS(read_samples(bad), Error);
}

TEST_CASE("vocabulary CSV round trip and validation") {
  auto vocab = Vocabulary::from_segment_ids({100, 7, 55});
  std::ostringstream os;
  vocab.save_csv(os);
  std::istringstream is(os.str());
  auto back = Vocabulary::load_csv(is);
  CHECK(back.n_tokens() == vocab.n_tokens());
  for (std::int64_t id : {7, 55, 100}) CHECK(back.token(id) == vocab.token(id));
  CHECK(back.hash() == vocab.hash());

  std::istringstream bad("segment_id,token\n5,3\n");  // gap: token 2 missing
  CHECK_THROWS_AS(Vocabulary::load_csv(bad), Error);
}
