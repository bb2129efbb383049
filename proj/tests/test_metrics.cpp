#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "statvt/metrics.hpp"
#include "statvt/common.hpp"

using namespace statvt;

namespace {

// Straight from the recursive definition; exponential, test-only.
int edit_recursive(const std::vector<int>& a, const std::vector<int>& b, std::size_t i,
                   std::size_t j) {
  if (i == 0) return static_cast<int>(j);
  if (j == 0) return static_cast<int>(i);
  if (a[i - 1] == b[j - 1]) return edit_recursive(a, b, i - 1, j - 1);
  const int del = edit_recursive(a, b, i - 1, j);
  const int ins = edit_recursive(a, b, i, j - 1);
  const int sub = edit_recursive(a, b, i - 1, j - 1);
  return 1 + std::min({del, ins, sub});
}

std::vector<std::vector<int>> all_seqs(int alphabet, int max_len) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier) {
      for (int c = 0; c < alphabet; ++c) {
        auto t = s;
        t.push_back(c);
        out.push_back(t);
        next.push_back(std::move(t));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

std::vector<int> random_seq(Rng& rng, int max_len, int alphabet) {
  std::vector<int> s(rng.below(static_cast<std::uint64_t>(max_len) + 1));
  for (auto& v : s) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet)));
  return s;
}

}  // namespace

TEST_CASE("edit distance basics") {
  CHECK(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(edit_distance({1, 2, 3, 4}, {1, 2, 3, 9}) == 1);
  CHECK(edit_distance({}, {1, 2}) == 2);
  CHECK(edit_distance({1, 2}, {}) == 2);
  CHECK(edit_distance({1, 2, 3}, {2, 3}) == 1);      // delete
  CHECK(edit_distance({2, 3}, {1, 2, 3}) == 1);      // insert
  CHECK(edit_distance({1, 3, 5}, {2, 4, 6}) == 3);   // all substitute
}

TEST_CASE("edit distance equals the recursive oracle on short alphabets") {
  const auto seqs = all_seqs(3, 4);
  for (const auto& a : seqs)
    for (const auto& b : seqs)
      CHECK(edit_distance(a, b) == edit_recursive(a, b, a.size(), b.size()));
}

TEST_CASE("edit distance is a metric on random triples") {
  Rng rng(81);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_seq(rng, 6, 4);
    const auto b = random_seq(rng, 6, 4);
    const auto c = random_seq(rng, 6, 4);
    CHECK(edit_distance(a, a) == 0);
    CHECK(edit_distance(a, b) == edit_distance(b, a));
    CHECK(edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c));
    if (a != b) CHECK(edit_distance(a, b) > 0);
  }
}

TEST_CASE("distance error arithmetic") {
  CHECK(distance_error({{1, 2, 3, 4}}, {{1, 2, 3, 4}}, 4) == 0.0);
  CHECK(distance_error({{1, 2, 3, 9}}, {{1, 2, 3, 4}}, 4) == 0.25);
  CHECK_THROWS_AS(distance_error({}, {}, 4), Error);
}

TEST_CASE("average match rate arithmetic") {
  CHECK(average_match_rate({{1, 2, 3, 4}}, {{1, 2, 3, 4}}, 4) == 1.0);
  CHECK(average_match_rate({{1, 2, 9, 4}}, {{1, 2, 3, 4}}, 4) == 0.75);
  // defensive rule: short predictions pad with an impossible token
  CHECK(average_match_rate({{1, 2}}, {{1, 2, 3, 4}}, 4) == 0.5);
  CHECK(average_match_rate({{1, 2, 3, 4, 5, 6}}, {{1, 2, 3, 4}}, 4) == 1.0);
  CHECK_THROWS_AS(average_match_rate({}, {}, 4), Error);
}

TEST_CASE("batch metrics equal the scalar loop oracle") {
  Rng rng(82);
  for (int trial = 0; trial < 20; ++trial) {
    const int l_out = 4;
    std::vector<std::vector<int>> preds, targets;
    const int n = 1 + static_cast<int>(rng.below(30));
    for (int i = 0; i < n; ++i) {
      std::vector<int> p(static_cast<std::size_t>(l_out)), t(static_cast<std::size_t>(l_out));
      for (int j = 0; j < l_out; ++j) {
        p[static_cast<std::size_t>(j)] = static_cast<int>(rng.below(5));
        t[static_cast<std::size_t>(j)] = static_cast<int>(rng.below(5));
      }
      preds.push_back(p);
      targets.push_back(t);
    }
    double de_expect = 0.0, amr_expect = 0.0;
    for (int i = 0; i < n; ++i) {
      de_expect += edit_distance(preds[static_cast<std::size_t>(i)],
                                 targets[static_cast<std::size_t>(i)]);
      for (int j = 0; j < l_out; ++j)
        amr_expect += preds[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] ==
                              targets[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]
                          ? 1.0
                          : 0.0;
    }
    de_expect /= n * l_out;
    amr_expect /= n * l_out;
    CHECK(distance_error(preds, targets, l_out) == Catch::Approx(de_expect).margin(1e-15));
    CHECK(average_match_rate(preds, targets, l_out) ==
          Catch::Approx(amr_expect).margin(1e-15));
  }
}

TEST_CASE("DE <= 1 - AMR for equal-length outputs") {
  Rng rng(83);
  for (int trial = 0; trial < 200; ++trial) {
    const int l_out = 1 + static_cast<int>(rng.below(6));
    std::vector<std::vector<int>> preds, targets;
    const int n = 1 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i) {
      std::vector<int> p(static_cast<std::size_t>(l_out)), t(static_cast<std::size_t>(l_out));
      for (int j = 0; j < l_out; ++j) {
        p[static_cast<std::size_t>(j)] = static_cast<int>(rng.below(3));
        t[static_cast<std::size_t>(j)] = static_cast<int>(rng.below(3));
      }
      preds.push_back(p);
      targets.push_back(t);
    }
    const double de = distance_error(preds, targets, l_out);
    const double amr = average_match_rate(preds, targets, l_out);
    CHECK(de <= 1.0 - amr + 1e-15);
    CHECK(amr >= 0.0);
    CHECK(amr <= 1.0);
    CHECK(de >= 0.0);
    CHECK(de <= 1.0);
  }
}

TEST_CASE("score_predictions fills the report consistently") {
  std::vector<std::vector<int>> preds{{1, 2, 3, 4}, {1, 9, 3, 9}};
  std::vector<std::vector<int>> targets{{1, 2, 3, 4}, {1, 2, 3, 4}};
  auto r = score_predictions(preds, targets, 4, 3);
  CHECK(r.n_samples == 2);
  CHECK(r.amr == 0.75);
  CHECK(r.per_position_match == std::vector<double>{1.0, 0.5, 1.0, 0.5});
  // AMR equals the mean of per-position match rates
  double mean = 0.0;
  for (double v : r.per_position_match) mean += v;
  mean /= static_cast<double>(r.per_position_match.size());
  CHECK(r.amr == Catch::Approx(mean).margin(1e-15));
  CHECK(r.fallback_count == 3);
  CHECK(r.de <= 1.0 - r.amr + 1e-15);

  auto j = r.to_json();
  auto back = EvalReport::from_json(j);
  CHECK(back.amr == r.amr);
  CHECK(back.de == r.de);
  CHECK(back.per_position_match == r.per_position_match);
}

TEST_CASE("sweep table formatting is stable") {
  EvalReport cell;
  cell.de = 0.2693;
  cell.amr = 0.7307;
  const auto text = format_sweep_table({8}, {4}, {{cell}});
  CHECK(text.find("26.93") != std::string::npos);
  CHECK(text.find("73.07") != std::string::npos);
}
