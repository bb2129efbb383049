#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/geo.hpp"
#include "statvt/roadnet.hpp"
#include "statvt/ubodt.hpp"

namespace statvt {

struct GpsRecord {
  std::string vehicle_id;
  std::int64_t t = 0;  // UTC epoch seconds
  double lon = 0.0;
  double lat = 0.0;
  int occupancy = -1;  // -1 when the schema has no occupancy column
};

struct GpsTrajectory {
  std::string vehicle_id;
  std::vector<GpsRecord> points;  // strictly increasing timestamps
};

struct GpsParseStats {
  std::size_t rows_ok = 0;
  std::size_t rows_malformed = 0;
  std::size_t rows_out_of_range = 0;
  std::size_t rows_duplicate = 0;
};

namespace detail {

// Howard Hinnant's civil-days algorithm; avoids timezone-dependent mktime.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) -
         719468;
}

}  // namespace detail

/// Accepts "YYYY-MM-DD HH:MM:SS" and "YYYY/MM/DD HH:MM:SS".
inline std::optional<std::int64_t> parse_timestamp(const std::string& s) {
  if (s.size() != 19) return std::nullopt;
  const char date_sep = s[4];
  if ((date_sep != '-' && date_sep != '/') || s[7] != date_sep) return std::nullopt;
  if (s[10] != ' ' || s[13] != ':' || s[16] != ':') return std::nullopt;
  auto digits = [&](int pos, int len) -> std::optional<int> {
    int v = 0;
    for (int i = pos; i < pos + len; ++i) {
      if (s[static_cast<std::size_t>(i)] < '0' || s[static_cast<std::size_t>(i)] > '9')
        return std::nullopt;
      v = v * 10 + (s[static_cast<std::size_t>(i)] - '0');
    }
    return v;
  };
  const auto year = digits(0, 4), month = digits(5, 2), day = digits(8, 2);
  const auto hh = digits(11, 2), mm = digits(14, 2), ss = digits(17, 2);
  if (!year || !month || !day || !hh || !mm || !ss) return std::nullopt;
  if (*month < 1 || *month > 12 || *day < 1 || *day > 31) return std::nullopt;
  if (*hh > 23 || *mm > 59 || *ss > 60) return std::nullopt;
  return detail::days_from_civil(*year, *month, *day) * 86400 + *hh * 3600 + *mm * 60 +
         *ss;
}

/**
 * Parses GPS CSV with header "id,time,lon,lat" or "id,time,lon,lat,occupancy".
 * Rows are grouped per vehicle, time-sorted, and exact duplicates dropped.
 * Malformed or out-of-range rows are skipped and counted.
 */
inline std::vector<GpsTrajectory> parse_gps_csv(std::istream& is,
                                                GpsParseStats* stats = nullptr) {
  GpsParseStats local;
  GpsParseStats& st = stats != nullptr ? *stats : local;
  std::string line;
  if (!std::getline(is, line)) return {};
  const std::string header = trim(line);
  bool with_occupancy = false;
  if (header == "id,time,lon,lat,occupancy") {
    with_occupancy = true;
  } else if (header != "id,time,lon,lat") {
    fail("gps file: unexpected header '" + header + "'");
  }
  std::map<std::string, std::vector<GpsRecord>> by_vehicle;
  while (std::getline(is, line)) {
    const std::string row = trim(line);
    if (row.empty()) continue;
    const auto f = split(row, ',');
    if (f.size() != (with_occupancy ? 5u : 4u)) {
      ++st.rows_malformed;
      continue;
    }
    GpsRecord r;
    r.vehicle_id = trim(f[0]);
    const auto t = parse_timestamp(trim(f[1]));
    if (r.vehicle_id.empty() || !t || !parse_double(trim(f[2]), &r.lon) ||
        !parse_double(trim(f[3]), &r.lat)) {
      ++st.rows_malformed;
      continue;
    }
    r.t = *t;
    if (with_occupancy) {
      std::int64_t occ = 0;
      if (!parse_int64(trim(f[4]), &occ) || (occ != 0 && occ != 1)) {
        ++st.rows_malformed;
        continue;
      }
      r.occupancy = static_cast<int>(occ);
    }
    if (r.lon < -180.0 || r.lon > 180.0 || r.lat < -90.0 || r.lat > 90.0) {
      ++st.rows_out_of_range;
      continue;
    }
    ++st.rows_ok;
    by_vehicle[r.vehicle_id].push_back(std::move(r));
  }
  std::vector<GpsTrajectory> out;
  for (auto& [id, pts] : by_vehicle) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const GpsRecord& a, const GpsRecord& b) { return a.t < b.t; });
    GpsTrajectory traj;
    traj.vehicle_id = id;
    for (const GpsRecord& r : pts) {
      if (!traj.points.empty()) {
        const GpsRecord& p = traj.points.back();
        if (p.t == r.t && p.lon == r.lon && p.lat == r.lat &&
            p.occupancy == r.occupancy) {
          ++st.rows_duplicate;
          continue;
        }
      }
      traj.points.push_back(r);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

/// Removes points whose implied speed from the previous kept point exceeds
/// max_speed_mps. Returns the number of dropped points.
inline std::size_t drop_speed_outliers(GpsTrajectory& traj, double max_speed_mps) {
  if (traj.points.size() < 2) return 0;
  std::vector<GpsRecord> kept;
  kept.push_back(traj.points.front());
  std::size_t dropped = 0;
  for (std::size_t i = 1; i < traj.points.size(); ++i) {
    const GpsRecord& prev = kept.back();
    const GpsRecord& cur = traj.points[i];
    const double dt = static_cast<double>(cur.t - prev.t);
    const double dist = haversine_m({prev.lon, prev.lat}, {cur.lon, cur.lat});
    if (dt > 0.0 && dist / dt > max_speed_mps) {
      ++dropped;
      continue;
    }
    kept.push_back(cur);
  }
  traj.points = std::move(kept);
  return dropped;
}

/** One map-matching state: a segment with the projection of the GPS point. */
struct Candidate {
  std::int64_t segment = 0;
  LonLat proj_point;
  double offset_m = 0.0;     // along-segment distance from the segment start
  double perp_dist_m = 0.0;  // point-to-segment distance
};

/// Top-k segments within radius, sorted by (perp_dist, segment id).
inline std::vector<Candidate> candidates(const RoadNetwork& net, const LonLat& p,
                                         double radius_m, int k) {
  if (!(radius_m > 0.0)) fail("candidates: radius must be > 0");
  if (k < 1) fail("candidates: k must be >= 1");
  std::vector<Candidate> cands;
  for (std::int64_t id : net.segments_near(p, radius_m)) {
    const RoadSegment& seg = net.segment(id);
    const PolylineProjection proj = project_to_polyline(seg.geometry, p);
    if (proj.perp_dist_m > radius_m) continue;
    Candidate c;
    c.segment = id;
    c.proj_point = proj.point;
    c.perp_dist_m = proj.perp_dist_m;
    // offsets are scaled onto the declared length so 0 <= offset <= length
    const double geo_len = polyline_length_m(seg.geometry);
    c.offset_m = geo_len > 0.0
                     ? std::min(seg.length_m, proj.offset_m * seg.length_m / geo_len)
                     : 0.0;
    cands.push_back(c);
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.perp_dist_m, a.segment) < std::tie(b.perp_dist_m, b.segment);
  });
  if (static_cast<int>(cands.size()) > k) cands.resize(static_cast<std::size_t>(k));
  return cands;
}

/// Gaussian over the perpendicular distance.
inline double emission_logprob(double perp_dist_m, double sigma_m) {
  if (!(sigma_m > 0.0)) fail("emission: sigma must be > 0");
  return -perp_dist_m * perp_dist_m / (2.0 * sigma_m * sigma_m) -
         std::log(sigma_m * std::sqrt(2.0 * kPi));
}

/// Network route length from candidate a to candidate b; +inf when the UBODT
/// holds no path within its bound.
inline double route_distance_m(const Ubodt& ubodt, const RoadNetwork& net,
                               const Candidate& a, const Candidate& b) {
  if (a.segment == b.segment && b.offset_m >= a.offset_m)
    return b.offset_m - a.offset_m;
  const RoadSegment& sa = net.segment(a.segment);
  const RoadSegment& sb = net.segment(b.segment);
  double between = 0.0;
  if (sa.to_node != sb.from_node) {
    const UbodtEntry* e = ubodt.lookup(sa.to_node, sb.from_node);
    if (e == nullptr) return std::numeric_limits<double>::infinity();
    between = e->distance;
  }
  return (sa.length_m - a.offset_m) + between + b.offset_m;
}

inline constexpr double kNegInfLogProb = -std::numeric_limits<double>::infinity();

/// log(min(gc_dist / route_dist, 1)); -inf encodes an unreachable pair.
inline double transition_logprob(const Ubodt& ubodt, const RoadNetwork& net,
                                 const Candidate& a, const Candidate& b,
                                 double gc_dist_m) {
  if (gc_dist_m < 0.0) fail("transition: gc_dist must be >= 0");
  const double route = route_distance_m(ubodt, net, a, b);
  if (std::isinf(route)) return kNegInfLogProb;
  if (route <= 0.0) return 0.0;
  return std::log(std::min(gc_dist_m / route, 1.0));
}

struct MatchParams {
  double radius_m = 50.0;
  int k = 8;
  double sigma_m = 15.0;
  double max_speed_mps = 50.0;
};

/** A matched contiguous piece of one trajectory. */
struct MatchResult {
  std::string vehicle_id;
  int part = 0;
  std::vector<std::int64_t> segment_seq;   // route-expanded, duplicates collapsed
  std::vector<Candidate> per_point;        // chosen candidate per matched point
  std::vector<std::size_t> point_indices;  // indices into the input trajectory
  double log_likelihood = 0.0;
};

struct MatchStats {
  std::size_t n_trajectories = 0;
  std::size_t n_points = 0;
  std::size_t n_points_without_candidates = 0;
  std::size_t n_candidate_gap_splits = 0;
  std::size_t n_unreachable_splits = 0;
  std::size_t n_singleton_parts_dropped = 0;
  std::size_t n_parts = 0;
  std::size_t n_points_matched = 0;
  std::size_t n_speed_outliers_dropped = 0;
  double total_log_likelihood = 0.0;
};

namespace detail {

/// Inclusive segment route between consecutive chosen candidates.
inline bool expand_route(const Ubodt& ubodt, const RoadNetwork& net, const Candidate& a,
                         const Candidate& b, std::vector<std::int64_t>* out) {
  out->clear();
  out->push_back(a.segment);
  if (a.segment == b.segment && b.offset_m >= a.offset_m) return true;
  const RoadSegment& sa = net.segment(a.segment);
  const RoadSegment& sb = net.segment(b.segment);
  if (sa.to_node != sb.from_node) {
    std::vector<std::int64_t> between;
    if (!ubodt.path_segments(sa.to_node, sb.from_node, &between)) return false;
    out->insert(out->end(), between.begin(), between.end());
  }
  out->push_back(b.segment);
  return true;
}

}  // namespace detail

/**
 * HMM decoding over candidate lattices. Points with no candidates split the
 * trajectory; so does a step where no transition stays within the UBODT
 * bound. Each contiguous piece of >= 2 matched points becomes a MatchResult
 * whose segment sequence is the UBODT-expanded traversal with consecutive
 * duplicates collapsed, so every adjacent pair is a road-network edge.
 */
inline std::vector<MatchResult> viterbi_match(const GpsTrajectory& traj,
                                              const RoadNetwork& net, const Ubodt& ubodt,
                                              const MatchParams& params,
                                              MatchStats* stats = nullptr) {
  MatchStats local;
  MatchStats& st = stats != nullptr ? *stats : local;
  st.n_trajectories += 1;
  st.n_points += traj.points.size();
  if (traj.points.size() < 2) fail("viterbi_match: trajectory needs >= 2 points");

  std::vector<std::vector<Candidate>> lattice;
  lattice.reserve(traj.points.size());
  for (const GpsRecord& r : traj.points) {
    lattice.push_back(candidates(net, {r.lon, r.lat}, params.radius_m, params.k));
    if (lattice.back().empty()) ++st.n_points_without_candidates;
  }

  std::vector<MatchResult> results;

  struct DpCell {
    double score = kNegInfLogProb;
    int back = -1;  // candidate index at the previous point
  };

  // one Viterbi run over points [begin, end); emits a result if >= 2 points
  auto run_span = [&](std::size_t begin, std::size_t end) {
    std::size_t t = begin;
    while (t < end) {
      // grow a chain from t as far as transitions allow
      std::vector<std::vector<DpCell>> dp;
      std::vector<std::size_t> span_points;
      dp.emplace_back(lattice[t].size());
      for (std::size_t j = 0; j < lattice[t].size(); ++j)
        dp[0][j].score = emission_logprob(lattice[t][j].perp_dist_m, params.sigma_m);
      span_points.push_back(t);
      std::size_t u = t + 1;
      for (; u < end; ++u) {
        const double gc = haversine_m(
            {traj.points[u - 1].lon, traj.points[u - 1].lat},
            {traj.points[u].lon, traj.points[u].lat});
        std::vector<DpCell> row(lattice[u].size());
        bool any_reachable = false;
        for (std::size_t j = 0; j < lattice[u].size(); ++j) {
          const Candidate& cb = lattice[u][j];
          const double emit = emission_logprob(cb.perp_dist_m, params.sigma_m);
          DpCell best;
          for (std::size_t i = 0; i < lattice[u - 1].size(); ++i) {
            const DpCell& prev = dp.back()[i];
            if (std::isinf(prev.score)) continue;
            const double trans =
                transition_logprob(ubodt, net, lattice[u - 1][i], cb, gc);
            if (std::isinf(trans)) continue;
            const double s = prev.score + trans + emit;
            if (s > best.score ||
                (s == best.score && best.back >= 0 &&
                 lattice[u - 1][i].segment <
                     lattice[u - 1][static_cast<std::size_t>(best.back)].segment)) {
              best.score = s;
              best.back = static_cast<int>(i);
            }
          }
          row[j] = best;
          any_reachable |= best.back >= 0;
        }
        if (!any_reachable) {
          ++st.n_unreachable_splits;
          break;
        }
        dp.push_back(std::move(row));
        span_points.push_back(u);
      }

      if (span_points.size() >= 2) {
        // best final state, ties toward lower segment id
        const auto& last = dp.back();
        int best_j = -1;
        for (std::size_t j = 0; j < last.size(); ++j) {
          if (std::isinf(last[j].score)) continue;
          if (best_j < 0 || last[j].score > last[static_cast<std::size_t>(best_j)].score ||
              (last[j].score == last[static_cast<std::size_t>(best_j)].score &&
               lattice[span_points.back()][j].segment <
                   lattice[span_points.back()][static_cast<std::size_t>(best_j)].segment))
            best_j = static_cast<int>(j);
        }
        MatchResult res;
        res.vehicle_id = traj.vehicle_id;
        res.part = static_cast<int>(results.size());
        res.log_likelihood = last[static_cast<std::size_t>(best_j)].score;
        std::vector<int> choice(span_points.size());
        int j = best_j;
        for (std::size_t step = span_points.size(); step-- > 0;) {
          choice[step] = j;
          j = dp[step][static_cast<std::size_t>(j)].back;
        }
        for (std::size_t step = 0; step < span_points.size(); ++step) {
          res.point_indices.push_back(span_points[step]);
          res.per_point.push_back(
              lattice[span_points[step]][static_cast<std::size_t>(choice[step])]);
        }
        for (std::size_t step = 0; step + 1 < res.per_point.size(); ++step) {
          std::vector<std::int64_t> hop;
          if (!detail::expand_route(ubodt, net, res.per_point[step],
                                    res.per_point[step + 1], &hop))
            fail("viterbi_match: finite transition without a UBODT path");
          const std::size_t from = step == 0 ? 0 : 1;
          for (std::size_t i = from; i < hop.size(); ++i) res.segment_seq.push_back(hop[i]);
        }
        res.segment_seq.erase(
            std::unique(res.segment_seq.begin(), res.segment_seq.end()),
            res.segment_seq.end());
        st.n_points_matched += res.per_point.size();
        st.total_log_likelihood += res.log_likelihood;
        results.push_back(std::move(res));
      } else {
        ++st.n_singleton_parts_dropped;
      }
      t = span_points.back() + 1;
    }
  };

  // split on points without candidates, then run each span
  std::size_t begin = 0;
  std::size_t n_spans = 0;
  while (begin < traj.points.size()) {
    while (begin < traj.points.size() && lattice[begin].empty()) ++begin;
    std::size_t end = begin;
    while (end < traj.points.size() && !lattice[end].empty()) ++end;
    if (end > begin) {
      ++n_spans;
      run_span(begin, end);
    }
    begin = end;
  }
  if (n_spans > 1) st.n_candidate_gap_splits += n_spans - 1;
  st.n_parts += results.size();
  return results;
}

/// CSV dump: vehicle_id,seq_index,segment_id. Parts beyond the first get a
/// "#<part>" suffix so every trajectory key stays unique.
inline void write_match_csv(std::ostream& os, const std::vector<MatchResult>& results) {
  os << "vehicle_id,seq_index,segment_id\n";
  for (const MatchResult& r : results) {
    const std::string key =
        r.part == 0 ? r.vehicle_id : r.vehicle_id + "#" + std::to_string(r.part);
    for (std::size_t i = 0; i < r.segment_seq.size(); ++i)
      os << key << "," << i << "," << r.segment_seq[i] << "\n";
  }
}

/// Reads the matched CSV back as ordered segment sequences per trajectory key.
inline std::vector<std::pair<std::string, std::vector<std::int64_t>>> read_match_csv(
    std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "vehicle_id,seq_index,segment_id")
    fail("matched file: unexpected header");
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
  std::map<std::string, std::size_t> index;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    std::int64_t seq = 0, seg = 0;
    if (f.size() != 3 || !parse_int64(f[1], &seq) || !parse_int64(f[2], &seg))
      fail("matched file: malformed row: " + line);
    auto it = index.find(f[0]);
    if (it == index.end()) {
      index[f[0]] = out.size();
      out.push_back({f[0], {}});
      it = index.find(f[0]);
    }
    auto& seqv = out[it->second].second;
    if (static_cast<std::int64_t>(seqv.size()) != seq)
      fail("matched file: out-of-order seq_index in row: " + line);
    seqv.push_back(seg);
  }
  return out;
}

}  // namespace statvt
