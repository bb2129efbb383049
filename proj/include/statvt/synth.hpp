#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/geo.hpp"
#include "statvt/mapmatch.hpp"
#include "statvt/roadnet.hpp"

#include "json.hpp"

namespace statvt {

/** Generator knobs for the synthetic grid town and its taxi fleet. */
struct SynthSpec {
  int grid_n = 8;            // intersections per side
  double spacing_m = 100.0;  // block edge length
  int n_traj = 2000;
  int traj_len = 20;  // segments per trajectory
  // turn policy at each intersection (probabilities over available moves)
  double p_straight = 0.7;
  double p_left = 0.15;
  double p_right = 0.15;
  // share of the left/right mass kept on the side of the previous turn;
  // 0.5 is side-neutral, higher values give walks a persistent turning habit
  double turn_inertia = 0.75;
  double gps_noise_sigma_m = 10.0;
  double gps_interval_s = 5.0;
  double speed_mps = 10.0;
  std::uint64_t seed = 7;
  double origin_lon = 116.30;
  double origin_lat = 39.90;

  void validate() const {
    if (grid_n < 2) fail("synth: grid_n must be >= 2");
    if (!(spacing_m > 0)) fail("synth: spacing must be > 0");
    if (n_traj < 1 || traj_len < 1) fail("synth: need trajectories and length");
    if (std::abs(p_straight + p_left + p_right - 1.0) > 1e-9)
      fail("synth: turn policy must sum to 1");
    if (turn_inertia < 0.0 || turn_inertia > 1.0)
      fail("synth: turn_inertia must be in [0, 1]");
    if (!(gps_interval_s > 0) || !(speed_mps > 0))
      fail("synth: interval and speed must be > 0");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"grid_n", grid_n},
                          {"spacing_m", spacing_m},
                          {"n_traj", n_traj},
                          {"traj_len", traj_len},
                          {"p_straight", p_straight},
                          {"p_left", p_left},
                          {"p_right", p_right},
                          {"turn_inertia", turn_inertia},
                          {"gps_noise_sigma_m", gps_noise_sigma_m},
                          {"gps_interval_s", gps_interval_s},
                          {"speed_mps", speed_mps},
                          {"seed", seed},
                          {"origin_lon", origin_lon},
                          {"origin_lat", origin_lat}};
  }

  static SynthSpec from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.grid_n = j.value("grid_n", s.grid_n);
    s.spacing_m = j.value("spacing_m", s.spacing_m);
    s.n_traj = j.value("n_traj", s.n_traj);
    s.traj_len = j.value("traj_len", s.traj_len);
    s.p_straight = j.value("p_straight", s.p_straight);
    s.p_left = j.value("p_left", s.p_left);
    s.p_right = j.value("p_right", s.p_right);
    s.turn_inertia = j.value("turn_inertia", s.turn_inertia);
    s.gps_noise_sigma_m = j.value("gps_noise_sigma_m", s.gps_noise_sigma_m);
    s.gps_interval_s = j.value("gps_interval_s", s.gps_interval_s);
    s.speed_mps = j.value("speed_mps", s.speed_mps);
    s.seed = j.value("seed", s.seed);
    s.origin_lon = j.value("origin_lon", s.origin_lon);
    s.origin_lat = j.value("origin_lat", s.origin_lat);
    return s;
  }
};

/// Grid road network: every block edge becomes two directed segments.
/// 2 * 2 * grid_n * (grid_n - 1) segments with ids 1..N in a fixed order.
inline std::vector<RoadSegment> synth_network(const SynthSpec& spec) {
  spec.validate();
  const double mlat = deg2rad(1.0) * kEarthRadiusM;
  auto node_pos = [&](int col, int row) -> LonLat {
    return {spec.origin_lon +
                col * spec.spacing_m / (mlat * std::cos(deg2rad(spec.origin_lat))),
            spec.origin_lat + row * spec.spacing_m / mlat};
  };
  auto node_id = [&](int col, int row) {
    return static_cast<std::int64_t>(row) * spec.grid_n + col + 1;
  };
  std::vector<RoadSegment> segs;
  std::int64_t next_id = 1;
  auto add_pair = [&](int c1, int r1, int c2, int r2) {
    RoadSegment fwd;
    fwd.id = next_id++;
    fwd.from_node = node_id(c1, r1);
    fwd.to_node = node_id(c2, r2);
    fwd.length_m = spec.spacing_m;
    fwd.geometry = {node_pos(c1, r1), node_pos(c2, r2)};
    RoadSegment rev = fwd;
    rev.id = next_id++;
    std::swap(rev.from_node, rev.to_node);
    rev.geometry = {fwd.geometry[1], fwd.geometry[0]};
    segs.push_back(std::move(fwd));
    segs.push_back(std::move(rev));
  };
  for (int row = 0; row < spec.grid_n; ++row)
    for (int col = 0; col + 1 < spec.grid_n; ++col) add_pair(col, row, col + 1, row);
  for (int col = 0; col < spec.grid_n; ++col)
    for (int row = 0; row + 1 < spec.grid_n; ++row) add_pair(col, row, col, row + 1);
  return segs;
}

enum class TurnClass { kStraight, kLeft, kRight, kUturn };

inline TurnClass classify_turn(const RoadNetwork& net, std::int64_t from,
                               std::int64_t to) {
  const RoadSegment& a = net.segment(from);
  const RoadSegment& b = net.segment(to);
  if (b.from_node == a.to_node && b.to_node == a.from_node) return TurnClass::kUturn;
  const double ha = heading_deg(a.geometry[a.geometry.size() - 2], a.geometry.back());
  const double hb = heading_deg(b.geometry[0], b.geometry[1]);
  const double d = angle_diff_deg(ha, hb);
  if (std::abs(d) < 45.0) return TurnClass::kStraight;
  if (std::abs(d) >= 135.0) return TurnClass::kUturn;
  return d > 0.0 ? TurnClass::kLeft : TurnClass::kRight;
}

struct SynthTrajectory {
  std::string vehicle_id;
  std::vector<std::int64_t> segments;          // ground-truth path
  std::vector<GpsRecord> gps;                  // noisy fixes
  std::vector<std::int64_t> gps_truth;         // true segment per fix
};

/**
 * Connectivity-respecting random walks with the turn policy (immediate
 * U-turns only when forced) plus noisy GPS emissions along the path. The
 * left/right choice leans toward the side of the previous turn by
 * turn_inertia, which rewards models that can see further back.
 */
inline std::vector<SynthTrajectory> synth_trajectories(const SynthSpec& spec,
                                                       const RoadNetwork& net) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<SynthTrajectory> out;
  out.reserve(static_cast<std::size_t>(spec.n_traj));
  const std::int64_t t0 = 1400000000;
  for (int ti = 0; ti < spec.n_traj; ++ti) {
    SynthTrajectory traj;
    traj.vehicle_id = std::to_string(ti + 1);
    const auto& all = net.segments();
    std::int64_t cur = all[rng.below(all.size())].id;
    traj.segments.push_back(cur);
    int last_turn = 0;  // 0 none, -1 left, +1 right
    for (int step = 1; step < spec.traj_len; ++step) {
      struct Move {
        std::int64_t seg;
        TurnClass turn;
      };
      std::vector<Move> moves;
      for (std::int64_t nxt : net.successors(cur))
        moves.push_back({nxt, classify_turn(net, cur, nxt)});
      if (moves.empty()) break;  // dead end (not possible on the grid)
      std::vector<Move> usable;
      for (const Move& m : moves)
        if (m.turn != TurnClass::kUturn) usable.push_back(m);
      if (usable.empty()) usable = moves;  // forced U-turn

      double pl = spec.p_left, pr = spec.p_right;
      const double turn_mass = spec.p_left + spec.p_right;
      if (last_turn == -1) {
        pl = turn_mass * spec.turn_inertia;
        pr = turn_mass * (1.0 - spec.turn_inertia);
      } else if (last_turn == 1) {
        pr = turn_mass * spec.turn_inertia;
        pl = turn_mass * (1.0 - spec.turn_inertia);
      }
      std::vector<double> weights;
      double total = 0.0;
      for (const Move& m : usable) {
        double w = 0.0;
        switch (m.turn) {
          case TurnClass::kStraight: w = spec.p_straight; break;
          case TurnClass::kLeft: w = pl; break;
          case TurnClass::kRight: w = pr; break;
          case TurnClass::kUturn: w = 1.0; break;  // only when forced
        }
        weights.push_back(w);
        total += w;
      }
      std::size_t pick = usable.size() - 1;
      if (total > 0.0) {
        double r = rng.uniform() * total;
        for (std::size_t i = 0; i < usable.size(); ++i) {
          r -= weights[i];
          if (r <= 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.below(usable.size());
      }
      cur = usable[pick].seg;
      if (usable[pick].turn == TurnClass::kLeft) last_turn = -1;
      if (usable[pick].turn == TurnClass::kRight) last_turn = 1;
      traj.segments.push_back(cur);
    }

    // GPS emissions along the traversed geometry
    const double mlat = deg2rad(1.0) * kEarthRadiusM;
    double emitted_at = 0.0;
    double cum_start = 0.0;
    int k = 0;
    for (std::size_t si = 0; si < traj.segments.size(); ++si) {
      const RoadSegment& seg = net.segment(traj.segments[si]);
      const double seg_len = seg.length_m;
      while (emitted_at < cum_start + seg_len) {
        const double along = emitted_at - cum_start;
        const double geo_len = polyline_length_m(seg.geometry);
        LonLat p = point_along_polyline(seg.geometry,
                                        seg_len > 0 ? along * geo_len / seg_len : 0.0);
        p.lon += rng.normal() * spec.gps_noise_sigma_m /
                 (mlat * std::cos(deg2rad(p.lat)));
        p.lat += rng.normal() * spec.gps_noise_sigma_m / mlat;
        GpsRecord r;
        r.vehicle_id = traj.vehicle_id;
        r.t = t0 + static_cast<std::int64_t>(
                       std::llround(static_cast<double>(k) * spec.gps_interval_s));
        r.lon = p.lon;
        r.lat = p.lat;
        traj.gps.push_back(r);
        traj.gps_truth.push_back(seg.id);
        ++k;
        emitted_at += spec.speed_mps * spec.gps_interval_s;
      }
      cum_start += seg_len;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

inline void write_gps_csv(std::ostream& os, const std::vector<SynthTrajectory>& trajs) {
  os << "id,time,lon,lat\n";
  for (const SynthTrajectory& t : trajs) {
    for (const GpsRecord& r : t.gps) {
      // epoch seconds back to "YYYY-MM-DD HH:MM:SS"
      const std::int64_t days = r.t / 86400;
      std::int64_t rem = r.t % 86400;
      // civil date from days (inverse of days_from_civil)
      std::int64_t z = days + 719468;
      const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
      const unsigned doe = static_cast<unsigned>(z - era * 146097);
      const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
      const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
      const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
      const unsigned mp = (5 * doy + 2) / 153;
      const unsigned d = doy - (153 * mp + 2) / 5 + 1;
      const unsigned m = mp < 10 ? mp + 3 : mp - 9;
      const std::int64_t year = y + (m <= 2);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u %02lld:%02lld:%02lld",
                    static_cast<long long>(year), m, d,
                    static_cast<long long>(rem / 3600),
                    static_cast<long long>((rem % 3600) / 60),
                    static_cast<long long>(rem % 60));
      os << t.vehicle_id << "," << buf << "," << fmt_double(r.lon) << ","
         << fmt_double(r.lat) << "\n";
    }
  }
}

/// Ground-truth sequences in the matched-file format.
inline void write_truth_csv(std::ostream& os, const std::vector<SynthTrajectory>& trajs) {
  os << "vehicle_id,seq_index,segment_id\n";
  for (const SynthTrajectory& t : trajs)
    for (std::size_t i = 0; i < t.segments.size(); ++i)
      os << t.vehicle_id << "," << i << "," << t.segments[i] << "\n";
}

}  // namespace statvt
