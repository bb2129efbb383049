#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/geo.hpp"
#include "statvt/vocab.hpp"

namespace statvt {

/** A directed stretch of road between two intersections. */
struct RoadSegment {
  std::int64_t id = 0;
  std::int64_t from_node = 0;
  std::int64_t to_node = 0;
  double length_m = 0.0;
  std::vector<LonLat> geometry;  // >= 2 points, start near from_node, end near to_node
};

/// Uniform grid over segment bounding boxes for radius queries.
class SpatialGrid {
 public:
  void build(const std::vector<RoadSegment>& segments, double cell_deg) {
    cell_deg_ = cell_deg;
    cells_.clear();
    for (std::size_t i = 0; i < segments.size(); ++i) {
      double lo_lon = 1e9, hi_lon = -1e9, lo_lat = 1e9, hi_lat = -1e9;
      for (const LonLat& p : segments[i].geometry) {
        lo_lon = std::min(lo_lon, p.lon);
        hi_lon = std::max(hi_lon, p.lon);
        lo_lat = std::min(lo_lat, p.lat);
        hi_lat = std::max(hi_lat, p.lat);
      }
      const int x0 = cell_of(lo_lon), x1 = cell_of(hi_lon);
      const int y0 = cell_of(lo_lat), y1 = cell_of(hi_lat);
      for (int x = x0; x <= x1; ++x)
        for (int y = y0; y <= y1; ++y) cells_[key(x, y)].push_back(i);
    }
  }

  /// Candidate segment indices whose bbox cell range intersects the query box.
  std::vector<std::size_t> query(const LonLat& p, double radius_m) const {
    const double dlat = radius_m / (deg2rad(1.0) * kEarthRadiusM);
    const double coslat = std::max(0.01, std::cos(deg2rad(p.lat)));
    const double dlon = dlat / coslat;
    const int x0 = cell_of(p.lon - dlon), x1 = cell_of(p.lon + dlon);
    const int y0 = cell_of(p.lat - dlat), y1 = cell_of(p.lat + dlat);
    std::vector<std::size_t> out;
    for (int x = x0; x <= x1; ++x) {
      for (int y = y0; y <= y1; ++y) {
        auto it = cells_.find(key(x, y));
        if (it == cells_.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  int cell_of(double deg) const { return static_cast<int>(std::floor(deg / cell_deg_)); }
  static std::int64_t key(int x, int y) {
    return (static_cast<std::int64_t>(x) << 32) ^ static_cast<std::uint32_t>(y);
  }
  double cell_deg_ = 0.0025;
  std::unordered_map<std::int64_t, std::vector<std::size_t>> cells_;
};

/**
 * Segment-level directed road network: vertices are road segments, and
 * (u, w) is an edge exactly when u.to_node == w.from_node. Immutable after
 * construction and safe to share across threads.
 */
class RoadNetwork {
 public:
  /// Node-position consistency tolerance in degrees (~1 m).
  static constexpr double kNodeTolDeg = 1e-5;

  static RoadNetwork build(std::vector<RoadSegment> segments) {
    if (segments.empty()) fail("edge list is empty");
    std::sort(segments.begin(), segments.end(),
              [](const RoadSegment& a, const RoadSegment& b) { return a.id < b.id; });
    RoadNetwork net;
    net.segments_ = std::move(segments);
    std::unordered_map<std::int64_t, LonLat> node_pos;
    for (std::size_t i = 0; i < net.segments_.size(); ++i) {
      const RoadSegment& s = net.segments_[i];
      if (i > 0 && net.segments_[i - 1].id == s.id)
        fail("duplicate segment id: " + std::to_string(s.id));
      if (s.length_m <= 0.0)
        fail("segment " + std::to_string(s.id) + " has non-positive length");
      if (s.geometry.size() < 2)
        fail("segment " + std::to_string(s.id) + " needs >= 2 geometry points");
      check_node(node_pos, s.from_node, s.geometry.front(), s.id);
      check_node(node_pos, s.to_node, s.geometry.back(), s.id);
      net.index_[s.id] = i;
    }
    // successor join on node ids
    std::unordered_map<std::int64_t, std::vector<std::size_t>> out_at_node;
    for (std::size_t i = 0; i < net.segments_.size(); ++i)
      out_at_node[net.segments_[i].from_node].push_back(i);
    net.succ_.resize(net.segments_.size());
    net.pred_.resize(net.segments_.size());
    for (std::size_t i = 0; i < net.segments_.size(); ++i) {
      auto it = out_at_node.find(net.segments_[i].to_node);
      if (it == out_at_node.end()) continue;
      for (std::size_t j : it->second) {
        net.succ_[i].push_back(net.segments_[j].id);
        net.pred_[j].push_back(net.segments_[i].id);
      }
    }
    for (auto& v : net.succ_) std::sort(v.begin(), v.end());
    for (auto& v : net.pred_) std::sort(v.begin(), v.end());
    net.grid_.build(net.segments_, 0.0025);
    return net;
  }

  const std::vector<RoadSegment>& segments() const { return segments_; }

  bool has_segment(std::int64_t id) const { return index_.count(id) > 0; }

  const RoadSegment& segment(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail("unknown segment id: " + std::to_string(id));
    return segments_[it->second];
  }

  /// Successor segment ids, sorted ascending.
  const std::vector<std::int64_t>& successors(std::int64_t id) const {
    return succ_[index_of(id)];
  }

  const std::vector<std::int64_t>& predecessors(std::int64_t id) const {
    return pred_[index_of(id)];
  }

  bool connected(std::int64_t u, std::int64_t w) const {
    const auto& s = successors(u);
    return std::binary_search(s.begin(), s.end(), w);
  }

  std::vector<std::int64_t> node_ids() const {
    std::vector<std::int64_t> out;
    out.reserve(segments_.size() * 2);
    for (const RoadSegment& s : segments_) {
      out.push_back(s.from_node);
      out.push_back(s.to_node);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Segment ids whose geometry lies within radius_m of p, sorted by id.
  std::vector<std::int64_t> segments_near(const LonLat& p, double radius_m) const {
    std::vector<std::int64_t> out;
    for (std::size_t i : grid_.query(p, radius_m)) {
      if (project_to_polyline(segments_[i].geometry, p).perp_dist_m <= radius_m)
        out.push_back(segments_[i].id);
    }
    return out;
  }

 private:
  static void check_node(std::unordered_map<std::int64_t, LonLat>& node_pos,
                         std::int64_t node, const LonLat& at, std::int64_t seg_id) {
    auto it = node_pos.find(node);
    if (it == node_pos.end()) {
      node_pos[node] = at;
      return;
    }
    if (std::abs(it->second.lon - at.lon) > kNodeTolDeg ||
        std::abs(it->second.lat - at.lat) > kNodeTolDeg) {
      fail("segment " + std::to_string(seg_id) + " references node " +
           std::to_string(node) + " away from its established position");
    }
  }

  std::size_t index_of(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail("unknown segment id: " + std::to_string(id));
    return it->second;
  }

  std::vector<RoadSegment> segments_;  // sorted by id
  std::unordered_map<std::int64_t, std::size_t> index_;
  std::vector<std::vector<std::int64_t>> succ_, pred_;
  SpatialGrid grid_;
};

/**
 * Induced subgraph over a set of segments plus their first-order neighbors.
 * Node order is deterministic: inputs in given order (first occurrence),
 * then the remaining neighbors sorted by id.
 */
struct LocalGraph {
  std::vector<std::int64_t> nodes;
  std::vector<std::vector<int>> out;  // adjacency by node index, sorted
  std::vector<std::vector<int>> in;

  int index_of(std::int64_t id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i] == id) return static_cast<int>(i);
    fail("segment not in local graph: " + std::to_string(id));
  }
};

inline LocalGraph local_subgraph(const RoadNetwork& net,
                                 const std::vector<std::int64_t>& segment_ids) {
  LocalGraph g;
  std::unordered_set<std::int64_t> seen;
  for (std::int64_t id : segment_ids) {
    net.segment(id);  // existence check
    if (seen.insert(id).second) g.nodes.push_back(id);
  }
  std::vector<std::int64_t> extra;
  for (std::int64_t id : segment_ids) {
    for (std::int64_t n : net.successors(id))
      if (seen.insert(n).second) extra.push_back(n);
    for (std::int64_t n : net.predecessors(id))
      if (seen.insert(n).second) extra.push_back(n);
  }
  std::sort(extra.begin(), extra.end());
  g.nodes.insert(g.nodes.end(), extra.begin(), extra.end());

  std::unordered_map<std::int64_t, int> idx;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    idx[g.nodes[i]] = static_cast<int>(i);
  g.out.resize(g.nodes.size());
  g.in.resize(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::int64_t s : net.successors(g.nodes[i])) {
      auto it = idx.find(s);
      if (it == idx.end()) continue;
      g.out[i].push_back(it->second);
      g.in[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(i));
    }
  }
  for (auto& v : g.out) std::sort(v.begin(), v.end());
  for (auto& v : g.in) std::sort(v.begin(), v.end());
  return g;
}

/**
 * Token-level binary adjacency: bits[i][j] = 1 iff the segments behind tokens
 * i, j are connected. PAD/BOS rows are all ones so a special predecessor
 * never constrains decoding.
 */
struct NeighborMask {
  int n_tokens = 0;
  std::vector<std::uint8_t> bits;  // row-major, n_tokens * n_tokens

  bool at(int i, int j) const {
    return bits[static_cast<std::size_t>(i) * n_tokens + j] != 0;
  }

  int row_popcount(int i) const {
    int c = 0;
    for (int j = 0; j < n_tokens; ++j) c += at(i, j) ? 1 : 0;
    return c;
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(&n_tokens, sizeof(n_tokens));
    return fnv1a(bits.data(), bits.size(), h);
  }
};

inline NeighborMask neighbor_mask(const RoadNetwork& net, const Vocabulary& vocab) {
  NeighborMask m;
  m.n_tokens = vocab.n_tokens();
  m.bits.assign(static_cast<std::size_t>(m.n_tokens) * m.n_tokens, 0);
  for (int j = 0; j < m.n_tokens; ++j) {
    m.bits[static_cast<std::size_t>(Vocabulary::kPad) * m.n_tokens + j] = 1;
    m.bits[static_cast<std::size_t>(Vocabulary::kBos) * m.n_tokens + j] = 1;
  }
  for (int i = Vocabulary::kFirstSegmentToken; i < m.n_tokens; ++i) {
    const std::int64_t seg = vocab.segment(i);
    if (!net.has_segment(seg))
      fail("vocabulary segment not in network: " + std::to_string(seg));
    for (std::int64_t s : net.successors(seg)) {
      if (!vocab.has_segment(s)) continue;  // neighbor outside the corpus vocabulary
      m.bits[static_cast<std::size_t>(i) * m.n_tokens + vocab.token(s)] = 1;
    }
  }
  return m;
}

// ---- edge-list CSV: id,from_node,to_node,length,geometry ----
// geometry: "lon lat;lon lat;..." in WGS84 decimal degrees.

inline std::string geometry_to_string(const std::vector<LonLat>& geom) {
  std::string out;
  for (std::size_t i = 0; i < geom.size(); ++i) {
    if (i) out += ";";
    out += fmt_double(geom[i].lon) + " " + fmt_double(geom[i].lat);
  }
  return out;
}

inline std::vector<LonLat> geometry_from_string(const std::string& s) {
  std::vector<LonLat> geom;
  for (const std::string& pair : split(s, ';')) {
    const auto xy = split(trim(pair), ' ');
    LonLat p;
    if (xy.size() != 2 || !parse_double(xy[0], &p.lon) || !parse_double(xy[1], &p.lat))
      fail("malformed geometry point: " + pair);
    geom.push_back(p);
  }
  return geom;
}

inline void write_edge_csv(std::ostream& os, const std::vector<RoadSegment>& segments) {
  os << "id,from_node,to_node,length,geometry\n";
  for (const RoadSegment& s : segments) {
    os << s.id << "," << s.from_node << "," << s.to_node << ","
       << fmt_double(s.length_m) << "," << geometry_to_string(s.geometry) << "\n";
  }
}

inline std::vector<RoadSegment> read_edge_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || trim(line) != "id,from_node,to_node,length,geometry")
    fail("edge list: expected header 'id,from_node,to_node,length,geometry'");
  std::vector<RoadSegment> out;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 5) fail("edge list: malformed row: " + line);
    RoadSegment s;
    if (!parse_int64(f[0], &s.id) || !parse_int64(f[1], &s.from_node) ||
        !parse_int64(f[2], &s.to_node) || !parse_double(f[3], &s.length_m))
      fail("edge list: malformed row: " + line);
    s.geometry = geometry_from_string(f[4]);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace statvt
