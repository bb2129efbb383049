#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "statvt/common.hpp"
#include "statvt/roadnet.hpp"

namespace statvt {

/** One bounded shortest-path record between two intersection nodes. */
struct UbodtEntry {
  std::int64_t origin = 0;       // n_o
  std::int64_t destination = 0;  // n_d
  std::int64_t next_node = 0;    // second node on the path
  std::int64_t next_edge = 0;    // first segment on the path
  std::int64_t prev_node = 0;    // penultimate node
  double distance = 0.0;         // exact shortest-path meters
};

inline bool operator==(const UbodtEntry& a, const UbodtEntry& b) {
  return a.origin == b.origin && a.destination == b.destination &&
         a.next_node == b.next_node && a.next_edge == b.next_edge &&
         a.prev_node == b.prev_node && a.distance == b.distance;
}

/**
 * Upper bounded origin-destination table: every node pair whose shortest-path
 * distance is within delta gets exactly one entry. Zero-length (o, o) pairs
 * are not stored; same-node routing is distance 0 implicitly.
 */
class Ubodt {
 public:
  static Ubodt build(const RoadNetwork& net, double delta_m) {
    if (!(delta_m > 0.0)) fail("ubodt delta must be > 0");
    Ubodt t;
    t.delta_ = delta_m;

    // node graph: min-length segment per (from, to), tie to lower segment id
    struct Arc {
      std::int64_t to;
      std::int64_t seg;
      double w;
    };
    std::map<std::int64_t, std::vector<Arc>> adj;
    {
      std::map<std::pair<std::int64_t, std::int64_t>, std::pair<double, std::int64_t>> best;
      for (const RoadSegment& s : net.segments()) {
        auto key = std::make_pair(s.from_node, s.to_node);
        auto it = best.find(key);
        if (it == best.end() || s.length_m < it->second.first ||
            (s.length_m == it->second.first && s.id < it->second.second)) {
          best[key] = {s.length_m, s.id};
        }
      }
      for (const auto& [key, val] : best)
        adj[key.first].push_back({key.second, val.second, val.first});
    }

    for (const auto& [origin, _] : adj) {
      single_source(origin, adj, delta_m, &t.entries_);
    }
    std::sort(t.entries_.begin(), t.entries_.end(),
              [](const UbodtEntry& a, const UbodtEntry& b) {
                return std::tie(a.origin, a.destination) < std::tie(b.origin, b.destination);
              });
    t.rebuild_index();
    return t;
  }

  double delta() const { return delta_; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<UbodtEntry>& entries() const { return entries_; }

  /// The unique entry for (origin, destination), or nullptr when out of bound.
  const UbodtEntry* lookup(std::int64_t origin, std::int64_t destination) const {
    auto it = index_.find({origin, destination});
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  /**
   * Segment ids along the stored shortest path origin -> destination, following
   * next_node/next_edge hops. Empty when origin == destination; absent pair
   * yields nullopt-like empty with ok=false via the bool return.
   */
  bool path_segments(std::int64_t origin, std::int64_t destination,
                     std::vector<std::int64_t>* out) const {
    out->clear();
    std::int64_t cur = origin;
    while (cur != destination) {
      const UbodtEntry* e = lookup(cur, destination);
      if (e == nullptr) return false;
      out->push_back(e->next_edge);
      cur = e->next_node;
    }
    return true;
  }

  // CSV: origin,destination,next_node,next_edge,prev_node,distance
  void save_csv(std::ostream& os) const {
    os << "origin,destination,next_node,next_edge,prev_node,distance\n";
    for (const UbodtEntry& e : entries_) {
      os << e.origin << "," << e.destination << "," << e.next_node << ","
         << e.next_edge << "," << e.prev_node << "," << fmt_double(e.distance)
         << "\n";
    }
  }

  static Ubodt load_csv(std::istream& is, double delta_m = 0.0) {
    std::string line;
    if (!std::getline(is, line) ||
        trim(line) != "origin,destination,next_node,next_edge,prev_node,distance")
      fail("ubodt file: unexpected header");
    Ubodt t;
    t.delta_ = delta_m;
    while (std::getline(is, line)) {
      if (trim(line).empty()) continue;
      const auto f = split(trim(line), ',');
      UbodtEntry e;
      if (f.size() != 6 || !parse_int64(f[0], &e.origin) ||
          !parse_int64(f[1], &e.destination) || !parse_int64(f[2], &e.next_node) ||
          !parse_int64(f[3], &e.next_edge) || !parse_int64(f[4], &e.prev_node) ||
          !parse_double(f[5], &e.distance))
        fail("ubodt file: malformed row: " + line);
      t.entries_.push_back(e);
      if (e.distance > t.delta_) t.delta_ = e.distance;
    }
    t.rebuild_index();
    return t;
  }

 private:
  template <typename AdjMap>
  static void single_source(std::int64_t origin, const AdjMap& adj, double delta_m,
                            std::vector<UbodtEntry>* out) {
    struct QItem {
      double dist;
      std::int64_t node;
      bool operator>(const QItem& o) const {
        return std::tie(dist, node) > std::tie(o.dist, o.node);
      }
    };
    std::unordered_map<std::int64_t, double> dist;
    std::unordered_map<std::int64_t, UbodtEntry> rec;
    std::priority_queue<QItem, std::vector<QItem>, std::greater<QItem>> pq;
    dist[origin] = 0.0;
    pq.push({0.0, origin});
    while (!pq.empty()) {
      const QItem top = pq.top();
      pq.pop();
      auto dit = dist.find(top.node);
      if (dit == dist.end() || top.dist > dit->second) continue;  // stale
      if (top.node != origin) out->push_back(rec[top.node]);
      auto ait = adj.find(top.node);
      if (ait == adj.end()) continue;
      for (const auto& arc : ait->second) {
        const double nd = top.dist + arc.w;
        if (nd > delta_m) continue;
        auto it = dist.find(arc.to);
        if (it != dist.end() && it->second <= nd) continue;
        dist[arc.to] = nd;
        UbodtEntry e;
        e.origin = origin;
        e.destination = arc.to;
        e.distance = nd;
        e.prev_node = top.node;
        if (top.node == origin) {
          e.next_node = arc.to;
          e.next_edge = arc.seg;
        } else {
          e.next_node = rec[top.node].next_node;
          e.next_edge = rec[top.node].next_edge;
        }
        rec[arc.to] = e;
        pq.push({nd, arc.to});
      }
    }
  }

  struct PairHash {
    std::size_t operator()(const std::pair<std::int64_t, std::int64_t>& p) const {
      std::uint64_t h = fnv1a(&p.first, sizeof(p.first));
      return static_cast<std::size_t>(fnv1a(&p.second, sizeof(p.second), h));
    }
  };

  void rebuild_index() {
    index_.clear();
    index_.reserve(entries_.size() * 2);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto k = std::make_pair(entries_[i].origin, entries_[i].destination);
      if (!index_.emplace(k, i).second)
        fail("ubodt: duplicate (origin, destination) pair");
    }
  }

  double delta_ = 0.0;
  std::vector<UbodtEntry> entries_;  // sorted by (origin, destination)
  std::unordered_map<std::pair<std::int64_t, std::int64_t>, std::size_t, PairHash> index_;
};

}  // namespace statvt
