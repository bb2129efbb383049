#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "statvt/roadnet.hpp"

#include "json.hpp"

namespace statvt {

namespace detail {

inline nlohmann::json segment_coords(const RoadNetwork& net, std::int64_t id) {
  nlohmann::json line = nlohmann::json::array();
  for (const LonLat& p : net.segment(id).geometry)
    line.push_back({p.lon, p.lat});
  return line;
}

inline nlohmann::json role_feature(const RoadNetwork& net,
                                   const std::vector<std::int64_t>& seq,
                                   const std::string& role, const std::string& stroke) {
  nlohmann::json geometry;
  if (seq.size() == 1) {
    geometry = {{"type", "LineString"}, {"coordinates", segment_coords(net, seq[0])}};
  } else {
    nlohmann::json lines = nlohmann::json::array();
    for (std::int64_t id : seq) lines.push_back(segment_coords(net, id));
    geometry = {{"type", "MultiLineString"}, {"coordinates", lines}};
  }
  return nlohmann::json{{"type", "Feature"},
                        {"geometry", geometry},
                        {"properties", {{"role", role}, {"stroke", stroke}}}};
}

}  // namespace detail

/**
 * FeatureCollection with the history (purple), target (green), and predicted
 * (red) traversals as line features over the segment geometries.
 */
inline nlohmann::json export_geojson(const RoadNetwork& net,
                                     const std::vector<std::int64_t>& history,
                                     const std::vector<std::int64_t>& target,
                                     const std::vector<std::int64_t>& predicted) {
  for (const auto* seq : {&history, &target, &predicted})
    for (std::int64_t id : *seq) net.segment(id);  // existence check
  nlohmann::json features = nlohmann::json::array();
  features.push_back(detail::role_feature(net, history, "history", "#800080"));
  features.push_back(detail::role_feature(net, target, "target", "#008000"));
  features.push_back(detail::role_feature(net, predicted, "predicted", "#FF0000"));
  return nlohmann::json{{"type", "FeatureCollection"}, {"features", features}};
}

}  // namespace statvt
