#pragma once

#include <cmath>
#include <vector>

#include "statvt/common.hpp"

namespace statvt {

inline constexpr double kEarthRadiusM = 6371000.0;

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
};

inline bool operator==(const LonLat& a, const LonLat& b) {
  return a.lon == b.lon && a.lat == b.lat;
}

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Great-circle distance in meters on a 6,371,000 m sphere.
inline double haversine_m(const LonLat& a, const LonLat& b) {
  const double lat1 = deg2rad(a.lat);
  const double lat2 = deg2rad(b.lat);
  const double dlat = lat2 - lat1;
  const double dlon = deg2rad(b.lon - a.lon);
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

/// Local equirectangular projection: meters east/north of `ref`.
struct LocalXY {
  double x = 0.0;
  double y = 0.0;
};

inline LocalXY to_local(const LonLat& p, const LonLat& ref) {
  const double mlat = deg2rad(1.0) * kEarthRadiusM;
  return {(p.lon - ref.lon) * mlat * std::cos(deg2rad(ref.lat)),
          (p.lat - ref.lat) * mlat};
}

inline LonLat from_local(const LocalXY& p, const LonLat& ref) {
  const double mlat = deg2rad(1.0) * kEarthRadiusM;
  return {ref.lon + p.x / (mlat * std::cos(deg2rad(ref.lat))),
          ref.lat + p.y / mlat};
}

struct PolylineProjection {
  double perp_dist_m = 0.0;  ///< point-to-polyline distance
  double offset_m = 0.0;     ///< distance from polyline start to the projection
  LonLat point;              ///< projected point on the polyline
};

/**
 * Closest point on a polyline, computed in a local plane around `p`.
 * Adequate at city scale; exact enough for candidate search and offsets.
 */
inline PolylineProjection project_to_polyline(const std::vector<LonLat>& poly,
                                              const LonLat& p) {
  if (poly.size() < 2) fail("polyline needs at least 2 points");
  const LonLat ref = p;
  PolylineProjection best;
  best.perp_dist_m = std::numeric_limits<double>::infinity();
  double cum = 0.0;
  LocalXY q = to_local(p, ref);
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const LocalXY a = to_local(poly[i], ref);
    const LocalXY b = to_local(poly[i + 1], ref);
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0) {
      t = ((q.x - a.x) * dx + (q.y - a.y) * dy) / len2;
      t = std::max(0.0, std::min(1.0, t));
    }
    const LocalXY c{a.x + t * dx, a.y + t * dy};
    const double d = std::hypot(q.x - c.x, q.y - c.y);
    if (d < best.perp_dist_m) {
      best.perp_dist_m = d;
      best.offset_m = cum + t * std::sqrt(len2);
      best.point = from_local(c, ref);
    }
    cum += std::sqrt(len2);
  }
  return best;
}

/// Polyline length in meters (local-plane basis matching project_to_polyline).
inline double polyline_length_m(const std::vector<LonLat>& poly) {
  if (poly.size() < 2) return 0.0;
  const LonLat ref = poly.front();
  double total = 0.0;
  LocalXY prev = to_local(poly.front(), ref);
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const LocalXY cur = to_local(poly[i], ref);
    total += std::hypot(cur.x - prev.x, cur.y - prev.y);
    prev = cur;
  }
  return total;
}

/// Point at `offset_m` along the polyline (clamped to the ends).
inline LonLat point_along_polyline(const std::vector<LonLat>& poly, double offset_m) {
  if (poly.size() < 2) fail("polyline needs at least 2 points");
  const LonLat ref = poly.front();
  double remaining = std::max(0.0, offset_m);
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const LocalXY a = to_local(poly[i], ref);
    const LocalXY b = to_local(poly[i + 1], ref);
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (remaining <= len || i + 2 == poly.size()) {
      const double t = len > 0.0 ? std::min(1.0, remaining / len) : 0.0;
      return from_local({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)}, ref);
    }
    remaining -= len;
  }
  return poly.back();
}

/// Heading of the a->b direction in degrees, 0 = east, counterclockwise.
inline double heading_deg(const LonLat& a, const LonLat& b) {
  const LocalXY v = to_local(b, a);
  return rad2deg(std::atan2(v.y, v.x));
}

/// Smallest signed angle difference b - a in (-180, 180].
inline double angle_diff_deg(double a, double b) {
  double d = std::fmod(b - a, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

}  // namespace statvt
