#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crossview/check.hpp"
#include "crossview/rng.hpp"

namespace crossview {

struct Vec2 {
  double x = 0;
  double y = 0;
};

inline double bird_flight_distance(Vec2 a, Vec2 b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Degrees clockwise from North (+y), in [0, 360).
inline double bearing_deg(Vec2 from, Vec2 to) {
  double deg = std::atan2(to.x - from.x, to.y - from.y) * 180.0 / M_PI;
  if (deg < 0) deg += 360.0;
  return deg == 360.0 ? 0.0 : deg;
}

// Signed smallest difference a-b, in (-180, 180].
inline double angle_diff_deg(double a, double b) {
  double d = std::fmod(a - b + 540.0, 360.0) - 180.0;
  return d <= -180.0 ? d + 360.0 : d;
}

inline double normalize_deg(double a) {
  double d = std::fmod(a, 360.0);
  return d < 0 ? d + 360.0 : d;
}

struct CityGenConfig {
  double pitch = 10.0;          // grid spacing, meter-analog units
  double jitter_frac = 0.2;     // per-coordinate jitter, fraction of pitch, [0, 0.5)
  double edge_removal = 0.10;   // fraction of grid edges to drop per region
  int region_cells_x = 24;
  int region_cells_y = 24;
  int train_regions = 2;        // plus one held-out region
  double landmark_density = 0.15;
  int landmark_categories = 8;
  double region_gap = 50.0;     // spacing between region layouts
};

struct RegionSpec {
  enum class Role { train, heldout };

  std::string name;
  Role role = Role::train;
  double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  std::vector<uint32_t> node_ids;  // sorted ascending

  bool contains(Vec2 p) const {
    return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
  }
  Vec2 center() const { return {(min_x + max_x) / 2, (min_y + max_y) / 2}; }
  double diagonal() const { return std::hypot(max_x - min_x, max_y - min_y); }
};

struct NeighborInfo {
  uint32_t node;
  double bearing_deg;
  double distance;
};

struct CityGraph {
  uint64_t seed = 0;
  CityGenConfig config;
  std::vector<Vec2> positions;                // indexed by node id
  std::vector<std::vector<uint32_t>> adjacency;  // sorted neighbor lists
  std::vector<int16_t> landmark;              // -1 = none, else category id
  std::vector<RegionSpec> regions;
  std::vector<int> region_of;                 // node id -> region index

  int node_count() const { return static_cast<int>(positions.size()); }

  int region_index(const std::string& name) const {
    for (size_t i = 0; i < regions.size(); ++i)
      if (regions[i].name == name) return static_cast<int>(i);
    return -1;
  }
  const RegionSpec& region(const std::string& name) const {
    int i = region_index(name);
    CV_REQUIRE(i >= 0, "unknown region '" + name + "'");
    return regions[static_cast<size_t>(i)];
  }
};

// Deterministic procedural generation: a jittered grid per region with a
// fraction of edges removed while keeping every region connected.
CityGraph generate_city(uint64_t seed, const CityGenConfig& config);

// Neighbors of `node`, sorted by bearing.
std::vector<NeighborInfo> neighbors(const CityGraph& g, uint32_t node);

struct GoalSample {
  uint32_t node;
  bool fallback;  // no node in (min_distance, max_distance]; farthest returned
};

// Uniform over region nodes whose bird-flight distance from `from` lies in
// (min_distance, max_distance].
GoalSample sample_goal(const CityGraph& g, int region_idx, uint32_t from,
                       double min_distance, double max_distance, Rng& rng);

// Versioned JSON document; serializing the same graph twice is byte-identical.
std::string city_to_json(const CityGraph& g);
CityGraph city_from_json(const std::string& text);

// Throws if any type invariant is violated. Called after generation; also
// useful on graphs loaded from disk.
void validate_city(const CityGraph& g);

}  // namespace crossview
