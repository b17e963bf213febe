#include "crossview/citygraph.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include <json.hpp>

namespace crossview {

namespace {

// Connectivity of one region's node set under the current adjacency.
bool region_connected(const std::vector<std::vector<uint32_t>>& adj,
                      const std::vector<uint32_t>& nodes) {
  if (nodes.empty()) return true;
  std::set<uint32_t> want(nodes.begin(), nodes.end());
  std::vector<uint32_t> stack = {nodes[0]};
  std::set<uint32_t> seen = {nodes[0]};
  while (!stack.empty()) {
    uint32_t n = stack.back();
    stack.pop_back();
    for (uint32_t m : adj[n])
      if (want.count(m) && seen.insert(m).second) stack.push_back(m);
  }
  return seen.size() == want.size();
}

void remove_edge(std::vector<std::vector<uint32_t>>& adj, uint32_t a, uint32_t b) {
  std::erase(adj[a], b);
  std::erase(adj[b], a);
}

void insert_edge(std::vector<std::vector<uint32_t>>& adj, uint32_t a, uint32_t b) {
  adj[a].insert(std::lower_bound(adj[a].begin(), adj[a].end(), b), b);
  adj[b].insert(std::lower_bound(adj[b].begin(), adj[b].end(), a), a);
}

}  // namespace

CityGraph generate_city(uint64_t seed, const CityGenConfig& c) {
  CV_REQUIRE(c.pitch > 0, "generate_city: pitch must be positive");
  CV_REQUIRE(c.jitter_frac >= 0 && c.jitter_frac < 0.5, "generate_city: jitter in [0, 0.5)");
  CV_REQUIRE(c.edge_removal >= 0 && c.edge_removal < 1, "generate_city: removal in [0, 1)");
  CV_REQUIRE(c.train_regions >= 1, "generate_city: need at least one training region");
  CV_REQUIRE(c.region_cells_x >= 8 && c.region_cells_y >= 8,
             "generate_city: regions must be at least 8x8 cells");
  CV_REQUIRE(c.landmark_density >= 0 && c.landmark_density <= 1,
             "generate_city: landmark density in [0, 1]");
  CV_REQUIRE(c.landmark_categories >= 1, "generate_city: need at least one landmark category");

  CityGraph g;
  g.seed = seed;
  g.config = c;
  Rng rng(mix_seed(seed));

  const int n_regions = c.train_regions + 1;
  const int nx = c.region_cells_x, ny = c.region_cells_y;
  const double span_x = (nx - 1) * c.pitch;

  for (int r = 0; r < n_regions; ++r) {
    RegionSpec region;
    region.name = r < c.train_regions ? "train" + std::to_string(r) : "heldout";
    region.role = r < c.train_regions ? RegionSpec::Role::train : RegionSpec::Role::heldout;
    const double ox = r * (span_x + c.region_gap);
    const uint32_t base = static_cast<uint32_t>(g.positions.size());

    for (int cy = 0; cy < ny; ++cy)
      for (int cx = 0; cx < nx; ++cx) {
        double jx = rng.uniform(-c.jitter_frac, c.jitter_frac) * c.pitch;
        double jy = rng.uniform(-c.jitter_frac, c.jitter_frac) * c.pitch;
        g.positions.push_back({ox + cx * c.pitch + jx, cy * c.pitch + jy});
        g.landmark.push_back(-1);
        g.region_of.push_back(r);
        region.node_ids.push_back(base + static_cast<uint32_t>(cy * nx + cx));
      }

    g.adjacency.resize(g.positions.size());
    std::vector<std::pair<uint32_t, uint32_t>> edges;
    for (int cy = 0; cy < ny; ++cy)
      for (int cx = 0; cx < nx; ++cx) {
        uint32_t id = base + static_cast<uint32_t>(cy * nx + cx);
        if (cx + 1 < nx) edges.emplace_back(id, id + 1);
        if (cy + 1 < ny) edges.emplace_back(id, id + static_cast<uint32_t>(nx));
      }
    for (auto [a, b] : edges) insert_edge(g.adjacency, a, b);

    // Drop edges while preserving connectivity; reshuffle and retry if a pass
    // cannot reach the target count.
    const int target = static_cast<int>(c.edge_removal * edges.size());
    bool done = target == 0;
    for (int attempt = 0; attempt < 5 && !done; ++attempt) {
      for (size_t i = edges.size(); i > 1; --i)
        std::swap(edges[i - 1], edges[rng.uniform_int(i)]);
      int removed = 0;
      std::vector<std::pair<uint32_t, uint32_t>> dropped;
      for (auto [a, b] : edges) {
        if (removed == target) break;
        remove_edge(g.adjacency, a, b);
        if (region_connected(g.adjacency, region.node_ids)) {
          ++removed;
          dropped.emplace_back(a, b);
        } else {
          insert_edge(g.adjacency, a, b);
        }
      }
      if (removed == target) {
        done = true;
      } else {
        for (auto [a, b] : dropped) insert_edge(g.adjacency, a, b);
      }
    }
    if (!done)
      throw contract_error("generate_city: edge removal of " +
                           std::to_string(c.edge_removal) + " would disconnect region '" +
                           region.name + "'");

    // Landmarks: a deterministic sample of region nodes.
    int n_marks = static_cast<int>(c.landmark_density * region.node_ids.size());
    std::vector<uint32_t> pool = region.node_ids;
    for (int k = 0; k < n_marks; ++k) {
      size_t j = k + rng.uniform_int(pool.size() - k);
      std::swap(pool[k], pool[j]);
      g.landmark[pool[k]] = static_cast<int16_t>(rng.uniform_int(c.landmark_categories));
    }

    region.min_x = region.max_x = g.positions[region.node_ids[0]].x;
    region.min_y = region.max_y = g.positions[region.node_ids[0]].y;
    for (uint32_t id : region.node_ids) {
      region.min_x = std::min(region.min_x, g.positions[id].x);
      region.max_x = std::max(region.max_x, g.positions[id].x);
      region.min_y = std::min(region.min_y, g.positions[id].y);
      region.max_y = std::max(region.max_y, g.positions[id].y);
    }
    g.regions.push_back(std::move(region));
  }

  validate_city(g);
  return g;
}

std::vector<NeighborInfo> neighbors(const CityGraph& g, uint32_t node) {
  CV_REQUIRE(node < g.positions.size(), "neighbors: unknown node id");
  std::vector<NeighborInfo> out;
  out.reserve(g.adjacency[node].size());
  for (uint32_t m : g.adjacency[node])
    out.push_back({m, bearing_deg(g.positions[node], g.positions[m]),
                   bird_flight_distance(g.positions[node], g.positions[m])});
  std::sort(out.begin(), out.end(),
            [](const NeighborInfo& a, const NeighborInfo& b) {
              return a.bearing_deg < b.bearing_deg;
            });
  return out;
}

GoalSample sample_goal(const CityGraph& g, int region_idx, uint32_t from,
                       double min_distance, double max_distance, Rng& rng) {
  CV_REQUIRE(region_idx >= 0 && region_idx < static_cast<int>(g.regions.size()),
             "sample_goal: bad region index");
  CV_REQUIRE(max_distance > min_distance, "sample_goal: max_distance must exceed tolerance");
  const RegionSpec& region = g.regions[static_cast<size_t>(region_idx)];
  CV_REQUIRE(g.region_of[from] == region_idx, "sample_goal: 'from' not in region");

  Vec2 p = g.positions[from];
  std::vector<uint32_t> eligible;
  uint32_t farthest = from;
  double far_d = -1;
  for (uint32_t id : region.node_ids) {
    double d = bird_flight_distance(p, g.positions[id]);
    if (d > min_distance && d <= max_distance) eligible.push_back(id);
    if (d > far_d) {
      far_d = d;
      farthest = id;
    }
  }
  if (eligible.empty()) return {farthest, true};
  return {eligible[rng.uniform_int(eligible.size())], false};
}

void validate_city(const CityGraph& g) {
  const double pitch = g.config.pitch;
  CV_REQUIRE(g.positions.size() == g.adjacency.size() &&
                 g.positions.size() == g.landmark.size() &&
                 g.positions.size() == g.region_of.size(),
             "city: inconsistent array sizes");

  double total_len = 0;
  int n_edges = 0;
  for (uint32_t a = 0; a < g.positions.size(); ++a)
    for (uint32_t b : g.adjacency[a]) {
      if (b <= a) continue;
      double len = bird_flight_distance(g.positions[a], g.positions[b]);
      CV_REQUIRE(len <= 2 * pitch, "city: edge longer than 2x pitch");
      CV_REQUIRE(g.region_of[a] == g.region_of[b], "city: edge crosses regions");
      total_len += len;
      ++n_edges;
    }
  CV_REQUIRE(n_edges > 0, "city: no edges");
  double mean_len = total_len / n_edges;
  CV_REQUIRE(std::abs(mean_len - pitch) <= 0.2 * pitch,
             "city: mean edge length deviates more than 20% from pitch");

  for (size_t r = 0; r < g.regions.size(); ++r) {
    const RegionSpec& region = g.regions[r];
    CV_REQUIRE(!region.node_ids.empty(), "city: empty region");
    CV_REQUIRE(region_connected(g.adjacency, region.node_ids),
               "city: region '" + region.name + "' is disconnected");
    for (uint32_t id : region.node_ids) {
      CV_REQUIRE(g.region_of[id] == static_cast<int>(r), "city: region membership mismatch");
      CV_REQUIRE(region.contains(g.positions[id]), "city: node outside region bounds");
    }
    for (size_t s = 0; s < r; ++s) {
      const RegionSpec& other = g.regions[s];
      bool overlap = region.min_x <= other.max_x && other.min_x <= region.max_x &&
                     region.min_y <= other.max_y && other.min_y <= region.max_y;
      CV_REQUIRE(!overlap, "city: region bounding boxes overlap");
    }
  }
}

std::string city_to_json(const CityGraph& g) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["seed"] = g.seed;
  j["config"] = {{"pitch", g.config.pitch},
                 {"jitter_frac", g.config.jitter_frac},
                 {"edge_removal", g.config.edge_removal},
                 {"region_cells_x", g.config.region_cells_x},
                 {"region_cells_y", g.config.region_cells_y},
                 {"train_regions", g.config.train_regions},
                 {"landmark_density", g.config.landmark_density},
                 {"landmark_categories", g.config.landmark_categories},
                 {"region_gap", g.config.region_gap}};
  auto nodes = nlohmann::ordered_json::array();
  for (uint32_t i = 0; i < g.positions.size(); ++i)
    nodes.push_back({i, g.positions[i].x, g.positions[i].y});
  j["nodes"] = std::move(nodes);
  auto edges = nlohmann::ordered_json::array();
  for (uint32_t a = 0; a < g.positions.size(); ++a)
    for (uint32_t b : g.adjacency[a])
      if (b > a) edges.push_back({a, b});
  j["edges"] = std::move(edges);
  auto marks = nlohmann::ordered_json::array();
  for (uint32_t i = 0; i < g.landmark.size(); ++i)
    if (g.landmark[i] >= 0) marks.push_back({i, g.landmark[i]});
  j["landmarks"] = std::move(marks);
  auto regions = nlohmann::ordered_json::array();
  for (const RegionSpec& r : g.regions)
    regions.push_back(
        {{"name", r.name},
         {"role", r.role == RegionSpec::Role::train ? "train" : "heldout"},
         {"bounds", {r.min_x, r.min_y, r.max_x, r.max_y}},
         {"nodes", r.node_ids}});
  j["regions"] = std::move(regions);
  return j.dump(1);
}

CityGraph city_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw io_error(std::string("unparsable city json: ") + e.what());
  }
  if (j.value("version", -1) != 1) throw io_error("unsupported city json version");

  CityGraph g;
  g.seed = j.at("seed").get<uint64_t>();
  const auto& c = j.at("config");
  g.config.pitch = c.at("pitch").get<double>();
  g.config.jitter_frac = c.at("jitter_frac").get<double>();
  g.config.edge_removal = c.at("edge_removal").get<double>();
  g.config.region_cells_x = c.at("region_cells_x").get<int>();
  g.config.region_cells_y = c.at("region_cells_y").get<int>();
  g.config.train_regions = c.at("train_regions").get<int>();
  g.config.landmark_density = c.at("landmark_density").get<double>();
  g.config.landmark_categories = c.at("landmark_categories").get<int>();
  g.config.region_gap = c.at("region_gap").get<double>();

  const auto& nodes = j.at("nodes");
  g.positions.resize(nodes.size());
  g.adjacency.resize(nodes.size());
  g.landmark.assign(nodes.size(), -1);
  g.region_of.assign(nodes.size(), -1);
  for (const auto& n : nodes) {
    uint32_t id = n.at(0).get<uint32_t>();
    if (id >= g.positions.size()) throw io_error("city json: node id out of range");
    g.positions[id] = {n.at(1).get<double>(), n.at(2).get<double>()};
  }
  for (const auto& e : j.at("edges"))
    insert_edge(g.adjacency, e.at(0).get<uint32_t>(), e.at(1).get<uint32_t>());
  for (const auto& m : j.at("landmarks"))
    g.landmark[m.at(0).get<uint32_t>()] = m.at(1).get<int16_t>();
  int idx = 0;
  for (const auto& r : j.at("regions")) {
    RegionSpec region;
    region.name = r.at("name").get<std::string>();
    region.role = r.at("role").get<std::string>() == "train" ? RegionSpec::Role::train
                                                             : RegionSpec::Role::heldout;
    const auto& b = r.at("bounds");
    region.min_x = b.at(0).get<double>();
    region.min_y = b.at(1).get<double>();
    region.max_x = b.at(2).get<double>();
    region.max_y = b.at(3).get<double>();
    region.node_ids = r.at("nodes").get<std::vector<uint32_t>>();
    for (uint32_t id : region.node_ids) g.region_of[id] = idx;
    g.regions.push_back(std::move(region));
    ++idx;
  }
  validate_city(g);
  return g;
}

}  // namespace crossview
