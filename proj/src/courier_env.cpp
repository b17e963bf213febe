#include "crossview/courier_env.hpp"

#include <algorithm>
#include <cmath>

namespace crossview {

namespace {
constexpr double kStreetLatticeRes = 0.5;

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  double vx = b.x - a.x, vy = b.y - a.y;
  double wx = p.x - a.x, wy = p.y - a.y;
  double vv = vx * vx + vy * vy;
  double t = vv > 0 ? std::clamp((wx * vx + wy * vy) / vv, 0.0, 1.0) : 0.0;
  double dx = wx - t * vx, dy = wy - t * vy;
  return std::hypot(dx, dy);
}
}  // namespace

RenderContext::RenderContext(const CityGraph& graph, const EnvConfig& cfg) : graph_(&graph) {
  double min_x = graph.positions[0].x, max_x = min_x;
  double min_y = graph.positions[0].y, max_y = min_y;
  for (const Vec2& p : graph.positions) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const double half_w = cfg.street_width / 2;
  const double pad = half_w + 2.0;
  origin_x_ = min_x - pad;
  origin_y_ = min_y - pad;
  inv_res_ = 1.0 / kStreetLatticeRes;
  grid_w_ = static_cast<int>((max_x + pad - origin_x_) * inv_res_) + 1;
  grid_h_ = static_cast<int>((max_y + pad - origin_y_) * inv_res_) + 1;
  street_.assign(static_cast<size_t>(grid_w_) * grid_h_, 0);

  // Stamp every edge's corridor onto the lattice.
  for (uint32_t a = 0; a < graph.positions.size(); ++a)
    for (uint32_t b : graph.adjacency[a]) {
      if (b <= a) continue;
      Vec2 pa = graph.positions[a], pb = graph.positions[b];
      double lo_x = std::min(pa.x, pb.x) - half_w, hi_x = std::max(pa.x, pb.x) + half_w;
      double lo_y = std::min(pa.y, pb.y) - half_w, hi_y = std::max(pa.y, pb.y) + half_w;
      int ix0 = std::max(0, static_cast<int>((lo_x - origin_x_) * inv_res_));
      int ix1 = std::min(grid_w_ - 1, static_cast<int>((hi_x - origin_x_) * inv_res_) + 1);
      int iy0 = std::max(0, static_cast<int>((lo_y - origin_y_) * inv_res_));
      int iy1 = std::min(grid_h_ - 1, static_cast<int>((hi_y - origin_y_) * inv_res_) + 1);
      for (int iy = iy0; iy <= iy1; ++iy)
        for (int ix = ix0; ix <= ix1; ++ix) {
          Vec2 p{origin_x_ + ix * kStreetLatticeRes, origin_y_ + iy * kStreetLatticeRes};
          if (point_segment_distance(p, pa, pb) <= half_w)
            street_[static_cast<size_t>(iy) * grid_w_ + ix] = 1;
        }
    }

  landmarks_.resize(graph.regions.size());
  for (uint32_t id = 0; id < graph.positions.size(); ++id)
    if (graph.landmark[id] >= 0)
      landmarks_[static_cast<size_t>(graph.region_of[id])].push_back(
          Landmark{graph.positions[id], graph.landmark[id]});
}

std::vector<float> render_ground(const RenderContext& ctx, const AgentPose& pose,
                                 const EnvConfig& cfg) {
  const CityGraph& g = ctx.graph();
  const int channels = cfg.ground_channels();
  std::vector<float> out(static_cast<size_t>(cfg.ground_dim()), 0.0f);
  const Vec2 origin = g.positions[pose.node];
  const int region = g.region_of[pose.node];

  // Landmarks near enough to matter for any ray.
  std::vector<RenderContext::Landmark> near;
  for (const auto& lm : ctx.region_landmarks(region))
    if (bird_flight_distance(lm.pos, origin) <= cfg.ground_range + cfg.landmark_corridor)
      near.push_back(lm);

  for (int r = 0; r < cfg.ground_rays; ++r) {
    double ang = pose.heading - cfg.ground_fov / 2 +
                 cfg.ground_fov * (r + 0.5) / cfg.ground_rays;
    double dx = std::sin(ang * M_PI / 180.0), dy = std::cos(ang * M_PI / 180.0);

    // March until the ray leaves the street corridor ("hits a building").
    double hit = cfg.ground_range;
    for (double t = cfg.ray_step; t <= cfg.ground_range; t += cfg.ray_step) {
      if (!ctx.on_street({origin.x + dx * t, origin.y + dy * t})) {
        hit = t - cfg.ray_step;
        break;
      }
    }

    float* ray = out.data() + static_cast<size_t>(r) * channels;
    ray[0] = static_cast<float>(1.0 / (1.0 + hit / g.config.pitch));  // inverse distance
    ray[channels - 1] = static_cast<float>(hit / cfg.ground_range);   // street opening

    // Nearest visible landmark within the ray corridor.
    double best = std::numeric_limits<double>::infinity();
    int best_cat = -1;
    for (const auto& lm : near) {
      double rx = lm.pos.x - origin.x, ry = lm.pos.y - origin.y;
      double along = rx * dx + ry * dy;
      double across = std::abs(rx * dy - ry * dx);
      if (along <= 0 || along > hit + cfg.landmark_corridor) continue;
      if (across > cfg.landmark_corridor) continue;
      if (along < best) {
        best = along;
        best_cat = lm.category;
      }
    }
    if (best_cat >= 0) ray[1 + best_cat] = 1.0f;
  }
  return out;
}

std::vector<float> render_aerial(const RenderContext& ctx, const AgentPose& pose,
                                 const EnvConfig& cfg) {
  const CityGraph& g = ctx.graph();
  const int W = cfg.aerial_size;
  const int channels = cfg.aerial_channels();
  std::vector<float> out(static_cast<size_t>(cfg.aerial_dim()), 0.0f);
  const Vec2 origin = g.positions[pose.node];
  const int region = g.region_of[pose.node];
  const double cell = cfg.aerial_extent / W;
  const double c = (W - 1) / 2.0;

  double h = pose.heading * M_PI / 180.0;
  Vec2 fwd{std::sin(h), std::cos(h)};
  Vec2 right{std::cos(h), -std::sin(h)};

  auto at = [&](int i, int j, int ch) -> float& {
    return out[(static_cast<size_t>(i) * W + j) * channels + ch];
  };

  // Street occupancy sampled at cell centers (crop rotated heading-up).
  for (int i = 0; i < W; ++i)
    for (int j = 0; j < W; ++j) {
      double u = (j - c) * cell;  // rightward
      double v = (c - i) * cell;  // forward
      Vec2 p{origin.x + u * right.x + v * fwd.x, origin.y + u * right.y + v * fwd.y};
      if (ctx.on_street(p)) at(i, j, 0) = 1.0f;
    }

  // Landmarks mapped into crop cells.
  for (const auto& lm : ctx.region_landmarks(region)) {
    double rx = lm.pos.x - origin.x, ry = lm.pos.y - origin.y;
    double u = rx * right.x + ry * right.y;
    double v = rx * fwd.x + ry * fwd.y;
    int j = static_cast<int>(std::lround(u / cell + c));
    int i = static_cast<int>(std::lround(c - v / cell));
    if (i >= 0 && i < W && j >= 0 && j < W) at(i, j, 1 + lm.category) = 1.0f;
  }

  // Agent marker at the center cell.
  int ci = static_cast<int>(c + 0.5);
  at(ci, ci, channels - 1) = 1.0f;
  return out;
}

std::array<float, 2> goal_encoding(Vec2 goal, const RegionSpec& region) {
  CV_REQUIRE(region.contains(goal), "goal_encoding: goal outside region bounds");
  auto lerp = [](double v, double lo, double hi) {
    return hi > lo ? 2.0 * (v - lo) / (hi - lo) - 1.0 : 0.0;
  };
  return {static_cast<float>(lerp(goal.x, region.min_x, region.max_x)),
          static_cast<float>(lerp(goal.y, region.min_y, region.max_y))};
}

CourierEnv::CourierEnv(const RenderContext& ctx, int region_idx, const EnvConfig& cfg,
                       uint64_t seed)
    : ctx_(&ctx), graph_(&ctx.graph()), region_(region_idx), cfg_(cfg), rng_(seed) {
  CV_REQUIRE(region_idx >= 0 && region_idx < static_cast<int>(graph_->regions.size()),
             "CourierEnv: bad region index");
  CV_REQUIRE(cfg.landmark_categories == graph_->config.landmark_categories,
             "CourierEnv: landmark channel count does not match the graph");
}

double CourierEnv::distance_to_goal() const {
  return bird_flight_distance(graph_->positions[pose_.node], graph_->positions[goal_]);
}

void CourierEnv::assign_new_goal() {
  GoalSample s = sample_goal(*graph_, region_, pose_.node, cfg_.goal_tolerance,
                             max_goal_distance_, rng_);
  if (s.fallback) ++fallback_warnings_;
  goal_ = s.node;
  goal_start_pos_ = graph_->positions[pose_.node];
  early_granted_ = false;
  ++goals_assigned_;
}

Observation CourierEnv::reset(double max_goal_distance) {
  CV_REQUIRE(max_goal_distance > cfg_.goal_tolerance,
             "reset: max goal distance must exceed the goal tolerance");
  const RegionSpec& region = graph_->regions[static_cast<size_t>(region_)];
  pose_.node = region.node_ids[rng_.uniform_int(region.node_ids.size())];
  pose_.heading = 22.5 * static_cast<double>(rng_.uniform_int(16));
  max_goal_distance_ = max_goal_distance;
  steps_ = 0;
  episode_reward_ = 0;
  goals_assigned_ = 0;
  goals_completed_ = 0;
  active_ = true;
  assign_new_goal();
  return observe();
}

Observation CourierEnv::reset_at(uint32_t node, double heading, uint32_t goal_node) {
  CV_REQUIRE(graph_->region_of[node] == region_ && graph_->region_of[goal_node] == region_,
             "reset_at: node/goal outside env region");
  pose_.node = node;
  pose_.heading = normalize_deg(heading);
  max_goal_distance_ = graph_->regions[static_cast<size_t>(region_)].diagonal();
  steps_ = 0;
  episode_reward_ = 0;
  goals_assigned_ = 1;
  goals_completed_ = 0;
  active_ = true;
  goal_ = goal_node;
  goal_start_pos_ = graph_->positions[node];
  early_granted_ = false;
  return observe();
}

StepResult CourierEnv::step(Action action) {
  CV_REQUIRE(active_, "step: environment not reset");
  CV_REQUIRE(steps_ < cfg_.episode_len, "step: episode already finished");

  StepResult res;
  switch (action) {
    case Action::LEFT_SMALL:
      pose_.heading = normalize_deg(pose_.heading - 22.5);
      break;
    case Action::RIGHT_SMALL:
      pose_.heading = normalize_deg(pose_.heading + 22.5);
      break;
    case Action::LEFT_LARGE:
      pose_.heading = normalize_deg(pose_.heading - 67.5);
      break;
    case Action::RIGHT_LARGE:
      pose_.heading = normalize_deg(pose_.heading + 67.5);
      break;
    case Action::FORWARD: {
      double best = cfg_.facing_half_angle + 1;
      double best_bearing = 361.0;
      uint32_t target = pose_.node;
      bool found = false;
      for (const NeighborInfo& nb : neighbors(*graph_, pose_.node)) {
        double diff = std::abs(angle_diff_deg(nb.bearing_deg, pose_.heading));
        if (diff > cfg_.facing_half_angle) continue;
        if (diff < best - 1e-12 ||
            (std::abs(diff - best) <= 1e-12 && nb.bearing_deg < best_bearing)) {
          best = diff;
          best_bearing = nb.bearing_deg;
          target = nb.node;
          found = true;
        }
      }
      if (found)
        pose_.node = target;
      else
        res.info.wasted_action = true;
      break;
    }
  }

  // Goal bookkeeping after the move.
  double goal_value =
      cfg_.reward_scale * bird_flight_distance(goal_start_pos_, graph_->positions[goal_]);
  double d = distance_to_goal();
  if (!early_granted_ && d <= cfg_.early_radius) {
    res.reward += cfg_.early_fraction * goal_value;
    early_granted_ = true;
  }
  if (d <= cfg_.goal_tolerance) {
    res.reward += goal_value;
    ++goals_completed_;
    res.info.goal_reached = true;
    assign_new_goal();
  }

  ++steps_;
  episode_reward_ += res.reward;
  res.episode_done = steps_ >= cfg_.episode_len;
  if (res.episode_done) active_ = false;
  res.info.goals_completed = goals_completed_;
  res.info.distance_to_goal = distance_to_goal();
  res.observation = observe();
  return res;
}

Observation CourierEnv::observe() const {
  Observation obs;
  obs.ground = render_ground(*ctx_, pose_, cfg_);
  obs.aerial = render_aerial(*ctx_, pose_, cfg_);
  if (cfg_.poison_ground)
    std::fill(obs.ground.begin(), obs.ground.end(), std::numeric_limits<float>::quiet_NaN());
  if (cfg_.poison_aerial)
    std::fill(obs.aerial.begin(), obs.aerial.end(), std::numeric_limits<float>::quiet_NaN());
  obs.goal = goal_encoding(graph_->positions[goal_],
                           graph_->regions[static_cast<size_t>(region_)]);
  double h = pose_.heading * M_PI / 180.0;
  obs.heading_target = {static_cast<float>(std::sin(h)), static_cast<float>(std::cos(h))};
  return obs;
}

}  // namespace crossview
