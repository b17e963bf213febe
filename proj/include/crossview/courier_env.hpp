#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "crossview/citygraph.hpp"
#include "crossview/rng.hpp"

namespace crossview {

enum class Action { FORWARD = 0, LEFT_SMALL = 1, RIGHT_SMALL = 2, LEFT_LARGE = 3, RIGHT_LARGE = 4 };
inline constexpr int kNumActions = 5;

struct EnvConfig {
  int episode_len = 1000;
  double goal_tolerance = 100.0;   // reach radius
  double early_radius = 200.0;     // early-reward ring
  double early_fraction = 0.5;     // of the goal reward, granted once per goal
  double reward_scale = 0.01;      // reward per unit of start->goal distance
  double facing_half_angle = 30.0; // FORWARD works within this cone

  // ground ray-strip renderer
  int ground_rays = 32;
  double ground_fov = 120.0;
  double ground_range = 60.0;
  double street_width = 6.0;       // full corridor width around an edge
  double ray_step = 0.75;
  double landmark_corridor = 3.0;  // half-width for landmark visibility

  // aerial crop renderer
  int aerial_size = 21;            // raster is W x W
  double aerial_extent = 105.0;    // crop side in units

  int landmark_categories = 8;     // channel count; must match the generator

  // test hooks: fill a modality with NaN to prove the other path never reads it
  bool poison_ground = false;
  bool poison_aerial = false;

  int ground_channels() const { return landmark_categories + 2; }
  int aerial_channels() const { return landmark_categories + 2; }
  int ground_dim() const { return ground_rays * ground_channels(); }
  int aerial_dim() const { return aerial_size * aerial_size * aerial_channels(); }
};

struct AgentPose {
  uint32_t node = 0;
  double heading = 0;  // degrees clockwise from North, in [0, 360)
};

struct Observation {
  std::vector<float> ground;             // [ray][channel]
  std::vector<float> aerial;             // [row][col][channel]
  std::array<float, 2> goal = {0, 0};    // region-normalized goal coords, [-1, 1]
  std::array<float, 2> heading_target = {0, 0};  // (sin, cos) of true heading
};

struct StepInfo {
  bool goal_reached = false;
  int goals_completed = 0;
  double distance_to_goal = 0;
  bool wasted_action = false;
};

struct StepResult {
  Observation observation;
  double reward = 0;
  bool episode_done = false;
  StepInfo info;
};

struct CurriculumSchedule {
  double d_start = 150.0;
  double d_end = 400.0;
  int ramp_steps = 1;   // learner updates over which the max distance ramps
  bool enabled = true;
};

// Immutable per-graph rendering acceleration: a street-occupancy lattice and
// per-region landmark lists. Shared read-only across envs.
class RenderContext {
 public:
  RenderContext(const CityGraph& graph, const EnvConfig& cfg);

  bool on_street(Vec2 p) const {
    int ix = static_cast<int>((p.x - origin_x_) * inv_res_);
    int iy = static_cast<int>((p.y - origin_y_) * inv_res_);
    if (ix < 0 || iy < 0 || ix >= grid_w_ || iy >= grid_h_) return false;
    return street_[static_cast<size_t>(iy) * grid_w_ + ix] != 0;
  }

  struct Landmark {
    Vec2 pos;
    int16_t category;
  };
  const std::vector<Landmark>& region_landmarks(int region_idx) const {
    return landmarks_[static_cast<size_t>(region_idx)];
  }

  const CityGraph& graph() const { return *graph_; }

 private:
  const CityGraph* graph_;
  double origin_x_, origin_y_, inv_res_;
  int grid_w_, grid_h_;
  std::vector<uint8_t> street_;
  std::vector<std::vector<Landmark>> landmarks_;
};

// Pure renderers; same (context, pose) always yields the same raster.
std::vector<float> render_ground(const RenderContext& ctx, const AgentPose& pose,
                                 const EnvConfig& cfg);
std::vector<float> render_aerial(const RenderContext& ctx, const AgentPose& pose,
                                 const EnvConfig& cfg);

// Affine map of a position into [-1, 1]^2 using the region bounds.
std::array<float, 2> goal_encoding(Vec2 goal, const RegionSpec& region);

// The courier task: fixed-length episodes over one region, with goal-distance
// proportional rewards and a single early reward per goal.
class CourierEnv {
 public:
  CourierEnv(const RenderContext& ctx, int region_idx, const EnvConfig& cfg, uint64_t seed);

  Observation reset(double max_goal_distance);
  StepResult step(Action action);

  // Deterministic reset used by scripted walkthrough tests and tools.
  Observation reset_at(uint32_t node, double heading, uint32_t goal_node);

  bool episode_active() const { return active_; }
  int steps_done() const { return steps_; }
  const AgentPose& pose() const { return pose_; }
  uint32_t goal_node() const { return goal_; }
  double episode_reward() const { return episode_reward_; }
  int goals_assigned() const { return goals_assigned_; }
  int goals_completed() const { return goals_completed_; }
  int goal_fallback_warnings() const { return fallback_warnings_; }
  int region_index() const { return region_; }
  double distance_to_goal() const;

 private:
  Observation observe() const;
  void assign_new_goal();

  const RenderContext* ctx_;
  const CityGraph* graph_;
  int region_;
  EnvConfig cfg_;
  Rng rng_;

  bool active_ = false;
  int steps_ = 0;
  AgentPose pose_;
  uint32_t goal_ = 0;
  Vec2 goal_start_pos_;   // agent position when the current goal was assigned
  bool early_granted_ = false;
  double max_goal_distance_ = 0;
  double episode_reward_ = 0;
  int goals_assigned_ = 0;
  int goals_completed_ = 0;
  int fallback_warnings_ = 0;
};

}  // namespace crossview
