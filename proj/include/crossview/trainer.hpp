#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "crossview/courier_env.hpp"
#include "crossview/losses.hpp"
#include "crossview/nn/optimizer.hpp"

namespace crossview {

enum class StageKind { training, adaptation, transfer };

inline const char* stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::training: return "training";
    case StageKind::adaptation: return "adaptation";
    case StageKind::transfer: return "transfer";
  }
  return "?";
}

struct StageConfig {
  StageKind kind = StageKind::training;
  std::vector<std::string> regions;
  ViewMode view_mode = ViewMode::BOTH;
  std::set<std::string> trainable;  // filled by validate_stage when empty
  int64_t env_steps = 2'000'000;
  CurriculumSchedule curriculum;
  LossWeights weights;
  int actors = 8;
  int unroll = 50;
  int batch = 16;
  uint64_t seed = 1;

  int learner_threads = 2;
  bool deterministic = false;  // one synchronous actor, single-threaded learner
  double lr0 = 0.001;
  double rmsprop_decay = 0.99;
  double rmsprop_eps = 1e-5;
  double grad_clip = 40.0;
  double p_ground = 0.5;
  bool view_dropout = true;  // when off under BOTH, ground logits always act
  std::string warm_start_locale;  // copy the target locale from this region
  double queue_timeout_sec = 120.0;

  int64_t updates() const {
    int64_t per = static_cast<int64_t>(batch) * unroll;
    return (env_steps + per - 1) / per;
  }
  const std::string& target_region() const {
    CV_REQUIRE(regions.size() == 1, "stage has no single target region");
    return regions.front();
  }
};

// Canonical stage factories following the three-stage transfer contract.
StageConfig make_training_stage(std::vector<std::string> train_regions, int64_t env_steps,
                                uint64_t seed);
StageConfig make_adaptation_stage(std::string target_region, int64_t env_steps, uint64_t seed);
StageConfig make_transfer_stage(std::string target_region, int64_t env_steps, uint64_t seed);

// Enforces the per-kind invariants and fills `trainable` if empty:
// training trains every partition; adaptation (aerial-only) and transfer
// (ground-only) train exactly the target locale.
void validate_stage(StageConfig& cfg, const nn::ParamStore<float>& store);

// Linear ramp d_start -> d_end over ramp_steps learner updates.
double curriculum_level(int64_t update_index, const CurriculumSchedule& s);

struct StageResult {
  int64_t updates = 0;
  int64_t env_steps_consumed = 0;
  int64_t actor_steps_produced = 0;
  int64_t episodes = 0;
  double last_reward_mean = 0;
  double last_success_rate = 0;
};

// Runs one stage: actors stream fixed-length segments, the learner replays
// them under current parameters, applies masked RMSProp updates and publishes
// snapshots. Metrics go to `metrics_csv_path` (one row per update).
StageResult run_stage(const RenderContext& ctx, nn::ParamStore<float>& params,
                      const AgentConfig& acfg, const EnvConfig& ecfg, StageConfig cfg,
                      const std::string& metrics_csv_path);

// Replays one recorded segment under `params`, accumulating gradients scaled
// by `scale` into `grads` (only partitions in `trainable`). Exposed for tests.
struct ReplayStats {
  double loss_total = 0, loss_rl = 0, loss_embed = 0, loss_distill = 0, loss_heading = 0;
  double entropy = 0, mean_ratio = 0;

  void add(const ReplayStats& o) {
    loss_total += o.loss_total;
    loss_rl += o.loss_rl;
    loss_embed += o.loss_embed;
    loss_distill += o.loss_distill;
    loss_heading += o.loss_heading;
    entropy += o.entropy;
    mean_ratio += o.mean_ratio;
  }
  void scale_by(double s) {
    loss_total *= s;
    loss_rl *= s;
    loss_embed *= s;
    loss_distill *= s;
    loss_heading *= s;
    entropy *= s;
    mean_ratio *= s;
  }
};

ReplayStats replay_segment(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                           const Trajectory& traj, const LossWeights& weights,
                           const std::set<std::string>& trainable,
                           nn::GradBuffer<float>& grads, float scale);

// Finished-episode statistics shared by all actors of a stage.
class EpisodeSink {
 public:
  void push(double reward, int goals_assigned, int goals_completed) {
    std::lock_guard<std::mutex> lock(m_);
    ++episodes_;
    reward_sum_ += reward;
    assigned_ += goals_assigned;
    completed_ += goals_completed;
    ++win_episodes_;
    win_reward_sum_ += reward;
    win_assigned_ += goals_assigned;
    win_completed_ += goals_completed;
  }

  struct Window {
    int64_t episodes = 0;
    double reward_mean = 0;
    double success_rate = 0;
  };

  // Mean reward / success since the previous call (one metrics row).
  Window take_window() {
    std::lock_guard<std::mutex> lock(m_);
    Window w;
    w.episodes = win_episodes_;
    if (win_episodes_ > 0) w.reward_mean = win_reward_sum_ / win_episodes_;
    if (win_assigned_ > 0)
      w.success_rate = static_cast<double>(win_completed_) / win_assigned_;
    win_episodes_ = 0;
    win_reward_sum_ = 0;
    win_assigned_ = 0;
    win_completed_ = 0;
    return w;
  }

  int64_t total_episodes() const { return episodes_; }
  double total_reward_sum() const { return reward_sum_; }

 private:
  std::mutex m_;
  int64_t episodes_ = 0, assigned_ = 0, completed_ = 0;
  double reward_sum_ = 0;
  int64_t win_episodes_ = 0, win_assigned_ = 0, win_completed_ = 0;
  double win_reward_sum_ = 0;
};

// One actor: owns one env per region, rolls the published snapshot, emits
// fixed-length segments. Region rotation happens when an episode boundary
// coincides with a segment start.
class Actor {
 public:
  Actor(const RenderContext& ctx, const AgentConfig& acfg, const EnvConfig& ecfg,
        const StageConfig& cfg, int actor_id, EpisodeSink* sink);

  Trajectory next_segment(const nn::ParamStore<float>& params, double max_goal_distance);

  // Read after the actor thread has been joined.
  int64_t steps_produced() const { return steps_produced_; }

 private:
  const RenderContext& ctx_;
  AgentConfig acfg_;
  StageConfig cfg_;
  EpisodeSink* sink_;
  std::vector<std::unique_ptr<CourierEnv>> envs_;  // one per region
  size_t env_idx_ = 0;
  Rng rng_;
  Observation pending_obs_;
  AgentState state_;
  int prev_action_ = -1;
  double prev_reward_ = 0;
  bool episode_open_ = false;
  int64_t steps_produced_ = 0;

  void begin_episode(double max_goal_distance);
};

// Checkpoints carry the agent architecture so they are self-describing.
void save_agent_checkpoint(const nn::ParamStore<float>& store, const AgentConfig& acfg,
                           const std::string& path);
std::pair<nn::ParamStore<float>, AgentConfig> load_agent_checkpoint(const std::string& path);

}  // namespace crossview
