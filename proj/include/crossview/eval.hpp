#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "crossview/agent.hpp"
#include "crossview/courier_env.hpp"
#include "crossview/nn/param_store.hpp"

namespace crossview {

struct EvalOptions {
  int episodes = 20;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  bool greedy = false;
  ViewMode mode = ViewMode::GROUND_ONLY;
  double max_goal_distance = 0;  // 0 = region diagonal
  double p_ground = 0.5;         // only used under BOTH
};

struct EvalEpisode {
  double reward = 0;
  int goals_assigned = 0;
  int goals_completed = 0;
};

struct EvalSeedResult {
  uint64_t seed = 0;
  double mean_reward = 0;
  double success_rate = 0;
  std::vector<EvalEpisode> episodes;
};

struct EvalReport {
  std::string region;
  ViewMode mode = ViewMode::GROUND_ONLY;
  bool greedy = false;
  int episodes_per_seed = 0;
  bool locale_was_fresh = false;  // the region's locale was default-initialized
  std::vector<EvalSeedResult> per_seed;
  double mean_reward = 0, reward_stderr = 0;
  double mean_success = 0, success_stderr = 0;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::ordered_json& j);
  void save(const std::string& path) const;
  static EvalReport load(const std::string& path);
};

// Rolls full episodes with no parameter updates and aggregates mean reward and
// success rate with standard errors across seeds. A missing locale partition
// for the region is replaced by a fresh deterministic one (and reported).
EvalReport evaluate(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                    const RenderContext& ctx, const std::string& region, const EnvConfig& ecfg,
                    const EvalOptions& opts);

struct CompareResult {
  int n = 0;
  int a_wins = 0, b_wins = 0, ties = 0;
  double sign_test_p = 1.0;  // one-sided: a > b per seed
  double mean_ratio = 1.0;   // mean_a / mean_b
  std::vector<double> per_seed_diff;

  nlohmann::ordered_json to_json() const;
};

// Paired per-seed comparison of mean rewards with an exact one-sided sign test.
CompareResult compare(const EvalReport& a, const EvalReport& b);

// Exact one-sided binomial tail: P[Binomial(n, 1/2) >= wins].
double sign_test_p_value(int wins, int n);

// Mean KL(p_ground || p_aerial) over `n_states` BOTH-view rollout states in
// `region`; the cross-view consistency measure.
double mean_policy_kl(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                      const RenderContext& ctx, const std::string& region,
                      const EnvConfig& ecfg, int n_states, uint64_t seed);

}  // namespace crossview
