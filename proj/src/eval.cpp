#include "crossview/eval.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "crossview/losses.hpp"

namespace crossview {

namespace {

ViewMode mode_from_string(const std::string& s) {
  if (s == "both") return ViewMode::BOTH;
  if (s == "ground") return ViewMode::GROUND_ONLY;
  if (s == "aerial") return ViewMode::AERIAL_ONLY;
  throw io_error("unknown view mode '" + s + "'");
}

// Ensures a locale partition exists for `region`; fresh and deterministic
// when missing.
const nn::ParamStore<float>* with_locale(const nn::ParamStore<float>& params,
                                         const AgentConfig& acfg, const std::string& region,
                                         nn::ParamStore<float>& scratch, bool* was_fresh) {
  *was_fresh = false;
  if (params.has_partition(locale_partition(region))) return &params;
  scratch = params;
  add_locale_partition(scratch, acfg, region,
                       derive_seed(0xE7A1u, std::hash<std::string>{}(region)));
  *was_fresh = true;
  return &scratch;
}

EvalSeedResult run_seed(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                        const RenderContext& ctx, int region_idx, const std::string& region,
                        const EnvConfig& ecfg, const EvalOptions& opts, uint64_t seed,
                        double max_goal_distance) {
  EvalSeedResult out;
  out.seed = seed;
  CourierEnv env(ctx, region_idx, ecfg, derive_seed(seed, 0xE17u));
  Rng rng(derive_seed(seed, 0xAC7u));
  int64_t assigned = 0, completed = 0;
  for (int e = 0; e < opts.episodes; ++e) {
    Observation obs = env.reset(max_goal_distance);
    AgentState state = init_state(acfg, opts.mode);
    int prev_action = -1;
    double prev_reward = 0;
    while (env.episode_active()) {
      nn::Tape<float> tape(false);
      nn::ParamBinder<float> bind(tape);
      auto sv = inject_state(tape, state);
      auto fwd = agent_forward(tape, bind, params, acfg, region, obs, sv, opts.mode,
                               prev_action, prev_reward);
      View v = opts.mode == ViewMode::BOTH
                   ? view_dropout_select(rng, opts.p_ground, fwd, opts.mode)
                   : (opts.mode == ViewMode::AERIAL_ONLY ? View::aerial : View::ground);
      auto logits =
          logits_array(tape, v == View::ground ? fwd.logits_ground : fwd.logits_aerial);
      Action a = act(logits, rng, opts.greedy);
      auto res = env.step(a);
      state = extract_state(tape, sv);
      prev_action = static_cast<int>(a);
      prev_reward = res.reward;
      obs = std::move(res.observation);
    }
    out.episodes.push_back(
        EvalEpisode{env.episode_reward(), env.goals_assigned(), env.goals_completed()});
    assigned += env.goals_assigned();
    completed += env.goals_completed();
    out.mean_reward += env.episode_reward();
  }
  out.mean_reward /= opts.episodes;
  out.success_rate = assigned > 0 ? static_cast<double>(completed) / assigned : 0.0;
  return out;
}

void mean_and_stderr(const std::vector<double>& xs, double* mean, double* se) {
  *mean = 0;
  *se = 0;
  if (xs.empty()) return;
  for (double x : xs) *mean += x;
  *mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return;
  double var = 0;
  for (double x : xs) var += (x - *mean) * (x - *mean);
  var /= static_cast<double>(xs.size() - 1);
  *se = std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

EvalReport evaluate(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                    const RenderContext& ctx, const std::string& region, const EnvConfig& ecfg,
                    const EvalOptions& opts) {
  CV_REQUIRE(opts.episodes > 0 && !opts.seeds.empty(), "evaluate: empty protocol");
  int region_idx = ctx.graph().region_index(region);
  CV_REQUIRE(region_idx >= 0, "evaluate: unknown region '" + region + "'");

  EvalReport report;
  report.region = region;
  report.mode = opts.mode;
  report.greedy = opts.greedy;
  report.episodes_per_seed = opts.episodes;

  nn::ParamStore<float> scratch;
  const nn::ParamStore<float>* use =
      with_locale(params, acfg, region, scratch, &report.locale_was_fresh);

  double maxd = opts.max_goal_distance > 0
                    ? opts.max_goal_distance
                    : ctx.graph().regions[static_cast<size_t>(region_idx)].diagonal();

  report.per_seed.resize(opts.seeds.size());
  std::vector<std::thread> workers;
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  size_t stride = std::max<size_t>(1, (opts.seeds.size() + hw - 1) / hw);
  for (size_t w0 = 0; w0 < opts.seeds.size(); w0 += stride) {
    size_t w1 = std::min(opts.seeds.size(), w0 + stride);
    workers.emplace_back([&, w0, w1]() {
      for (size_t i = w0; i < w1; ++i)
        report.per_seed[i] = run_seed(*use, acfg, ctx, region_idx, region, ecfg, opts,
                                      opts.seeds[i], maxd);
    });
  }
  for (auto& t : workers) t.join();

  std::vector<double> rewards, successes;
  for (const auto& s : report.per_seed) {
    rewards.push_back(s.mean_reward);
    successes.push_back(s.success_rate);
  }
  mean_and_stderr(rewards, &report.mean_reward, &report.reward_stderr);
  mean_and_stderr(successes, &report.mean_success, &report.success_stderr);
  return report;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["region"] = region;
  j["mode"] = view_mode_name(mode);
  j["greedy"] = greedy;
  j["episodes_per_seed"] = episodes_per_seed;
  j["locale_was_fresh"] = locale_was_fresh;
  j["mean_reward"] = mean_reward;
  j["reward_stderr"] = reward_stderr;
  j["mean_success"] = mean_success;
  j["success_stderr"] = success_stderr;
  auto seeds = nlohmann::ordered_json::array();
  for (const auto& s : per_seed) {
    nlohmann::ordered_json sj;
    sj["seed"] = s.seed;
    sj["mean_reward"] = s.mean_reward;
    sj["success_rate"] = s.success_rate;
    auto eps = nlohmann::ordered_json::array();
    for (const auto& e : s.episodes)
      eps.push_back({{"reward", e.reward},
                     {"goals_assigned", e.goals_assigned},
                     {"goals_completed", e.goals_completed}});
    sj["episodes"] = std::move(eps);
    seeds.push_back(std::move(sj));
  }
  j["per_seed"] = std::move(seeds);
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::ordered_json& j) {
  EvalReport r;
  r.region = j.at("region").get<std::string>();
  r.mode = mode_from_string(j.at("mode").get<std::string>());
  r.greedy = j.at("greedy").get<bool>();
  r.episodes_per_seed = j.at("episodes_per_seed").get<int>();
  r.locale_was_fresh = j.at("locale_was_fresh").get<bool>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.reward_stderr = j.at("reward_stderr").get<double>();
  r.mean_success = j.at("mean_success").get<double>();
  r.success_stderr = j.at("success_stderr").get<double>();
  for (const auto& sj : j.at("per_seed")) {
    EvalSeedResult s;
    s.seed = sj.at("seed").get<uint64_t>();
    s.mean_reward = sj.at("mean_reward").get<double>();
    s.success_rate = sj.at("success_rate").get<double>();
    for (const auto& ej : sj.at("episodes"))
      s.episodes.push_back(EvalEpisode{ej.at("reward").get<double>(),
                                       ej.at("goals_assigned").get<int>(),
                                       ej.at("goals_completed").get<int>()});
    r.per_seed.push_back(std::move(s));
  }
  return r;
}

void EvalReport::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write eval report: " + path);
  f << to_json().dump(1) << "\n";
}

EvalReport EvalReport::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open eval report: " + path);
  nlohmann::ordered_json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw io_error(std::string("unparsable eval report: ") + e.what());
  }
  return from_json(j);
}

double sign_test_p_value(int wins, int n) {
  CV_REQUIRE(wins >= 0 && wins <= n, "sign test: bad counts");
  if (n == 0) return 1.0;
  // exact tail of Binomial(n, 1/2)
  double p = 0;
  for (int k = wins; k <= n; ++k) {
    double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    p += std::exp(logc - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

CompareResult compare(const EvalReport& a, const EvalReport& b) {
  CV_REQUIRE(a.region == b.region, "compare: reports from different regions");
  CV_REQUIRE(a.per_seed.size() == b.per_seed.size() && !a.per_seed.empty(),
             "compare: seed lists differ");
  CompareResult r;
  r.n = static_cast<int>(a.per_seed.size());
  for (size_t i = 0; i < a.per_seed.size(); ++i) {
    double diff = a.per_seed[i].mean_reward - b.per_seed[i].mean_reward;
    r.per_seed_diff.push_back(diff);
    if (diff > 0)
      ++r.a_wins;
    else if (diff < 0)
      ++r.b_wins;
    else
      ++r.ties;
  }
  r.sign_test_p = sign_test_p_value(r.a_wins, r.a_wins + r.b_wins);
  constexpr double eps = 1e-9;
  r.mean_ratio = (a.mean_reward + eps) / (b.mean_reward + eps);
  return r;
}

nlohmann::ordered_json CompareResult::to_json() const {
  return {{"n", n},
          {"a_wins", a_wins},
          {"b_wins", b_wins},
          {"ties", ties},
          {"sign_test_p", sign_test_p},
          {"mean_ratio", mean_ratio},
          {"per_seed_diff", per_seed_diff}};
}

double mean_policy_kl(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                      const RenderContext& ctx, const std::string& region,
                      const EnvConfig& ecfg, int n_states, uint64_t seed) {
  int region_idx = ctx.graph().region_index(region);
  CV_REQUIRE(region_idx >= 0, "mean_policy_kl: unknown region");
  nn::ParamStore<float> scratch;
  bool fresh = false;
  const nn::ParamStore<float>* use = with_locale(params, acfg, region, scratch, &fresh);

  CourierEnv env(ctx, region_idx, ecfg, derive_seed(seed, 0x3Du));
  Rng rng(derive_seed(seed, 0x5Eu));
  double maxd = ctx.graph().regions[static_cast<size_t>(region_idx)].diagonal();
  Observation obs = env.reset(maxd);
  AgentState state = init_state(acfg, ViewMode::BOTH);
  int prev_action = -1;
  double prev_reward = 0;

  double total = 0;
  for (int s = 0; s < n_states; ++s) {
    if (!env.episode_active()) {
      obs = env.reset(maxd);
      state = init_state(acfg, ViewMode::BOTH);
      prev_action = -1;
      prev_reward = 0;
    }
    nn::Tape<float> tape(false);
    nn::ParamBinder<float> bind(tape);
    auto sv = inject_state(tape, state);
    auto fwd = agent_forward(tape, bind, *use, acfg, region, obs, sv, ViewMode::BOTH,
                             prev_action, prev_reward);
    auto kl = kl_policy_loss(tape, fwd.logits_ground, fwd.logits_aerial);
    total += static_cast<double>(tape.val(kl)[0]);

    View v = view_dropout_select(rng, 0.5, fwd, ViewMode::BOTH);
    auto logits = logits_array(tape, v == View::ground ? fwd.logits_ground : fwd.logits_aerial);
    Action a = act(logits, rng);
    auto res = env.step(a);
    state = extract_state(tape, sv);
    prev_action = static_cast<int>(a);
    prev_reward = res.reward;
    obs = std::move(res.observation);
  }
  return total / n_states;
}

}  // namespace crossview
