#include "crossview/run_config.hpp"

#include <fstream>
#include <sstream>

#include "crossview/toml_lite.hpp"

namespace crossview {

RunConfig RunConfig::from_toml(const std::string& text) {
  auto doc = toml::parse(text);
  RunConfig c;

  const auto& run = toml::section_or_empty(doc, "run");
  c.seed = static_cast<uint64_t>(toml::get_int(run, "seed", 1));
  c.out_dir = toml::get_string(run, "out_dir", c.out_dir);

  const auto& city = toml::section_or_empty(doc, "city");
  c.city.pitch = toml::get_double(city, "pitch", c.city.pitch);
  c.city.jitter_frac = toml::get_double(city, "jitter_frac", c.city.jitter_frac);
  c.city.edge_removal = toml::get_double(city, "edge_removal", c.city.edge_removal);
  c.city.region_cells_x = static_cast<int>(toml::get_int(city, "region_cells_x", c.city.region_cells_x));
  c.city.region_cells_y = static_cast<int>(toml::get_int(city, "region_cells_y", c.city.region_cells_y));
  c.city.train_regions = static_cast<int>(toml::get_int(city, "train_regions", c.city.train_regions));
  c.city.landmark_density = toml::get_double(city, "landmark_density", c.city.landmark_density);
  c.city.landmark_categories =
      static_cast<int>(toml::get_int(city, "landmark_categories", c.city.landmark_categories));
  c.city.region_gap = toml::get_double(city, "region_gap", c.city.region_gap);

  const auto& env = toml::section_or_empty(doc, "env");
  c.env.episode_len = static_cast<int>(toml::get_int(env, "episode_len", c.env.episode_len));
  c.env.goal_tolerance = toml::get_double(env, "goal_tolerance", c.env.goal_tolerance);
  c.env.early_radius = toml::get_double(env, "early_radius", c.env.early_radius);
  c.env.early_fraction = toml::get_double(env, "early_fraction", c.env.early_fraction);
  c.env.reward_scale = toml::get_double(env, "reward_scale", c.env.reward_scale);
  c.env.facing_half_angle = toml::get_double(env, "facing_half_angle", c.env.facing_half_angle);
  c.env.ground_rays = static_cast<int>(toml::get_int(env, "ground_rays", c.env.ground_rays));
  c.env.ground_fov = toml::get_double(env, "ground_fov", c.env.ground_fov);
  c.env.ground_range = toml::get_double(env, "ground_range", c.env.ground_range);
  c.env.street_width = toml::get_double(env, "street_width", c.env.street_width);
  c.env.ray_step = toml::get_double(env, "ray_step", c.env.ray_step);
  c.env.landmark_corridor = toml::get_double(env, "landmark_corridor", c.env.landmark_corridor);
  c.env.aerial_size = static_cast<int>(toml::get_int(env, "aerial_size", c.env.aerial_size));
  c.env.aerial_extent = toml::get_double(env, "aerial_extent", c.env.aerial_extent);
  c.env.landmark_categories = c.city.landmark_categories;

  const auto& agent = toml::section_or_empty(doc, "agent");
  c.agent = AgentConfig::for_env(c.env);
  c.agent.enc_hidden = static_cast<int>(toml::get_int(agent, "enc_hidden", c.agent.enc_hidden));
  c.agent.embed_dim = static_cast<int>(toml::get_int(agent, "embed_dim", c.agent.embed_dim));
  c.agent.locale_hidden =
      static_cast<int>(toml::get_int(agent, "locale_hidden", c.agent.locale_hidden));
  c.agent.policy_hidden =
      static_cast<int>(toml::get_int(agent, "policy_hidden", c.agent.policy_hidden));
  c.agent.aerial_conv = toml::get_bool(agent, "aerial_conv", c.agent.aerial_conv);
  c.agent.conv_channels =
      static_cast<int>(toml::get_int(agent, "conv_channels", c.agent.conv_channels));
  c.agent.feed_prev_action_reward =
      toml::get_bool(agent, "feed_prev_action_reward", c.agent.feed_prev_action_reward);

  const auto& losses = toml::section_or_empty(doc, "losses");
  c.weights.lambda_embed = toml::get_double(losses, "lambda_embed", c.weights.lambda_embed);
  c.weights.gamma_distill = toml::get_double(losses, "gamma_distill", c.weights.gamma_distill);
  c.weights.discount = toml::get_double(losses, "discount", c.weights.discount);
  c.weights.value_coef = toml::get_double(losses, "value_coef", c.weights.value_coef);
  c.weights.entropy_coef = toml::get_double(losses, "entropy_coef", c.weights.entropy_coef);
  c.weights.heading_coef = toml::get_double(losses, "heading_coef", c.weights.heading_coef);
  c.weights.is_clip = toml::get_double(losses, "is_clip", c.weights.is_clip);
  c.weights.squared_embed = toml::get_bool(losses, "squared_embed", c.weights.squared_embed);
  c.weights.stop_ground_grad =
      toml::get_bool(losses, "stop_ground_grad", c.weights.stop_ground_grad);

  const auto& train = toml::section_or_empty(doc, "train");
  c.train_steps = toml::get_int(train, "train_steps", c.train_steps);
  c.adapt_steps = toml::get_int(train, "adapt_steps", c.adapt_steps);
  c.transfer_steps = toml::get_int(train, "transfer_steps", c.transfer_steps);
  c.actors = static_cast<int>(toml::get_int(train, "actors", c.actors));
  c.unroll = static_cast<int>(toml::get_int(train, "unroll", c.unroll));
  c.batch = static_cast<int>(toml::get_int(train, "batch", c.batch));
  c.learner_threads = static_cast<int>(toml::get_int(train, "learner_threads", c.learner_threads));
  c.deterministic = toml::get_bool(train, "deterministic", c.deterministic);
  c.lr0 = toml::get_double(train, "lr", c.lr0);
  c.rmsprop_decay = toml::get_double(train, "rmsprop_decay", c.rmsprop_decay);
  c.rmsprop_eps = toml::get_double(train, "rmsprop_eps", c.rmsprop_eps);
  c.grad_clip = toml::get_double(train, "grad_clip", c.grad_clip);
  c.p_ground = toml::get_double(train, "p_ground", c.p_ground);
  c.curriculum.d_start = toml::get_double(train, "curriculum_start", c.curriculum.d_start);
  c.curriculum.d_end = toml::get_double(train, "curriculum_end", c.curriculum.d_end);
  c.curriculum.ramp_steps =
      static_cast<int>(toml::get_int(train, "curriculum_ramp", c.curriculum.ramp_steps));
  c.curriculum.enabled = toml::get_bool(train, "curriculum", c.curriculum.enabled);

  const auto& eval = toml::section_or_empty(doc, "eval");
  c.eval_episodes = static_cast<int>(toml::get_int(eval, "episodes", c.eval_episodes));
  c.eval_seeds = static_cast<int>(toml::get_int(eval, "seeds", c.eval_seeds));
  c.eval_greedy = toml::get_bool(eval, "greedy", c.eval_greedy);
  return c;
}

RunConfig RunConfig::from_toml_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_toml(ss.str());
}

std::string RunConfig::to_toml() const {
  std::ostringstream o;
  o.precision(17);
  o << "[run]\n";
  o << "seed = " << seed << "\n";
  o << "out_dir = \"" << out_dir << "\"\n\n";
  o << "[city]\n";
  o << "pitch = " << city.pitch << "\n";
  o << "jitter_frac = " << city.jitter_frac << "\n";
  o << "edge_removal = " << city.edge_removal << "\n";
  o << "region_cells_x = " << city.region_cells_x << "\n";
  o << "region_cells_y = " << city.region_cells_y << "\n";
  o << "train_regions = " << city.train_regions << "\n";
  o << "landmark_density = " << city.landmark_density << "\n";
  o << "landmark_categories = " << city.landmark_categories << "\n";
  o << "region_gap = " << city.region_gap << "\n\n";
  o << "[env]\n";
  o << "episode_len = " << env.episode_len << "\n";
  o << "goal_tolerance = " << env.goal_tolerance << "\n";
  o << "early_radius = " << env.early_radius << "\n";
  o << "early_fraction = " << env.early_fraction << "\n";
  o << "reward_scale = " << env.reward_scale << "\n";
  o << "facing_half_angle = " << env.facing_half_angle << "\n";
  o << "ground_rays = " << env.ground_rays << "\n";
  o << "ground_fov = " << env.ground_fov << "\n";
  o << "ground_range = " << env.ground_range << "\n";
  o << "street_width = " << env.street_width << "\n";
  o << "ray_step = " << env.ray_step << "\n";
  o << "landmark_corridor = " << env.landmark_corridor << "\n";
  o << "aerial_size = " << env.aerial_size << "\n";
  o << "aerial_extent = " << env.aerial_extent << "\n\n";
  o << "[agent]\n";
  o << "enc_hidden = " << agent.enc_hidden << "\n";
  o << "embed_dim = " << agent.embed_dim << "\n";
  o << "locale_hidden = " << agent.locale_hidden << "\n";
  o << "policy_hidden = " << agent.policy_hidden << "\n";
  o << "aerial_conv = " << (agent.aerial_conv ? "true" : "false") << "\n";
  o << "conv_channels = " << agent.conv_channels << "\n";
  o << "feed_prev_action_reward = " << (agent.feed_prev_action_reward ? "true" : "false")
    << "\n\n";
  o << "[losses]\n";
  o << "lambda_embed = " << weights.lambda_embed << "\n";
  o << "gamma_distill = " << weights.gamma_distill << "\n";
  o << "discount = " << weights.discount << "\n";
  o << "value_coef = " << weights.value_coef << "\n";
  o << "entropy_coef = " << weights.entropy_coef << "\n";
  o << "heading_coef = " << weights.heading_coef << "\n";
  o << "is_clip = " << weights.is_clip << "\n";
  o << "squared_embed = " << (weights.squared_embed ? "true" : "false") << "\n";
  o << "stop_ground_grad = " << (weights.stop_ground_grad ? "true" : "false") << "\n\n";
  o << "[train]\n";
  o << "train_steps = " << train_steps << "\n";
  o << "adapt_steps = " << adapt_steps << "\n";
  o << "transfer_steps = " << transfer_steps << "\n";
  o << "actors = " << actors << "\n";
  o << "unroll = " << unroll << "\n";
  o << "batch = " << batch << "\n";
  o << "learner_threads = " << learner_threads << "\n";
  o << "deterministic = " << (deterministic ? "true" : "false") << "\n";
  o << "lr = " << lr0 << "\n";
  o << "rmsprop_decay = " << rmsprop_decay << "\n";
  o << "rmsprop_eps = " << rmsprop_eps << "\n";
  o << "grad_clip = " << grad_clip << "\n";
  o << "p_ground = " << p_ground << "\n";
  o << "curriculum = " << (curriculum.enabled ? "true" : "false") << "\n";
  o << "curriculum_start = " << curriculum.d_start << "\n";
  o << "curriculum_end = " << curriculum.d_end << "\n";
  o << "curriculum_ramp = " << curriculum.ramp_steps << "\n\n";
  o << "[eval]\n";
  o << "episodes = " << eval_episodes << "\n";
  o << "seeds = " << eval_seeds << "\n";
  o << "greedy = " << (eval_greedy ? "true" : "false") << "\n";
  return o.str();
}

std::string RunConfig::config_hash() const {
  std::string text = to_toml();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace crossview
