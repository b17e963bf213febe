#pragma once

#include <string>

#include "crossview/agent.hpp"
#include "crossview/losses.hpp"
#include "crossview/trainer.hpp"

namespace crossview {

// Everything a full run needs, mirrored by the TOML config file.
struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs";

  CityGenConfig city;
  EnvConfig env;
  AgentConfig agent;  // raster dims are derived from `env`, not the file
  LossWeights weights;

  int64_t train_steps = 2'000'000;
  int64_t adapt_steps = 500'000;
  int64_t transfer_steps = 500'000;
  int actors = 8;
  int unroll = 50;
  int batch = 16;
  int learner_threads = 2;
  bool deterministic = false;
  double lr0 = 0.001;
  double rmsprop_decay = 0.99;
  double rmsprop_eps = 1e-5;
  double grad_clip = 40.0;
  double p_ground = 0.5;

  // d_end = 0 and ramp_steps = 0 mean "region diagonal" and "half the
  // stage's updates" respectively, resolved when stages are assembled.
  CurriculumSchedule curriculum{150.0, 0.0, 0, true};

  int eval_episodes = 20;
  int eval_seeds = 5;
  bool eval_greedy = false;

  static RunConfig defaults() { return RunConfig{}; }
  static RunConfig from_toml(const std::string& text);
  static RunConfig from_toml_file(const std::string& path);
  std::string to_toml() const;
  std::string config_hash() const;  // content hash of the canonical TOML
};

}  // namespace crossview
