#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "crossview/trainer.hpp"

using namespace crossview;

namespace {

struct TrainFixture {
  CityGraph graph;
  EnvConfig env;
  RenderContext ctx;
  AgentConfig agent;

  TrainFixture() : graph(make_graph()), env(make_env()), ctx(graph, env), agent(make_agent(env)) {}

  static CityGraph make_graph() {
    CityGenConfig c;
    c.region_cells_x = 10;
    c.region_cells_y = 10;
    c.train_regions = 2;
    c.landmark_categories = 4;
    return generate_city(5, c);
  }
  static EnvConfig make_env() {
    EnvConfig e;
    e.episode_len = 100;
    e.goal_tolerance = 30;
    e.early_radius = 60;
    e.ground_rays = 8;
    e.ground_range = 40;
    e.aerial_size = 5;
    e.aerial_extent = 50;
    e.landmark_categories = 4;
    return e;
  }
  static AgentConfig make_agent(const EnvConfig& e) {
    AgentConfig a = AgentConfig::for_env(e);
    a.enc_hidden = 16;
    a.embed_dim = 8;
    a.locale_hidden = 8;
    a.policy_hidden = 8;
    return a;
  }

  StageConfig small_stage(StageKind kind, int updates, uint64_t seed) const {
    StageConfig cfg;
    switch (kind) {
      case StageKind::training:
        cfg = make_training_stage({"train0", "train1"}, updates * 4 * 20, seed);
        break;
      case StageKind::adaptation:
        cfg = make_adaptation_stage("heldout", updates * 4 * 20, seed);
        break;
      case StageKind::transfer:
        cfg = make_transfer_stage("heldout", updates * 4 * 20, seed);
        break;
    }
    cfg.batch = 4;
    cfg.unroll = 20;
    cfg.actors = 2;
    cfg.learner_threads = 2;
    cfg.curriculum.d_start = 40;
    cfg.curriculum.d_end = 100;
    cfg.curriculum.ramp_steps = 4;
    return cfg;
  }

  std::string tmp(const std::string& name) const {
    auto dir = std::filesystem::temp_directory_path() / "cv_trainer_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("curriculum level interpolates and saturates") {
  CurriculumSchedule s{100, 300, 10, true};
  CHECK(curriculum_level(0, s) == doctest::Approx(100));
  CHECK(curriculum_level(5, s) == doctest::Approx(200));
  CHECK(curriculum_level(10, s) == doctest::Approx(300));
  CHECK(curriculum_level(1000, s) == doctest::Approx(300));
  s.enabled = false;
  CHECK(curriculum_level(0, s) == doctest::Approx(300));
}

TEST_CASE("stage validation enforces the three-stage contract") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1", "heldout"}, 1);

  auto train = make_training_stage({"train0", "train1"}, 1000, 1);
  validate_stage(train, params);
  CHECK(train.trainable.size() == params.partitions.size());

  auto adapt = make_adaptation_stage("heldout", 1000, 1);
  validate_stage(adapt, params);
  CHECK(adapt.trainable == std::set<std::string>{"locale/heldout"});

  auto bad_mode = make_adaptation_stage("heldout", 1000, 1);
  bad_mode.view_mode = ViewMode::BOTH;
  CHECK_THROWS_AS(validate_stage(bad_mode, params), contract_error);

  auto bad_trainable = make_transfer_stage("heldout", 1000, 1);
  bad_trainable.trainable = {"policy_core"};
  CHECK_THROWS_AS(validate_stage(bad_trainable, params), contract_error);

  auto missing = make_adaptation_stage("heldout", 1000, 1);
  auto no_locale = init_agent_params<float>(f.agent, {"train0"}, 1);
  CHECK_THROWS_AS(validate_stage(missing, no_locale), contract_error);
}

TEST_CASE("actor emits fixed-length segments with boundaries flagged inside") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 2);
  auto cfg = f.small_stage(StageKind::training, 4, 3);
  cfg.unroll = 30;  // episode_len 100: boundaries land mid-segment
  EpisodeSink sink;
  Actor actor(f.ctx, f.agent, f.env, cfg, 0, &sink);

  int boundaries = 0;
  for (int s = 0; s < 10; ++s) {
    auto traj = actor.next_segment(params, 80.0);
    CHECK(traj.length() == 30);
    for (const auto& st : traj.steps)
      if (st.episode_boundary_after) ++boundaries;
  }
  CHECK(boundaries == 3);  // 300 steps over episodes of 100
  CHECK(sink.total_episodes() == 3);
}

TEST_CASE("recorded behavior logits match a same-params replay") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 4);
  auto cfg = f.small_stage(StageKind::training, 1, 5);
  EpisodeSink sink;
  Actor actor(f.ctx, f.agent, f.env, cfg, 0, &sink);
  auto traj = actor.next_segment(params, 80.0);

  nn::Tape<float> tape(true);
  nn::ParamBinder<float> bind(tape);
  auto sv = inject_state(tape, traj.start_state);
  int prev_a = traj.start_prev_action;
  double prev_r = traj.start_prev_reward;
  for (const auto& step : traj.steps) {
    auto out = agent_forward(tape, bind, params, f.agent, traj.region, step.obs, sv,
                             traj.mode, prev_a, prev_r);
    auto lg = logits_array(tape, step.acted_view == View::ground ? out.logits_ground
                                                                 : out.logits_aerial);
    for (int i = 0; i < kNumActions; ++i)
      CHECK(lg[static_cast<size_t>(i)] == step.behavior_logits[static_cast<size_t>(i)]);
    if (step.episode_boundary_after) {
      sv = inject_state(tape, init_state(f.agent, traj.mode));
      prev_a = -1;
      prev_r = 0;
    } else {
      prev_a = step.action;
      prev_r = step.reward;
    }
  }
}

TEST_CASE("actors round-robin regions evenly") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 6);
  auto cfg = f.small_stage(StageKind::training, 1, 7);
  cfg.unroll = 20;  // episode_len 100 = 5 segments per episode
  std::map<std::string, int> counts;
  for (int a = 0; a < 4; ++a) {
    EpisodeSink sink;
    Actor actor(f.ctx, f.agent, f.env, cfg, a, &sink);
    for (int s = 0; s < 40; ++s) ++counts[actor.next_segment(params, 80.0).region];
  }
  int total = counts["train0"] + counts["train1"];
  CHECK(total == 160);
  CHECK(std::abs(counts["train0"] - counts["train1"]) <= total / 20);  // within 5%
}

TEST_CASE("freeze invariants across adaptation and transfer") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 8);

  auto train_cfg = f.small_stage(StageKind::training, 2, 9);
  train_cfg.deterministic = true;
  run_stage(f.ctx, params, f.agent, f.env, train_cfg, f.tmp("train.csv"));

  // fresh target locale ahead of adaptation
  add_locale_partition(params, f.agent, "heldout", 99);
  params.set_all_trainable();
  auto before_adapt = nn::store_hashes(params);

  auto adapt_cfg = f.small_stage(StageKind::adaptation, 2, 10);
  adapt_cfg.deterministic = true;
  run_stage(f.ctx, params, f.agent, f.env, adapt_cfg, f.tmp("adapt.csv"));
  auto after_adapt = nn::store_hashes(params);

  for (const auto& [name, hashes] : before_adapt) {
    if (name == "locale/heldout")
      CHECK(after_adapt.at(name) != hashes);
    else
      CHECK(after_adapt.at(name) == hashes);
  }

  auto transfer_cfg = f.small_stage(StageKind::transfer, 2, 11);
  transfer_cfg.deterministic = true;
  run_stage(f.ctx, params, f.agent, f.env, transfer_cfg, f.tmp("transfer.csv"));
  auto after_transfer = nn::store_hashes(params);
  for (const std::string part :
       {"encoder_ground", "encoder_aerial", "policy_core", "policy_head", "value_head"})
    CHECK(after_transfer.at(part) == after_adapt.at(part));
  CHECK(after_transfer.at("locale/heldout") != after_adapt.at("locale/heldout"));
}

TEST_CASE("deterministic single-actor stage reproduces its metrics byte for byte") {
  TrainFixture f;
  auto run_once = [&](const std::string& csv) {
    auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 12);
    auto cfg = f.small_stage(StageKind::training, 3, 13);
    cfg.deterministic = true;
    auto res = run_stage(f.ctx, params, f.agent, f.env, cfg, f.tmp(csv));
    return std::make_pair(nn::store_hashes(params), res);
  };
  auto [h1, r1] = run_once("det1.csv");
  auto [h2, r2] = run_once("det2.csv");
  CHECK(h1 == h2);
  CHECK(slurp(f.tmp("det1.csv")) == slurp(f.tmp("det2.csv")));
  CHECK(r1.env_steps_consumed == r2.env_steps_consumed);
}

TEST_CASE("async stage: accounting holds and importance ratios stay sane") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 14);
  auto cfg = f.small_stage(StageKind::training, 5, 15);
  auto res = run_stage(f.ctx, params, f.agent, f.env, cfg, f.tmp("async.csv"));
  CHECK(res.updates == 5);
  CHECK(res.env_steps_consumed == 5 * 4 * 20);
  CHECK(res.actor_steps_produced >= res.env_steps_consumed);

  // is_clip = 1: every per-update mean ratio lies in (0, 1]
  std::ifstream csv(f.tmp("async.csv"));
  std::string line;
  std::getline(csv, line);  // header
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    size_t pos = 0;
    for (int c = 0; c < 11; ++c) pos = line.find(',', pos) + 1;
    double ratio = std::stod(line.substr(pos));
    CHECK(ratio > 0.3);
    CHECK(ratio <= 1.0 + 1e-9);
  }
  CHECK(rows == 5);
}

TEST_CASE("NaN parameters abort the stage with the producing op named") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0", "train1"}, 16);
  params.tensor("policy_head", "fc.w")[0] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = f.small_stage(StageKind::training, 1, 17);
  cfg.deterministic = true;
  CHECK_THROWS_AS(run_stage(f.ctx, params, f.agent, f.env, cfg, f.tmp("nan.csv")),
                  numeric_error);
}

TEST_CASE("agent checkpoint carries the architecture") {
  TrainFixture f;
  auto params = init_agent_params<float>(f.agent, {"train0"}, 18);
  auto path = f.tmp("agent.ckpt");
  save_agent_checkpoint(params, f.agent, path);
  auto [loaded, acfg] = load_agent_checkpoint(path);
  CHECK(acfg.embed_dim == f.agent.embed_dim);
  CHECK(nn::store_hashes(loaded) == nn::store_hashes(params));
}
