#include <doctest.h>

#include <cmath>

#include "crossview/agent.hpp"

using namespace crossview;
using nn::Tape;
using nn::Tensor;
using FTape = Tape<float>;

namespace {

// Small synthetic setup: matching ground/aerial raster sizes so encoders can
// be made identical where a test needs that.
AgentConfig tiny_config() {
  AgentConfig c;
  c.ground_dim = 12;
  c.aerial_dim = 12;
  c.aerial_size = 2;  // unused by the dense encoder
  c.aerial_channels = 3;
  c.enc_hidden = 8;
  c.embed_dim = 6;
  c.locale_hidden = 8;
  c.policy_hidden = 8;
  return c;
}

Observation tiny_obs(uint64_t seed, int gdim, int adim, bool same_rasters = false) {
  Rng rng(seed);
  Observation o;
  o.ground.resize(static_cast<size_t>(gdim));
  for (auto& v : o.ground) v = static_cast<float>(rng.uniform(0, 1));
  if (same_rasters) {
    o.aerial = o.ground;
  } else {
    o.aerial.resize(static_cast<size_t>(adim));
    for (auto& v : o.aerial) v = static_cast<float>(rng.uniform(0, 1));
  }
  o.goal = {0.25f, -0.5f};
  o.heading_target = {0.0f, 1.0f};
  return o;
}

}  // namespace

TEST_CASE("init_state shapes per mode") {
  auto cfg = tiny_config();
  auto both = init_state(cfg, ViewMode::BOTH);
  REQUIRE(both.ground.has_value());
  REQUIRE(both.aerial.has_value());
  CHECK(both.ground->locale_h.size() == 8);
  CHECK(both.ground->policy_c.size() == 8);
  for (float v : both.ground->locale_h) CHECK(v == 0.0f);

  auto aerial = init_state(cfg, ViewMode::AERIAL_ONLY);
  CHECK(!aerial.ground.has_value());
  CHECK(aerial.aerial.has_value());
  auto ground = init_state(cfg, ViewMode::GROUND_ONLY);
  CHECK(ground.ground.has_value());
  CHECK(!ground.aerial.has_value());
}

TEST_CASE("ground-only forward omits aerial outputs and never reads the aerial raster") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 3);
  auto obs = tiny_obs(4, cfg.ground_dim, cfg.aerial_dim);
  std::fill(obs.aerial.begin(), obs.aerial.end(), std::numeric_limits<float>::quiet_NaN());

  FTape tape(false);
  nn::ParamBinder<float> bind(tape);
  auto states = inject_state(tape, init_state(cfg, ViewMode::GROUND_ONLY));
  auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, ViewMode::GROUND_ONLY);
  CHECK(out.logits_ground.valid());
  CHECK(!out.logits_aerial.valid());
  CHECK(!out.embed_aerial.valid());
  CHECK(tape.val(out.logits_ground).all_finite());
  CHECK(tape.val(out.value).all_finite());
  CHECK(tape.val(out.heading_pred).all_finite());
}

TEST_CASE("aerial-only forward tolerates a poisoned ground raster") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 3);
  auto obs = tiny_obs(4, cfg.ground_dim, cfg.aerial_dim);
  std::fill(obs.ground.begin(), obs.ground.end(), std::numeric_limits<float>::quiet_NaN());

  FTape tape(false);
  nn::ParamBinder<float> bind(tape);
  auto states = inject_state(tape, init_state(cfg, ViewMode::AERIAL_ONLY));
  auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, ViewMode::AERIAL_ONLY);
  CHECK(!out.logits_ground.valid());
  CHECK(tape.val(out.logits_aerial).all_finite());
  CHECK(tape.val(out.value).all_finite());
}

TEST_CASE("identical encoders, rasters and states give identical per-view logits") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 5);
  // dense encoders share tensor names (fc1/fc2), so a plain copy aligns them
  store.partitions["encoder_aerial"] = store.partitions["encoder_ground"];

  auto obs = tiny_obs(6, cfg.ground_dim, cfg.aerial_dim, /*same_rasters=*/true);
  FTape tape(false);
  nn::ParamBinder<float> bind(tape);
  auto states = inject_state(tape, init_state(cfg, ViewMode::BOTH));
  auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, ViewMode::BOTH);
  const auto& lg = tape.val(out.logits_ground);
  const auto& la = tape.val(out.logits_aerial);
  for (int i = 0; i < kNumActions; ++i) CHECK(lg[i] == la[i]);
  // value head reads the mean of identical policy states: equals either one
  CHECK(tape.val(out.value).all_finite());
}

TEST_CASE("forward is pure") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 7);
  auto obs = tiny_obs(8, cfg.ground_dim, cfg.aerial_dim);
  auto run = [&]() {
    FTape tape(false);
    nn::ParamBinder<float> bind(tape);
    auto states = inject_state(tape, init_state(cfg, ViewMode::BOTH));
    auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, ViewMode::BOTH);
    auto l = logits_array(tape, out.logits_ground);
    auto v = tape.val(out.value)[0];
    return std::make_pair(l, v);
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("missing locale partition is a contract violation") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 9);
  auto obs = tiny_obs(10, cfg.ground_dim, cfg.aerial_dim);
  FTape tape(false);
  nn::ParamBinder<float> bind(tape);
  auto states = inject_state(tape, init_state(cfg, ViewMode::BOTH));
  CHECK_THROWS_AS(
      (void)agent_forward(tape, bind, store, cfg, "nowhere", obs, states, ViewMode::BOTH),
      contract_error);
}

TEST_CASE("locale and policy gradients accumulate from both pathways") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 11);
  auto obs = tiny_obs(12, cfg.ground_dim, cfg.aerial_dim);

  auto grads_for = [&](ViewMode mode) {
    FTape tape(true);
    nn::ParamBinder<float> bind(tape);
    auto states = inject_state(tape, init_state(cfg, mode));
    auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, mode);
    FTape::Value loss{};
    if (ground_active(mode)) loss = tape.sum(out.logits_ground);
    if (aerial_active(mode)) {
      auto s = tape.sum(out.logits_aerial);
      loss = loss.valid() ? tape.add(loss, s) : s;
    }
    tape.backward(loss);
    auto g = nn::GradBuffer<float>::zeros_like(store);
    bind.export_grads(g, 1.0f);
    return g;
  };

  auto g_ground = grads_for(ViewMode::GROUND_ONLY);
  auto g_aerial = grads_for(ViewMode::AERIAL_ONLY);
  auto g_both = grads_for(ViewMode::BOTH);

  for (const std::string part : {"locale/r0", "policy_core", "policy_head"}) {
    const auto& b = g_both.parts.at(part);
    const auto& gg = g_ground.parts.at(part);
    const auto& ga = g_aerial.parts.at(part);
    double total = 0;
    for (size_t i = 0; i < b.size(); ++i)
      for (int k = 0; k < b[i].numel(); ++k) {
        CHECK(b[i][k] == doctest::Approx(gg[i][k] + ga[i][k]).epsilon(5e-3));
        total += std::abs(b[i][k]);
      }
    CHECK(total > 0);
  }
}

TEST_CASE("view dropout: degenerate and balanced probabilities") {
  auto cfg = tiny_config();
  auto store = init_agent_params<float>(cfg, {"r0"}, 13);
  auto obs = tiny_obs(14, cfg.ground_dim, cfg.aerial_dim);
  FTape tape(false);
  nn::ParamBinder<float> bind(tape);
  auto states = inject_state(tape, init_state(cfg, ViewMode::BOTH));
  auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, ViewMode::BOTH);

  Rng rng(17);
  for (int i = 0; i < 100; ++i)
    CHECK(view_dropout_select(rng, 1.0, out, ViewMode::BOTH) == View::ground);
  for (int i = 0; i < 100; ++i)
    CHECK(view_dropout_select(rng, 0.5, out, ViewMode::GROUND_ONLY) == View::ground);
  for (int i = 0; i < 100; ++i)
    CHECK(view_dropout_select(rng, 0.5, out, ViewMode::AERIAL_ONLY) == View::aerial);

  int ground_count = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (view_dropout_select(rng, 0.5, out, ViewMode::BOTH) == View::ground) ++ground_count;
  CHECK(ground_count > 5000 - 150);  // 3 sigma of Binomial(1e4, 0.5)
  CHECK(ground_count < 5000 + 150);
}

TEST_CASE("act: saturated, uniform, and greedy tie-break") {
  Rng rng(19);
  std::array<float, 5> hot = {1000, 0, 0, 0, 0};
  int zero_count = 0;
  for (int i = 0; i < 10000; ++i)
    if (act(hot, rng) == Action::FORWARD) ++zero_count;
  CHECK(zero_count >= 9990);

  std::array<float, 5> uniform = {0.7f, 0.7f, 0.7f, 0.7f, 0.7f};
  std::array<int, 5> counts{};
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<size_t>(act(uniform, rng))];
  for (int c : counts) {
    CHECK(c > 2000 - 120);  // 3 sigma of Binomial(1e4, 0.2)
    CHECK(c < 2000 + 120);
  }

  std::array<float, 5> tie = {0.1f, 0.3f, 0.3f, 0.0f, 0.0f};
  CHECK(act(tie, rng, /*greedy=*/true) == Action::LEFT_SMALL);  // index 1 wins the tie
}

TEST_CASE("conv aerial encoder variant runs and differs from dense") {
  auto cfg = tiny_config();
  cfg.aerial_conv = true;
  cfg.aerial_size = 7;
  cfg.aerial_channels = 3;
  cfg.aerial_dim = 7 * 7 * 3;
  auto store = init_agent_params<float>(cfg, {"r0"}, 21);
  CHECK_NOTHROW((void)store.tensor("encoder_aerial", "conv1.w"));
  auto obs = tiny_obs(22, cfg.ground_dim, cfg.aerial_dim);
  FTape tape(false);
  nn::ParamBinder<float> bind(tape);
  auto states = inject_state(tape, init_state(cfg, ViewMode::AERIAL_ONLY));
  auto out = agent_forward(tape, bind, store, cfg, "r0", obs, states, ViewMode::AERIAL_ONLY);
  CHECK(tape.val(out.logits_aerial).all_finite());
  CHECK(tape.val(out.embed_aerial).numel() == cfg.embed_dim);
}

TEST_CASE("agent config survives the checkpoint meta round-trip") {
  auto cfg = tiny_config();
  cfg.feed_prev_action_reward = true;
  auto j = cfg.to_json();
  auto back = AgentConfig::from_json(j);
  CHECK(back.ground_dim == cfg.ground_dim);
  CHECK(back.embed_dim == cfg.embed_dim);
  CHECK(back.feed_prev_action_reward == true);
}
