#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossview/courier_env.hpp"
#include "crossview/nn/checkpoint.hpp"
#include "crossview/nn/layers.hpp"
#include "crossview/rng.hpp"

namespace crossview {

enum class ViewMode { BOTH, GROUND_ONLY, AERIAL_ONLY };
enum class View { ground = 0, aerial = 1 };

inline const char* view_mode_name(ViewMode m) {
  switch (m) {
    case ViewMode::BOTH: return "both";
    case ViewMode::GROUND_ONLY: return "ground";
    case ViewMode::AERIAL_ONLY: return "aerial";
  }
  return "?";
}

inline bool ground_active(ViewMode m) { return m != ViewMode::AERIAL_ONLY; }
inline bool aerial_active(ViewMode m) { return m != ViewMode::GROUND_ONLY; }

struct AgentConfig {
  int ground_dim = 0;       // ground raster length
  int aerial_dim = 0;       // aerial raster length
  int aerial_size = 21;     // W, needed by the conv encoder
  int aerial_channels = 10;
  int enc_hidden = 64;
  int embed_dim = 64;
  int locale_hidden = 128;
  int policy_hidden = 128;
  bool aerial_conv = false;  // conv stack instead of a dense stack for the aerial view
  int conv_channels = 8;
  bool feed_prev_action_reward = false;

  static AgentConfig for_env(const EnvConfig& env) {
    AgentConfig c;
    c.ground_dim = env.ground_dim();
    c.aerial_dim = env.aerial_dim();
    c.aerial_size = env.aerial_size;
    c.aerial_channels = env.aerial_channels();
    return c;
  }

  int policy_input_dim() const {
    return locale_hidden + embed_dim + 2 + (feed_prev_action_reward ? kNumActions + 1 : 0);
  }

  nlohmann::ordered_json to_json() const {
    return {{"ground_dim", ground_dim},     {"aerial_dim", aerial_dim},
            {"aerial_size", aerial_size},   {"aerial_channels", aerial_channels},
            {"enc_hidden", enc_hidden},     {"embed_dim", embed_dim},
            {"locale_hidden", locale_hidden}, {"policy_hidden", policy_hidden},
            {"aerial_conv", aerial_conv},   {"conv_channels", conv_channels},
            {"feed_prev_action_reward", feed_prev_action_reward}};
  }
  static AgentConfig from_json(const nlohmann::ordered_json& j) {
    AgentConfig c;
    c.ground_dim = j.at("ground_dim").get<int>();
    c.aerial_dim = j.at("aerial_dim").get<int>();
    c.aerial_size = j.at("aerial_size").get<int>();
    c.aerial_channels = j.at("aerial_channels").get<int>();
    c.enc_hidden = j.at("enc_hidden").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.locale_hidden = j.at("locale_hidden").get<int>();
    c.policy_hidden = j.at("policy_hidden").get<int>();
    c.aerial_conv = j.at("aerial_conv").get<bool>();
    c.conv_channels = j.at("conv_channels").get<int>();
    c.feed_prev_action_reward = j.at("feed_prev_action_reward").get<bool>();
    return c;
  }
};

inline std::string locale_partition(const std::string& region) { return "locale/" + region; }

// ---- parameter construction ----

template <class T>
void add_locale_partition(nn::ParamStore<T>& store, const AgentConfig& cfg,
                          const std::string& region, uint64_t seed) {
  Rng rng(mix_seed(seed));
  nn::add_lstm(store, rng, locale_partition(region), "lstm", cfg.embed_dim, cfg.locale_hidden);
}

template <class T>
nn::ParamStore<T> init_agent_params(const AgentConfig& cfg,
                                    const std::vector<std::string>& regions, uint64_t seed) {
  nn::ParamStore<T> store;
  Rng rng(mix_seed(seed));
  nn::add_dense(store, rng, "encoder_ground", "fc1", cfg.ground_dim, cfg.enc_hidden);
  nn::add_dense(store, rng, "encoder_ground", "fc2", cfg.enc_hidden, cfg.embed_dim);
  if (cfg.aerial_conv) {
    int k = 3, s = 2;
    int w1 = (cfg.aerial_size - k) / s + 1;
    int w2 = (w1 - k) / s + 1;
    store.add("encoder_aerial", "conv1.w",
              nn::glorot_uniform<T>(rng, k * k * cfg.aerial_channels, cfg.conv_channels,
                                    {k, k, cfg.aerial_channels, cfg.conv_channels}));
    store.add("encoder_aerial", "conv1.b", nn::Tensor<T>({1, cfg.conv_channels}));
    store.add("encoder_aerial", "conv2.w",
              nn::glorot_uniform<T>(rng, k * k * cfg.conv_channels, cfg.conv_channels,
                                    {k, k, cfg.conv_channels, cfg.conv_channels}));
    store.add("encoder_aerial", "conv2.b", nn::Tensor<T>({1, cfg.conv_channels}));
    nn::add_dense(store, rng, "encoder_aerial", "fc", w2 * w2 * cfg.conv_channels,
                  cfg.embed_dim);
  } else {
    nn::add_dense(store, rng, "encoder_aerial", "fc1", cfg.aerial_dim, cfg.enc_hidden);
    nn::add_dense(store, rng, "encoder_aerial", "fc2", cfg.enc_hidden, cfg.embed_dim);
  }
  nn::add_lstm(store, rng, "policy_core", "lstm", cfg.policy_input_dim(), cfg.policy_hidden);
  nn::add_dense(store, rng, "policy_head", "fc", cfg.policy_hidden, kNumActions);
  nn::add_dense(store, rng, "value_head", "fc", cfg.policy_hidden, 1);
  nn::add_dense(store, rng, "heading_head", "fc", cfg.embed_dim, 2);
  for (const std::string& r : regions)
    add_locale_partition(store, cfg, r, derive_seed(seed, std::hash<std::string>{}(r)));
  store.set_all_trainable();
  return store;
}

// ---- recurrent state ----

// Plain-tensor state carried between steps by actors and stored in segments.
struct PathwayState {
  std::vector<float> locale_h, locale_c, policy_h, policy_c;
};

struct AgentState {
  std::optional<PathwayState> ground, aerial;
};

inline PathwayState zero_pathway_state(const AgentConfig& cfg) {
  return PathwayState{std::vector<float>(cfg.locale_hidden, 0.0f),
                      std::vector<float>(cfg.locale_hidden, 0.0f),
                      std::vector<float>(cfg.policy_hidden, 0.0f),
                      std::vector<float>(cfg.policy_hidden, 0.0f)};
}

// One zeroed state set per active view.
inline AgentState init_state(const AgentConfig& cfg, ViewMode mode) {
  AgentState s;
  if (ground_active(mode)) s.ground = zero_pathway_state(cfg);
  if (aerial_active(mode)) s.aerial = zero_pathway_state(cfg);
  return s;
}

// Tape-side state. Threading these Values through consecutive forward calls
// on one tape gives backpropagation through time.
template <class T>
struct PathwayStateV {
  nn::LSTMStateV<T> locale, policy;
};

template <class T>
struct AgentStateV {
  std::optional<PathwayStateV<T>> ground, aerial;
};

template <class T>
nn::Tensor<T> row_from(const std::vector<float>& v) {
  nn::Tensor<T> t({1, static_cast<int>(v.size())});
  for (size_t i = 0; i < v.size(); ++i) t[static_cast<int>(i)] = static_cast<T>(v[i]);
  return t;
}

template <class T>
std::vector<float> row_to(const nn::Tensor<T>& t) {
  std::vector<float> v(static_cast<size_t>(t.numel()));
  for (int i = 0; i < t.numel(); ++i) v[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  return v;
}

template <class T>
PathwayStateV<T> inject_pathway(nn::Tape<T>& tape, const PathwayState& s) {
  return PathwayStateV<T>{{tape.constant(row_from<T>(s.locale_h)),
                           tape.constant(row_from<T>(s.locale_c))},
                          {tape.constant(row_from<T>(s.policy_h)),
                           tape.constant(row_from<T>(s.policy_c))}};
}

template <class T>
AgentStateV<T> inject_state(nn::Tape<T>& tape, const AgentState& s) {
  AgentStateV<T> out;
  if (s.ground) out.ground = inject_pathway(tape, *s.ground);
  if (s.aerial) out.aerial = inject_pathway(tape, *s.aerial);
  return out;
}

template <class T>
AgentState extract_state(const nn::Tape<T>& tape, const AgentStateV<T>& s) {
  AgentState out;
  auto conv = [&](const PathwayStateV<T>& p) {
    return PathwayState{row_to(tape.val(p.locale.h)), row_to(tape.val(p.locale.c)),
                        row_to(tape.val(p.policy.h)), row_to(tape.val(p.policy.c))};
  };
  if (s.ground) out.ground = conv(*s.ground);
  if (s.aerial) out.aerial = conv(*s.aerial);
  return out;
}

// ---- forward ----

template <class T>
struct PolicyOutput {
  typename nn::Tape<T>::Value logits_ground{}, logits_aerial{};
  typename nn::Tape<T>::Value value{}, heading_pred{};
  typename nn::Tape<T>::Value embed_ground{}, embed_aerial{};
};

namespace detail {

template <class T>
typename nn::Tape<T>::Value encode_ground(nn::Tape<T>& tape, nn::ParamBinder<T>& bind,
                                          const nn::ParamStore<T>& store,
                                          const std::vector<float>& raster) {
  auto x = tape.constant(row_from<T>(raster));
  auto h = tape.relu_op(nn::dense(tape, bind, store, "encoder_ground", "fc1", x));
  return nn::dense(tape, bind, store, "encoder_ground", "fc2", h);
}

template <class T>
typename nn::Tape<T>::Value encode_aerial(nn::Tape<T>& tape, nn::ParamBinder<T>& bind,
                                          const nn::ParamStore<T>& store,
                                          const AgentConfig& cfg,
                                          const std::vector<float>& raster) {
  if (!cfg.aerial_conv) {
    auto x = tape.constant(row_from<T>(raster));
    auto h = tape.relu_op(nn::dense(tape, bind, store, "encoder_aerial", "fc1", x));
    return nn::dense(tape, bind, store, "encoder_aerial", "fc2", h);
  }
  nn::Tensor<T> x3({cfg.aerial_size, cfg.aerial_size, cfg.aerial_channels});
  CV_REQUIRE(static_cast<size_t>(x3.numel()) == raster.size(), "aerial raster size mismatch");
  for (int i = 0; i < x3.numel(); ++i) x3[i] = static_cast<T>(raster[static_cast<size_t>(i)]);
  auto x = tape.constant(std::move(x3));
  auto c1 = tape.relu_op(tape.conv2d(x, bind(store, "encoder_aerial", "conv1.w"),
                                     bind(store, "encoder_aerial", "conv1.b"), 2));
  auto c2 = tape.relu_op(tape.conv2d(c1, bind(store, "encoder_aerial", "conv2.w"),
                                     bind(store, "encoder_aerial", "conv2.b"), 2));
  return nn::dense(tape, bind, store, "encoder_aerial", "fc", tape.flatten(c2));
}

template <class T>
nn::LSTMStateV<T> lstm_from_store(nn::Tape<T>& tape, nn::ParamBinder<T>& bind,
                                  const nn::ParamStore<T>& store, const std::string& partition,
                                  typename nn::Tape<T>::Value x, nn::LSTMStateV<T> state) {
  return nn::lstm_step(tape, bind(store, partition, "lstm.wx"), bind(store, partition, "lstm.wh"),
                       bind(store, partition, "lstm.b"), x, state);
}

}  // namespace detail

// Runs the active pathways with shared locale/policy weights and per-view
// recurrent state; `states` is advanced in place.
template <class T>
PolicyOutput<T> agent_forward(nn::Tape<T>& tape, nn::ParamBinder<T>& bind,
                              const nn::ParamStore<T>& store, const AgentConfig& cfg,
                              const std::string& region, const Observation& obs,
                              AgentStateV<T>& states, ViewMode mode, int prev_action = -1,
                              double prev_reward = 0.0) {
  const std::string locale = locale_partition(region);
  CV_REQUIRE(store.has_partition(locale),
             "agent_forward: missing locale partition for region '" + region + "'");
  CV_REQUIRE(!ground_active(mode) || states.ground.has_value(),
             "agent_forward: missing ground state");
  CV_REQUIRE(!aerial_active(mode) || states.aerial.has_value(),
             "agent_forward: missing aerial state");

  auto goal = tape.constant(nn::Tensor<T>::row(
      {static_cast<T>(obs.goal[0]), static_cast<T>(obs.goal[1])}));
  typename nn::Tape<T>::Value extra{};
  if (cfg.feed_prev_action_reward) {
    std::vector<T> onehot(kNumActions + 1, T(0));
    if (prev_action >= 0 && prev_action < kNumActions) onehot[static_cast<size_t>(prev_action)] = T(1);
    onehot[kNumActions] = static_cast<T>(prev_reward);
    extra = tape.constant(nn::Tensor<T>::row(std::move(onehot)));
  }

  PolicyOutput<T> out;
  typename nn::Tape<T>::Value h_ground{}, h_aerial{};

  auto run_pathway = [&](View v, PathwayStateV<T>& st) {
    auto e = v == View::ground
                 ? detail::encode_ground(tape, bind, store, obs.ground)
                 : detail::encode_aerial(tape, bind, store, cfg, obs.aerial);
    st.locale = detail::lstm_from_store(tape, bind, store, locale, e, st.locale);
    std::vector<typename nn::Tape<T>::Value> pin = {st.locale.h, e, goal};
    if (cfg.feed_prev_action_reward) pin.push_back(extra);
    auto pin_v = tape.concat_cols(std::span<const typename nn::Tape<T>::Value>(pin));
    st.policy = detail::lstm_from_store(tape, bind, store, "policy_core", pin_v, st.policy);
    auto logits = nn::dense(tape, bind, store, "policy_head", "fc", st.policy.h);
    if (v == View::ground) {
      out.embed_ground = e;
      out.logits_ground = logits;
      h_ground = st.policy.h;
    } else {
      out.embed_aerial = e;
      out.logits_aerial = logits;
      h_aerial = st.policy.h;
    }
  };

  if (ground_active(mode)) run_pathway(View::ground, *states.ground);
  if (aerial_active(mode)) run_pathway(View::aerial, *states.aerial);

  typename nn::Tape<T>::Value h_for_value =
      mode == ViewMode::BOTH
          ? tape.affine(tape.add(h_ground, h_aerial), T(0.5), T(0))
          : (mode == ViewMode::GROUND_ONLY ? h_ground : h_aerial);
  out.value = nn::dense(tape, bind, store, "value_head", "fc", h_for_value);
  auto e_for_heading = aerial_active(mode) && !ground_active(mode) ? out.embed_aerial
                                                                   : out.embed_ground;
  out.heading_pred = nn::dense(tape, bind, store, "heading_head", "fc", e_for_heading);
  return out;
}

// Per-step gate: under BOTH, pick ground logits with probability p_ground.
template <class T>
View view_dropout_select(Rng& rng, double p_ground, const PolicyOutput<T>& out, ViewMode mode) {
  switch (mode) {
    case ViewMode::GROUND_ONLY: return View::ground;
    case ViewMode::AERIAL_ONLY: return View::aerial;
    case ViewMode::BOTH:
      CV_REQUIRE(out.logits_ground.valid() && out.logits_aerial.valid(),
                 "view_dropout_select: BOTH mode needs both logit sets");
      return rng.bernoulli(p_ground) ? View::ground : View::aerial;
  }
  return View::ground;
}

// Samples from softmax(logits); greedy takes the argmax (lowest index wins ties).
inline Action act(const std::array<float, kNumActions>& logits, Rng& rng, bool greedy = false) {
  std::array<double, kNumActions> p{};
  double mx = logits[0];
  for (float l : logits) mx = std::max(mx, static_cast<double>(l));
  double z = 0;
  for (int i = 0; i < kNumActions; ++i) {
    CV_REQUIRE(std::isfinite(logits[static_cast<size_t>(i)]), "act: non-finite logit");
    p[static_cast<size_t>(i)] = std::exp(static_cast<double>(logits[static_cast<size_t>(i)]) - mx);
    z += p[static_cast<size_t>(i)];
  }
  if (greedy) {
    int best = 0;
    for (int i = 1; i < kNumActions; ++i)
      if (p[static_cast<size_t>(i)] > p[static_cast<size_t>(best)]) best = i;
    return static_cast<Action>(best);
  }
  double u = rng.uniform() * z;
  double acc = 0;
  for (int i = 0; i < kNumActions; ++i) {
    acc += p[static_cast<size_t>(i)];
    if (u < acc) return static_cast<Action>(i);
  }
  return static_cast<Action>(kNumActions - 1);
}

template <class T>
std::array<float, kNumActions> logits_array(const nn::Tape<T>& tape,
                                            typename nn::Tape<T>::Value v) {
  const auto& t = tape.val(v);
  CV_REQUIRE(t.numel() == kNumActions, "logits_array: wrong logits size");
  std::array<float, kNumActions> out{};
  for (int i = 0; i < kNumActions; ++i) out[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  return out;
}

}  // namespace crossview
