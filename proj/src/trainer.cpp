#include "crossview/trainer.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <thread>

namespace crossview {

namespace {

class SnapshotSlot {
 public:
  void set(std::shared_ptr<const nn::ParamStore<float>> p) {
    std::lock_guard<std::mutex> lock(m_);
    p_ = std::move(p);
  }
  std::shared_ptr<const nn::ParamStore<float>> get() const {
    std::lock_guard<std::mutex> lock(m_);
    return p_;
  }

 private:
  mutable std::mutex m_;
  std::shared_ptr<const nn::ParamStore<float>> p_;
};

// Bounded MPSC queue with back-pressure; actors block when the learner lags.
class SegmentQueue {
 public:
  explicit SegmentQueue(size_t capacity) : capacity_(capacity) {}

  bool push(Trajectory traj) {
    std::unique_lock<std::mutex> lock(m_);
    cv_push_.wait(lock, [&] { return q_.size() < capacity_ || closed_; });
    if (closed_) return false;
    q_.push_back(std::move(traj));
    cv_pop_.notify_one();
    return true;
  }

  // Throws on starvation past the timeout.
  std::vector<Trajectory> pop_batch(int n, double timeout_sec) {
    std::vector<Trajectory> out;
    out.reserve(static_cast<size_t>(n));
    std::unique_lock<std::mutex> lock(m_);
    for (int i = 0; i < n; ++i) {
      bool ok = cv_pop_.wait_for(lock, std::chrono::duration<double>(timeout_sec),
                                 [&] { return !q_.empty(); });
      if (!ok)
        throw std::runtime_error(
            "learner starved: no actor segment arrived within the timeout");
      out.push_back(std::move(q_.front()));
      q_.pop_front();
      cv_push_.notify_one();
    }
    return out;
  }

  void close() {
    std::lock_guard<std::mutex> lock(m_);
    closed_ = true;
    cv_push_.notify_all();
    cv_pop_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_push_, cv_pop_;
  std::deque<Trajectory> q_;
  size_t capacity_;
  bool closed_ = false;
};

View default_view(ViewMode mode) {
  return mode == ViewMode::AERIAL_ONLY ? View::aerial : View::ground;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

StageConfig make_training_stage(std::vector<std::string> train_regions, int64_t env_steps,
                                uint64_t seed) {
  StageConfig cfg;
  cfg.kind = StageKind::training;
  cfg.regions = std::move(train_regions);
  cfg.view_mode = ViewMode::BOTH;
  cfg.env_steps = env_steps;
  cfg.seed = seed;
  return cfg;
}

StageConfig make_adaptation_stage(std::string target_region, int64_t env_steps, uint64_t seed) {
  StageConfig cfg;
  cfg.kind = StageKind::adaptation;
  cfg.regions = {std::move(target_region)};
  cfg.view_mode = ViewMode::AERIAL_ONLY;
  cfg.env_steps = env_steps;
  cfg.seed = seed;
  return cfg;
}

StageConfig make_transfer_stage(std::string target_region, int64_t env_steps, uint64_t seed) {
  StageConfig cfg;
  cfg.kind = StageKind::transfer;
  cfg.regions = {std::move(target_region)};
  cfg.view_mode = ViewMode::GROUND_ONLY;
  cfg.env_steps = env_steps;
  cfg.seed = seed;
  return cfg;
}

void validate_stage(StageConfig& cfg, const nn::ParamStore<float>& store) {
  CV_REQUIRE(!cfg.regions.empty(), "stage has no regions");
  CV_REQUIRE(cfg.unroll > 0 && cfg.batch > 0 && cfg.actors > 0 && cfg.env_steps > 0,
             "stage sizes must be positive");
  cfg.weights.validate();
  for (const auto& r : cfg.regions)
    CV_REQUIRE(store.has_partition(locale_partition(r)),
               "missing locale partition for region '" + r + "'");

  std::set<std::string> all;
  for (const auto& [name, _] : store.partitions) all.insert(name);

  switch (cfg.kind) {
    case StageKind::training:
      // canonical training is BOTH; single-view baselines override the mode
      if (cfg.trainable.empty()) cfg.trainable = all;
      CV_REQUIRE(cfg.trainable == all, "training stage must train all partitions");
      break;
    case StageKind::adaptation: {
      CV_REQUIRE(cfg.view_mode == ViewMode::AERIAL_ONLY,
                 "adaptation runs on aerial-only observations");
      std::set<std::string> want = {locale_partition(cfg.target_region())};
      if (cfg.trainable.empty()) cfg.trainable = want;
      CV_REQUIRE(cfg.trainable == want, "adaptation trains only the target locale");
      break;
    }
    case StageKind::transfer: {
      CV_REQUIRE(cfg.view_mode == ViewMode::GROUND_ONLY,
                 "transfer runs on ground-only observations");
      std::set<std::string> want = {locale_partition(cfg.target_region())};
      if (cfg.trainable.empty()) cfg.trainable = want;
      CV_REQUIRE(cfg.trainable == want,
                 "transfer freezes encoders and policy; only the target locale trains");
      break;
    }
  }
  for (const auto& p : cfg.trainable)
    CV_REQUIRE(all.count(p), "trainable partition '" + p + "' does not exist");
  if (cfg.deterministic) {
    cfg.actors = 1;
    cfg.learner_threads = 1;
  }
}

double curriculum_level(int64_t update_index, const CurriculumSchedule& s) {
  CV_REQUIRE(s.d_start <= s.d_end, "curriculum: d_start must not exceed d_end");
  if (!s.enabled || s.ramp_steps <= 0 || update_index >= s.ramp_steps) return s.d_end;
  double f = static_cast<double>(update_index) / static_cast<double>(s.ramp_steps);
  return s.d_start + (s.d_end - s.d_start) * f;
}

// ---- actor ----

Actor::Actor(const RenderContext& ctx, const AgentConfig& acfg, const EnvConfig& ecfg,
             const StageConfig& cfg, int actor_id, EpisodeSink* sink)
    : ctx_(ctx),
      acfg_(acfg),
      cfg_(cfg),
      sink_(sink),
      rng_(derive_seed(cfg.seed, 0x20000u + static_cast<uint64_t>(actor_id))) {
  for (size_t r = 0; r < cfg.regions.size(); ++r) {
    int region_idx = ctx.graph().region_index(cfg.regions[r]);
    CV_REQUIRE(region_idx >= 0, "actor: unknown region '" + cfg.regions[r] + "'");
    envs_.push_back(std::make_unique<CourierEnv>(
        ctx, region_idx, ecfg,
        derive_seed(cfg.seed, 0x10000u + static_cast<uint64_t>(actor_id) * 256u + r)));
  }
  // first rotation lands this actor on regions[actor_id % n]
  env_idx_ = (static_cast<size_t>(actor_id) + envs_.size() - 1) % envs_.size();
}

void Actor::begin_episode(double max_goal_distance) {
  pending_obs_ = envs_[env_idx_]->reset(max_goal_distance);
  state_ = init_state(acfg_, cfg_.view_mode);
  prev_action_ = -1;
  prev_reward_ = 0;
  episode_open_ = true;
}

Trajectory Actor::next_segment(const nn::ParamStore<float>& params, double max_goal_distance) {
  if (!episode_open_) {
    env_idx_ = (env_idx_ + 1) % envs_.size();  // rotate regions between episodes
    begin_episode(max_goal_distance);
  }
  Trajectory traj;
  traj.mode = cfg_.view_mode;
  traj.region = cfg_.regions[env_idx_];
  traj.start_state = state_;
  traj.start_prev_action = prev_action_;
  traj.start_prev_reward = prev_reward_;
  traj.steps.reserve(static_cast<size_t>(cfg_.unroll));

  for (int t = 0; t < cfg_.unroll; ++t) {
    if (!episode_open_) begin_episode(max_goal_distance);  // mid-segment reset, same region

    nn::Tape<float> tape(false);
    nn::ParamBinder<float> bind(tape);
    auto sv = inject_state(tape, state_);
    auto out = agent_forward(tape, bind, params, acfg_, traj.region, pending_obs_, sv,
                             cfg_.view_mode, prev_action_, prev_reward_);
    View v = (cfg_.view_mode == ViewMode::BOTH && cfg_.view_dropout)
                 ? view_dropout_select(rng_, cfg_.p_ground, out, cfg_.view_mode)
                 : default_view(cfg_.view_mode);
    auto logits = logits_array(tape, v == View::ground ? out.logits_ground : out.logits_aerial);
    Action a = act(logits, rng_);
    auto res = envs_[env_idx_]->step(a);

    TrajStep step;
    step.obs = std::move(pending_obs_);
    step.action = static_cast<int>(a);
    step.reward = res.reward;
    step.behavior_logits = logits;
    step.acted_view = v;
    step.behavior_value = static_cast<double>(tape.val(out.value)[0]);
    step.episode_boundary_after = res.episode_done;
    traj.steps.push_back(std::move(step));

    state_ = extract_state(tape, sv);
    prev_action_ = static_cast<int>(a);
    prev_reward_ = res.reward;
    pending_obs_ = std::move(res.observation);
    ++steps_produced_;

    if (res.episode_done) {
      episode_open_ = false;
      if (sink_)
        sink_->push(envs_[env_idx_]->episode_reward(), envs_[env_idx_]->goals_assigned(),
                    envs_[env_idx_]->goals_completed());
    }
  }

  traj.final_obs = pending_obs_;
  if (traj.steps.back().episode_boundary_after) {
    traj.behavior_bootstrap = 0;
  } else {
    nn::Tape<float> tape(false);
    nn::ParamBinder<float> bind(tape);
    auto sv = inject_state(tape, state_);
    auto out = agent_forward(tape, bind, params, acfg_, traj.region, traj.final_obs, sv,
                             cfg_.view_mode, prev_action_, prev_reward_);
    traj.behavior_bootstrap = static_cast<double>(tape.val(out.value)[0]);
  }
  return traj;
}

// ---- learner replay ----

ReplayStats replay_segment(const nn::ParamStore<float>& params, const AgentConfig& acfg,
                           const Trajectory& traj, const LossWeights& weights,
                           const std::set<std::string>& trainable,
                           nn::GradBuffer<float>& grads, float scale) {
  const int T = traj.length();
  CV_REQUIRE(T > 0, "replay: empty segment");
  nn::Tape<float> tape(true);
  nn::ParamBinder<float> bind(tape);
  bind.set_trainable_filter(trainable);

  auto sv = inject_state(tape, traj.start_state);
  int prev_action = traj.start_prev_action;
  double prev_reward = traj.start_prev_reward;

  std::vector<nn::Tape<float>::Value> acted_logits, values;
  acted_logits.reserve(static_cast<size_t>(T));
  values.reserve(static_cast<size_t>(T));
  nn::Tape<float>::Value embed_sum{}, kl_sum{}, heading_sum{};
  const bool cross_view = traj.mode == ViewMode::BOTH;
  const bool with_heading = weights.heading_coef > 0;

  for (int t = 0; t < T; ++t) {
    const TrajStep& step = traj.steps[static_cast<size_t>(t)];
    auto out = agent_forward(tape, bind, params, acfg, traj.region, step.obs, sv, traj.mode,
                             prev_action, prev_reward);
    acted_logits.push_back(step.acted_view == View::ground ? out.logits_ground
                                                           : out.logits_aerial);
    values.push_back(out.value);
    if (cross_view) {
      auto e = embed_loss(tape, out.embed_ground, out.embed_aerial, weights.squared_embed);
      embed_sum = embed_sum.valid() ? tape.add(embed_sum, e) : e;
      auto k = kl_policy_loss(tape, out.logits_ground, out.logits_aerial,
                              weights.stop_ground_grad);
      kl_sum = kl_sum.valid() ? tape.add(kl_sum, k) : k;
    }
    if (with_heading) {
      auto target = tape.constant(nn::Tensor<float>::row(
          {step.obs.heading_target[0], step.obs.heading_target[1]}));
      auto h = heading_loss(tape, out.heading_pred, target);
      heading_sum = heading_sum.valid() ? tape.add(heading_sum, h) : h;
    }
    if (step.episode_boundary_after) {
      sv = inject_state(tape, init_state(acfg, traj.mode));
      prev_action = -1;
      prev_reward = 0;
    } else {
      prev_action = step.action;
      prev_reward = step.reward;
    }
  }

  double bootstrap = traj.steps.back().episode_boundary_after ? 0.0 : traj.behavior_bootstrap;
  auto returns = trajectory_returns<float>(traj, weights.discount, bootstrap);
  auto rl = rl_loss<float>(tape, acted_logits, values, traj, returns, weights);

  LossParts<float> parts;
  parts.rl = rl.loss;
  float inv_t = 1.0f / static_cast<float>(T);
  if (cross_view) {
    parts.embed = tape.affine(embed_sum, inv_t, 0.0f);
    parts.distill = tape.affine(kl_sum, inv_t, 0.0f);
  }
  if (with_heading) parts.heading = tape.affine(heading_sum, inv_t, 0.0f);

  auto total = total_loss(tape, parts, weights, traj.mode);
  tape.backward(tape.affine(total, scale, 0.0f));
  bind.export_grads(grads, 1.0f);

  ReplayStats stats;
  stats.loss_total = tape.val(total)[0];
  stats.loss_rl = tape.val(rl.loss)[0];
  stats.loss_embed = cross_view ? tape.val(parts.embed)[0] : 0.0;
  stats.loss_distill = cross_view ? tape.val(parts.distill)[0] : 0.0;
  stats.loss_heading = with_heading ? tape.val(parts.heading)[0] : 0.0;
  stats.entropy = rl.mean_entropy;
  stats.mean_ratio = rl.mean_ratio;
  return stats;
}

// ---- stage driver ----

StageResult run_stage(const RenderContext& ctx, nn::ParamStore<float>& params,
                      const AgentConfig& acfg, const EnvConfig& ecfg, StageConfig cfg,
                      const std::string& metrics_csv_path) {
  validate_stage(cfg, params);
  const int64_t n_updates = cfg.updates();
  const int64_t steps_per_update = static_cast<int64_t>(cfg.batch) * cfg.unroll;

  std::ofstream csv(metrics_csv_path, std::ios::trunc);
  if (!csv) throw io_error("cannot open metrics csv: " + metrics_csv_path);
  csv << "update,step,episodes,reward_mean,success_rate,loss_total,loss_rl,loss_embed,"
         "loss_policy,loss_heading,entropy,mean_ratio,grad_norm,lr\n";

  auto opt_state = nn::RmsPropState<float>::zeros_like(params);
  EpisodeSink sink;
  StageResult result;
  double last_reward_mean = 0, last_success = 0;

  // per-thread gradient buffers, reduced in fixed order
  const int n_threads = std::max(1, cfg.learner_threads);
  std::vector<nn::GradBuffer<float>> thread_grads;
  for (int i = 0; i < n_threads; ++i)
    thread_grads.push_back(nn::GradBuffer<float>::zeros_like(params));
  nn::GradBuffer<float> grads = nn::GradBuffer<float>::zeros_like(params);

  auto do_update = [&](int64_t u, std::vector<Trajectory>& segments) {
    int64_t consumed = 0;
    for (const auto& s : segments) consumed += s.length();
    result.env_steps_consumed += consumed;

    grads.zero();
    ReplayStats stats;
    float scale = 1.0f / static_cast<float>(segments.size());
    if (n_threads <= 1 || segments.size() <= 1) {
      for (const auto& seg : segments)
        stats.add(replay_segment(params, acfg, seg, cfg.weights, cfg.trainable, grads, scale));
    } else {
      std::vector<ReplayStats> tstats(static_cast<size_t>(n_threads));
      std::vector<std::thread> workers;
      std::exception_ptr error;
      std::mutex error_m;
      size_t per = (segments.size() + static_cast<size_t>(n_threads) - 1) /
                   static_cast<size_t>(n_threads);
      for (int w = 0; w < n_threads; ++w) {
        size_t lo = static_cast<size_t>(w) * per;
        size_t hi = std::min(segments.size(), lo + per);
        if (lo >= hi) break;
        workers.emplace_back([&, w, lo, hi]() {
          try {
            for (size_t i = lo; i < hi; ++i)
              tstats[static_cast<size_t>(w)].add(
                  replay_segment(params, acfg, segments[i], cfg.weights, cfg.trainable,
                                 thread_grads[static_cast<size_t>(w)], scale));
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_m);
            if (!error) error = std::current_exception();
          }
        });
      }
      for (auto& t : workers) t.join();
      if (error) std::rethrow_exception(error);
      for (int w = 0; w < n_threads; ++w) {
        grads.add_scaled(thread_grads[static_cast<size_t>(w)], 1.0f);
        thread_grads[static_cast<size_t>(w)].zero();
        stats.add(tstats[static_cast<size_t>(w)]);
      }
    }
    stats.scale_by(1.0 / static_cast<double>(segments.size()));
    CV_REQUIRE(std::isfinite(stats.mean_ratio), "mean importance ratio is not finite");

    double grad_norm = nn::clip_grad_norm(grads, cfg.trainable, cfg.grad_clip);
    double lr = nn::lr_schedule(u, cfg.lr0, n_updates);
    nn::rmsprop_step(params, grads, opt_state, lr, cfg.rmsprop_decay, cfg.rmsprop_eps);

    auto win = sink.take_window();
    if (win.episodes > 0) {
      last_reward_mean = win.reward_mean;
      last_success = win.success_rate;
    }
    csv << (u + 1) << ',' << result.env_steps_consumed << ',' << win.episodes << ','
        << fmt_double(last_reward_mean) << ',' << fmt_double(last_success) << ','
        << fmt_double(stats.loss_total) << ',' << fmt_double(stats.loss_rl) << ','
        << fmt_double(stats.loss_embed) << ',' << fmt_double(stats.loss_distill) << ','
        << fmt_double(stats.loss_heading) << ',' << fmt_double(stats.entropy) << ','
        << fmt_double(stats.mean_ratio) << ',' << fmt_double(grad_norm) << ','
        << fmt_double(lr) << '\n';
  };

  if (cfg.deterministic) {
    Actor actor(ctx, acfg, ecfg, cfg, 0, &sink);
    for (int64_t u = 0; u < n_updates; ++u) {
      double maxd = curriculum_level(u, cfg.curriculum);
      std::vector<Trajectory> segments;
      segments.reserve(static_cast<size_t>(cfg.batch));
      for (int b = 0; b < cfg.batch; ++b) segments.push_back(actor.next_segment(params, maxd));
      do_update(u, segments);
    }
    result.actor_steps_produced = actor.steps_produced();
  } else {
    SnapshotSlot slot;
    slot.set(std::make_shared<nn::ParamStore<float>>(params));
    SegmentQueue queue(static_cast<size_t>(cfg.batch) * 4);
    std::atomic<double> maxd{curriculum_level(0, cfg.curriculum)};
    std::vector<std::unique_ptr<Actor>> actors;
    std::vector<std::thread> threads;
    std::exception_ptr actor_error;
    std::mutex actor_error_m;
    for (int a = 0; a < cfg.actors; ++a)
      actors.push_back(std::make_unique<Actor>(ctx, acfg, ecfg, cfg, a, &sink));
    for (int a = 0; a < cfg.actors; ++a) {
      threads.emplace_back([&, a]() {
        try {
          while (true) {
            auto snapshot = slot.get();
            Trajectory seg = actors[static_cast<size_t>(a)]->next_segment(*snapshot,
                                                                          maxd.load());
            if (!queue.push(std::move(seg))) break;
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(actor_error_m);
          if (!actor_error) actor_error = std::current_exception();
          queue.close();
        }
      });
    }
    try {
      for (int64_t u = 0; u < n_updates; ++u) {
        maxd.store(curriculum_level(u, cfg.curriculum));
        auto segments = queue.pop_batch(cfg.batch, cfg.queue_timeout_sec);
        do_update(u, segments);
        slot.set(std::make_shared<nn::ParamStore<float>>(params));
      }
    } catch (...) {
      queue.close();
      for (auto& t : threads) t.join();
      throw;
    }
    queue.close();
    for (auto& t : threads) t.join();
    if (actor_error) std::rethrow_exception(actor_error);
    for (const auto& a : actors) result.actor_steps_produced += a->steps_produced();
  }

  CV_REQUIRE(result.env_steps_consumed == n_updates * steps_per_update,
             "throughput accounting mismatch");
  result.updates = n_updates;
  result.episodes = sink.total_episodes();
  result.last_reward_mean = last_reward_mean;
  result.last_success_rate = last_success;
  return result;
}

void save_agent_checkpoint(const nn::ParamStore<float>& store, const AgentConfig& acfg,
                           const std::string& path) {
  nlohmann::ordered_json meta;
  meta["arch"] = acfg.to_json();
  nn::save_checkpoint(store, path, meta);
}

std::pair<nn::ParamStore<float>, AgentConfig> load_agent_checkpoint(const std::string& path) {
  nlohmann::ordered_json meta;
  auto store = nn::load_checkpoint<float>(path, &meta);
  if (!meta.contains("arch")) throw io_error("checkpoint lacks agent architecture metadata");
  return {std::move(store), AgentConfig::from_json(meta.at("arch"))};
}

}  // namespace crossview
