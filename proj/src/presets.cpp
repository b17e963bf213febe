#include "crossview/presets.hpp"

#include <filesystem>
#include <fstream>

namespace crossview {

Preset parse_preset(const std::string& name) {
  if (name == "crossview_full") return Preset::crossview_full;
  if (name == "singleview") return Preset::singleview;
  if (name == "no_kl") return Preset::no_kl;
  if (name == "distill") return Preset::distill;
  if (name == "no_adapt") return Preset::no_adapt;
  if (name == "with_heading") return Preset::with_heading;
  throw io_error("unknown preset '" + name + "'");
}

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::crossview_full: return "crossview_full";
    case Preset::singleview: return "singleview";
    case Preset::no_kl: return "no_kl";
    case Preset::distill: return "distill";
    case Preset::no_adapt: return "no_adapt";
    case Preset::with_heading: return "with_heading";
  }
  return "?";
}

namespace {

std::string heldout_region(const CityGraph& graph) {
  for (const auto& r : graph.regions)
    if (r.role == RegionSpec::Role::heldout) return r.name;
  throw contract_error("city has no held-out region");
}

std::vector<std::string> train_regions(const CityGraph& graph) {
  std::vector<std::string> out;
  for (const auto& r : graph.regions)
    if (r.role == RegionSpec::Role::train) out.push_back(r.name);
  CV_REQUIRE(!out.empty(), "city has no training regions");
  return out;
}

void apply_common(StageConfig& s, const RunConfig& cfg, const CityGraph& graph,
                  uint64_t stage_index) {
  s.weights = cfg.weights;
  s.actors = cfg.actors;
  s.unroll = cfg.unroll;
  s.batch = cfg.batch;
  s.learner_threads = cfg.learner_threads;
  s.deterministic = cfg.deterministic;
  s.lr0 = cfg.lr0;
  s.rmsprop_decay = cfg.rmsprop_decay;
  s.rmsprop_eps = cfg.rmsprop_eps;
  s.grad_clip = cfg.grad_clip;
  s.p_ground = cfg.p_ground;
  s.seed = derive_seed(cfg.seed, 0xA5A5u + stage_index);

  s.curriculum = cfg.curriculum;
  if (s.curriculum.d_end <= 0) {
    double d = 0;
    for (const auto& name : s.regions) d = std::max(d, graph.region(name).diagonal());
    s.curriculum.d_end = d;
  }
  if (s.curriculum.ramp_steps <= 0)
    s.curriculum.ramp_steps = static_cast<int>(s.updates() / 2);
}

}  // namespace

PipelinePlan expand_preset(Preset p, const RunConfig& cfg, const CityGraph& graph) {
  PipelinePlan plan;
  plan.preset = preset_name(p);
  plan.target_region = heldout_region(graph);
  auto trains = train_regions(graph);

  auto training = make_training_stage(trains, cfg.train_steps, cfg.seed);
  auto adaptation = make_adaptation_stage(plan.target_region, cfg.adapt_steps, cfg.seed);
  auto transfer = make_transfer_stage(plan.target_region, cfg.transfer_steps, cfg.seed);

  switch (p) {
    case Preset::crossview_full:
      plan.stages = {training, adaptation, transfer};
      break;
    case Preset::singleview:
      training.view_mode = ViewMode::GROUND_ONLY;
      plan.stages = {training, transfer};
      break;
    case Preset::no_kl:
      plan.stages = {training, adaptation, transfer};
      break;
    case Preset::distill:
      training.view_dropout = false;  // ground logits always act
      plan.stages = {training, adaptation, transfer};
      break;
    case Preset::no_adapt:
      plan.stages = {training, transfer};
      break;
    case Preset::with_heading:
      plan.stages = {training, adaptation, transfer};
      break;
  }

  for (size_t i = 0; i < plan.stages.size(); ++i) {
    apply_common(plan.stages[i], cfg, graph, i);
    switch (p) {
      case Preset::singleview:
        plan.stages[i].weights.lambda_embed = 0;
        plan.stages[i].weights.gamma_distill = 0;
        break;
      case Preset::no_kl:
        plan.stages[i].weights.gamma_distill = 0;
        break;
      case Preset::distill:
        plan.stages[i].weights.stop_ground_grad = true;
        break;
      case Preset::with_heading:
        if (plan.stages[i].weights.heading_coef <= 0)
          plan.stages[i].weights.heading_coef = 1.0;
        break;
      default:
        break;
    }
  }
  return plan;
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["preset"] = preset;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["run_dir"] = run_dir;
  j["city"] = city_path;
  j["config"] = config_path;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : stages)
    arr.push_back({{"name", s.name},
                   {"env_steps", s.env_steps},
                   {"checkpoint", s.checkpoint},
                   {"metrics_csv", s.metrics_csv},
                   {"zero_shot_eval", s.zero_shot_eval}});
  j["stages"] = std::move(arr);
  return j;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write manifest: " + path);
  f << to_json().dump(1) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open manifest: " + path);
  nlohmann::ordered_json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw io_error(std::string("unparsable manifest: ") + e.what());
  }
  RunManifest m;
  m.preset = j.at("preset").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.run_dir = j.at("run_dir").get<std::string>();
  m.city_path = j.at("city").get<std::string>();
  m.config_path = j.at("config").get<std::string>();
  for (const auto& sj : j.at("stages"))
    m.stages.push_back(StageRecord{sj.at("name").get<std::string>(),
                                   sj.at("env_steps").get<int64_t>(),
                                   sj.at("checkpoint").get<std::string>(),
                                   sj.at("metrics_csv").get<std::string>(),
                                   sj.at("zero_shot_eval").get<std::string>()});
  return m;
}

RunManifest run_pipeline(const CityGraph& graph, const RenderContext& ctx,
                         const PipelinePlan& plan, const RunConfig& cfg,
                         const std::string& run_dir) {
  CV_REQUIRE(!plan.stages.empty(), "pipeline: empty stage list");
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);

  RunManifest manifest;
  manifest.preset = plan.preset;
  manifest.seed = cfg.seed;
  manifest.config_hash = cfg.config_hash();
  manifest.run_dir = run_dir;
  manifest.city_path = (fs::path(run_dir) / "city.json").string();
  manifest.config_path = (fs::path(run_dir) / "config.toml").string();
  {
    std::ofstream f(manifest.city_path, std::ios::trunc);
    f << city_to_json(graph);
    std::ofstream g(manifest.config_path, std::ios::trunc);
    g << cfg.to_toml();
  }

  auto params = init_agent_params<float>(cfg.agent, train_regions(graph), cfg.seed);

  EvalOptions eval_opts;
  eval_opts.episodes = cfg.eval_episodes;
  eval_opts.seeds.clear();
  for (int s = 0; s < cfg.eval_seeds; ++s)
    eval_opts.seeds.push_back(derive_seed(cfg.seed, 0xEE00u + static_cast<uint64_t>(s)));
  eval_opts.greedy = cfg.eval_greedy;
  eval_opts.mode = ViewMode::GROUND_ONLY;

  for (size_t i = 0; i < plan.stages.size(); ++i) {
    StageConfig stage = plan.stages[i];
    const std::string name = stage_kind_name(stage.kind);

    // first adaptation/transfer over a new region creates its locale
    for (const auto& region : stage.regions)
      if (!params.has_partition(locale_partition(region))) {
        if (!stage.warm_start_locale.empty()) {
          const std::string src = locale_partition(stage.warm_start_locale);
          CV_REQUIRE(params.has_partition(src),
                     "warm start region '" + stage.warm_start_locale + "' has no locale");
          params.partitions[locale_partition(region)] = params.partitions[src];
        } else {
          add_locale_partition(params, cfg.agent, region,
                               derive_seed(cfg.seed, 0x10CA1Eu + i));
        }
      }
    params.set_all_trainable();

    RunManifest::StageRecord rec;
    rec.name = name;
    rec.env_steps = stage.env_steps;
    rec.metrics_csv = (fs::path(run_dir) / ("metrics_" + name + ".csv")).string();
    run_stage(ctx, params, cfg.agent, cfg.env, stage, rec.metrics_csv);

    rec.checkpoint = (fs::path(run_dir) / ("stage_" + name + ".ckpt")).string();
    save_agent_checkpoint(params, cfg.agent, rec.checkpoint);

    auto report = evaluate(params, cfg.agent, ctx, plan.target_region, cfg.env, eval_opts);
    rec.zero_shot_eval = (fs::path(run_dir) / ("eval_after_" + name + ".json")).string();
    report.save(rec.zero_shot_eval);

    manifest.stages.push_back(std::move(rec));
  }

  manifest.save((fs::path(run_dir) / "manifest.json").string());
  return manifest;
}

}  // namespace crossview
