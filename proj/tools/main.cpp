#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "crossview/eval.hpp"
#include "crossview/gradcheck.hpp"
#include "crossview/plot.hpp"
#include "crossview/presets.hpp"
#include "crossview/run_config.hpp"

namespace fs = std::filesystem;
using namespace crossview;

namespace {

// Exit codes: 0 ok, 1 usage, 2 numerical failure, 3 I/O failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

std::string data_dir() {
  const char* env = std::getenv("CROSSVIEW_DATA_DIR");
  return env && *env ? env : "runs";
}

CityGraph load_city(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open city file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return city_from_json(ss.str());
}

RunConfig load_config(const std::string& config_path, uint64_t seed_override,
                      bool deterministic) {
  RunConfig cfg =
      config_path.empty() ? RunConfig::defaults() : RunConfig::from_toml_file(config_path);
  if (seed_override != 0) cfg.seed = seed_override;
  if (deterministic) cfg.deterministic = true;
  return cfg;
}

ViewMode parse_view(const std::string& v) {
  if (v == "ground") return ViewMode::GROUND_ONLY;
  if (v == "aerial") return ViewMode::AERIAL_ONLY;
  if (v == "both") return ViewMode::BOTH;
  throw io_error("unknown view '" + v + "' (expected ground|aerial|both)");
}

void print_eval(const EvalReport& r) {
  std::cout << "region=" << r.region << " view=" << view_mode_name(r.mode)
            << (r.greedy ? " greedy" : " sampled")
            << (r.locale_was_fresh ? " (fresh locale)" : "") << "\n";
  std::cout << "mean_reward=" << r.mean_reward << " +- " << r.reward_stderr
            << "  success_rate=" << r.mean_success << " +- " << r.success_stderr << "\n";
  for (const auto& s : r.per_seed)
    std::cout << "  seed " << s.seed << ": reward=" << s.mean_reward
              << " success=" << s.success_rate << "\n";
}

// A single training stage invoked directly (train | adapt | transfer).
int run_single_stage(StageKind kind, const std::string& config_path,
                     const std::string& city_path, const std::string& checkpoint_in,
                     const std::string& out_dir_flag, uint64_t seed, int64_t steps,
                     bool deterministic) {
  RunConfig cfg = load_config(config_path, seed, deterministic);
  CityGraph graph = city_path.empty() ? generate_city(cfg.seed, cfg.city)
                                      : load_city(city_path);
  cfg.env.landmark_categories = graph.config.landmark_categories;
  cfg.agent = [&] {
    AgentConfig base = AgentConfig::for_env(cfg.env);
    base.enc_hidden = cfg.agent.enc_hidden;
    base.embed_dim = cfg.agent.embed_dim;
    base.locale_hidden = cfg.agent.locale_hidden;
    base.policy_hidden = cfg.agent.policy_hidden;
    base.aerial_conv = cfg.agent.aerial_conv;
    base.conv_channels = cfg.agent.conv_channels;
    base.feed_prev_action_reward = cfg.agent.feed_prev_action_reward;
    return base;
  }();
  RenderContext ctx(graph, cfg.env);

  std::vector<std::string> trains;
  std::string target;
  for (const auto& r : graph.regions)
    (r.role == RegionSpec::Role::train ? trains.push_back(r.name) : (void)(target = r.name));

  nn::ParamStore<float> params;
  AgentConfig acfg = cfg.agent;
  if (!checkpoint_in.empty()) {
    auto [p, a] = load_agent_checkpoint(checkpoint_in);
    params = std::move(p);
    acfg = a;
  } else {
    CV_REQUIRE(kind == StageKind::training,
               "adapt/transfer need --checkpoint from the previous stage");
    params = init_agent_params<float>(acfg, trains, cfg.seed);
  }

  StageConfig stage;
  switch (kind) {
    case StageKind::training:
      stage = make_training_stage(trains, steps > 0 ? steps : cfg.train_steps, cfg.seed);
      break;
    case StageKind::adaptation:
      stage = make_adaptation_stage(target, steps > 0 ? steps : cfg.adapt_steps, cfg.seed);
      break;
    case StageKind::transfer:
      stage = make_transfer_stage(target, steps > 0 ? steps : cfg.transfer_steps, cfg.seed);
      break;
  }
  // resolve loss weights, budgets and curriculum the same way pipelines do
  PipelinePlan plan = expand_preset(Preset::crossview_full, cfg, graph);
  for (auto& s : plan.stages)
    if (s.kind == kind) {
      s.env_steps = stage.env_steps;
      stage = s;
    }

  for (const auto& region : stage.regions)
    if (!params.has_partition(locale_partition(region)))
      add_locale_partition(params, acfg, region, derive_seed(cfg.seed, 0x10CA1Eu));
  params.set_all_trainable();

  std::string out_dir = out_dir_flag.empty() ? data_dir() : out_dir_flag;
  fs::create_directories(out_dir);
  std::string name = stage_kind_name(kind);
  std::string csv = (fs::path(out_dir) / ("metrics_" + name + ".csv")).string();
  auto result = run_stage(ctx, params, acfg, cfg.env, stage, csv);
  std::string ckpt = (fs::path(out_dir) / ("stage_" + name + ".ckpt")).string();
  save_agent_checkpoint(params, acfg, ckpt);
  std::cout << name << ": updates=" << result.updates
            << " env_steps=" << result.env_steps_consumed
            << " episodes=" << result.episodes << " reward_mean=" << result.last_reward_mean
            << "\n"
            << "checkpoint: " << ckpt << "\nmetrics: " << csv << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossview: cross-view policy learning for goal-driven navigation"};
  app.require_subcommand(1);

  // gen-city
  auto* gen = app.add_subcommand("gen-city", "generate a synthetic city graph");
  uint64_t gen_seed = 7;
  std::string gen_out = "city.json";
  int gen_cells = 24, gen_train_regions = 2;
  double gen_pitch = 10.0;
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--out", gen_out, "output json path");
  gen->add_option("--cells", gen_cells, "cells per region side");
  gen->add_option("--train-regions", gen_train_regions, "number of training regions");
  gen->add_option("--pitch", gen_pitch, "grid pitch in units");

  // train / adapt / transfer
  struct StageArgs {
    std::string config, city, checkpoint, out;
    uint64_t seed = 0;
    int64_t steps = 0;
    bool deterministic = false;
  };
  auto add_stage_cmd = [&](const char* name, const char* desc) {
    auto* cmd = app.add_subcommand(name, desc);
    auto args = std::make_shared<StageArgs>();
    cmd->add_option("--config", args->config, "run config TOML");
    cmd->add_option("--city", args->city, "city json (generated from config when omitted)");
    cmd->add_option("--checkpoint", args->checkpoint, "input checkpoint");
    cmd->add_option("--out", args->out, "output directory");
    cmd->add_option("--seed", args->seed, "seed override");
    cmd->add_option("--steps", args->steps, "environment-step budget override");
    cmd->add_flag("--deterministic", args->deterministic, "single-actor synchronous mode");
    return std::make_pair(cmd, args);
  };
  auto [train_cmd, train_args] = add_stage_cmd("train", "run the cross-view training stage");
  auto [adapt_cmd, adapt_args] = add_stage_cmd("adapt", "run the aerial-only adaptation stage");
  auto [transfer_cmd, transfer_args] =
      add_stage_cmd("transfer", "run the ground-only transfer stage");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run a full preset pipeline");
  std::string pipe_preset = "crossview_full", pipe_config, pipe_out;
  uint64_t pipe_seed = 0;
  bool pipe_det = false;
  pipe->add_option("--preset", pipe_preset,
                   "crossview_full|singleview|no_kl|distill|no_adapt|with_heading");
  pipe->add_option("--config", pipe_config, "run config TOML");
  pipe->add_option("--out", pipe_out, "run directory");
  pipe->add_option("--seed", pipe_seed, "seed override");
  pipe->add_flag("--deterministic", pipe_det, "single-actor synchronous mode");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (no parameter updates)");
  std::string ev_ckpt, ev_city, ev_region = "heldout", ev_view = "ground", ev_out,
              ev_baseline, ev_config;
  int ev_episodes = 20, ev_seeds = 5;
  bool ev_greedy = false, ev_zero_shot = false;
  uint64_t ev_seed = 1;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--city", ev_city, "city json")->required();
  ev->add_option("--config", ev_config, "run config TOML (environment settings)");
  ev->add_option("--region", ev_region, "region name");
  ev->add_option("--view", ev_view, "ground|aerial|both");
  ev->add_option("--episodes", ev_episodes, "episodes per seed");
  ev->add_option("--seeds", ev_seeds, "number of evaluation seeds");
  ev->add_option("--seed", ev_seed, "base seed");
  ev->add_flag("--greedy", ev_greedy, "argmax actions");
  ev->add_flag("--zero-shot", ev_zero_shot, "alias documenting the no-update protocol");
  ev->add_option("--out", ev_out, "write the report json here");
  ev->add_option("--baseline", ev_baseline, "compare against another report json");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  int gc_instances = 20;
  gc->add_option("--instances", gc_instances, "random instances per check");

  // plot
  auto* pl = app.add_subcommand("plot", "render reward-vs-steps curves to SVG");
  std::string pl_out = "curves.svg";
  std::vector<std::string> pl_series;
  pl->add_option("--out", pl_out, "output svg");
  pl->add_option("--series", pl_series,
               "label=csv1;csv2;... (repeat per series)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      CityGenConfig c;
      c.region_cells_x = gen_cells;
      c.region_cells_y = gen_cells;
      c.train_regions = gen_train_regions;
      c.pitch = gen_pitch;
      auto graph = generate_city(gen_seed, c);
      std::ofstream f(gen_out, std::ios::trunc);
      if (!f) throw io_error("cannot write " + gen_out);
      f << city_to_json(graph);
      std::cout << "wrote " << gen_out << " (" << graph.node_count() << " nodes, "
                << graph.regions.size() << " regions)\n";
      return kExitOk;
    }

    if (train_cmd->parsed())
      return run_single_stage(StageKind::training, train_args->config, train_args->city,
                              train_args->checkpoint, train_args->out, train_args->seed,
                              train_args->steps, train_args->deterministic);
    if (adapt_cmd->parsed())
      return run_single_stage(StageKind::adaptation, adapt_args->config, adapt_args->city,
                              adapt_args->checkpoint, adapt_args->out, adapt_args->seed,
                              adapt_args->steps, adapt_args->deterministic);
    if (transfer_cmd->parsed())
      return run_single_stage(StageKind::transfer, transfer_args->config, transfer_args->city,
                              transfer_args->checkpoint, transfer_args->out,
                              transfer_args->seed, transfer_args->steps,
                              transfer_args->deterministic);

    if (pipe->parsed()) {
      RunConfig cfg = load_config(pipe_config, pipe_seed, pipe_det);
      auto graph = generate_city(cfg.seed, cfg.city);
      cfg.env.landmark_categories = graph.config.landmark_categories;
      RenderContext ctx(graph, cfg.env);
      auto plan = expand_preset(parse_preset(pipe_preset), cfg, graph);
      std::string run_dir =
          pipe_out.empty()
              ? (fs::path(data_dir()) /
                 (plan.preset + "_seed" + std::to_string(cfg.seed))).string()
              : pipe_out;
      auto manifest = run_pipeline(graph, ctx, plan, cfg, run_dir);
      std::cout << "pipeline " << plan.preset << " finished; manifest: "
                << (fs::path(run_dir) / "manifest.json").string() << "\n";
      for (const auto& s : manifest.stages)
        std::cout << "  " << s.name << ": " << s.checkpoint << "\n";
      return kExitOk;
    }

    if (ev->parsed()) {
      RunConfig cfg = load_config(ev_config, 0, false);
      auto graph = load_city(ev_city);
      cfg.env.landmark_categories = graph.config.landmark_categories;
      RenderContext ctx(graph, cfg.env);
      auto [params, acfg] = load_agent_checkpoint(ev_ckpt);
      EvalOptions opts;
      opts.episodes = ev_episodes;
      opts.greedy = ev_greedy;
      opts.mode = parse_view(ev_view);
      opts.seeds.clear();
      for (int s = 0; s < ev_seeds; ++s)
        opts.seeds.push_back(derive_seed(ev_seed, 0xEE00u + static_cast<uint64_t>(s)));
      auto report = evaluate(params, acfg, ctx, ev_region, cfg.env, opts);
      print_eval(report);
      if (!ev_out.empty()) report.save(ev_out);
      if (!ev_baseline.empty()) {
        auto base = EvalReport::load(ev_baseline);
        auto cmp = compare(report, base);
        std::cout << "compare vs baseline: wins=" << cmp.a_wins << "/" << cmp.n
                  << " sign_test_p=" << cmp.sign_test_p << " mean_ratio=" << cmp.mean_ratio
                  << "\n";
      }
      return kExitOk;
    }

    if (gc->parsed()) {
      bool ok = run_gradcheck_suite(gc_instances, std::cout);
      std::cout << (ok ? "gradcheck: ALL PASS\n" : "gradcheck: FAILURES\n");
      return ok ? kExitOk : kExitNumeric;
    }

    if (pl->parsed()) {
      std::vector<PlotSeries> series;
      for (const auto& spec : pl_series) {
        size_t eq = spec.find('=');
        if (eq == std::string::npos)
          throw io_error("bad --series '" + spec + "' (expected label=csv1;csv2)");
        PlotSeries s;
        s.label = spec.substr(0, eq);
        std::stringstream ss(spec.substr(eq + 1));
        std::string path;
        while (std::getline(ss, path, ';'))
          if (!path.empty()) s.csv_paths.push_back(path);
        series.push_back(std::move(s));
      }
      plot_reward_curves(series, pl_out);
      std::cout << "wrote " << pl_out << "\n";
      return kExitOk;
    }
  } catch (const numeric_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const contract_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
