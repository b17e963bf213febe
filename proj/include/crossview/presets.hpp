#pragma once

#include <string>
#include <vector>

#include "crossview/eval.hpp"
#include "crossview/run_config.hpp"
#include "crossview/trainer.hpp"

namespace crossview {

// The experiment grid. Each preset differs from crossview_full in exactly the
// documented knobs:
//   crossview_full  training(BOTH) -> adaptation(aerial) -> transfer(ground)
//   singleview      ground-only training with lambda = gamma_distill = 0, then transfer
//   no_kl           crossview_full with gamma_distill = 0
//   distill         crossview_full with view dropout off (ground always acts)
//                   and the KL teacher fixed to the ground policy
//   no_adapt        crossview_full without the adaptation stage
//   with_heading    crossview_full plus the heading auxiliary loss
enum class Preset { crossview_full, singleview, no_kl, distill, no_adapt, with_heading };

Preset parse_preset(const std::string& name);
const char* preset_name(Preset p);

struct PipelinePlan {
  std::string preset;
  std::vector<StageConfig> stages;  // executed in order
  std::string target_region;       // zero-shot evaluations run here
};

// Expands a preset against a config and a generated city. Curriculum
// sentinels (d_end = 0, ramp_steps = 0) resolve to the stage regions' maximum
// diagonal and half the stage's updates.
PipelinePlan expand_preset(Preset p, const RunConfig& cfg, const CityGraph& graph);

struct RunManifest {
  std::string preset;
  uint64_t seed = 0;
  std::string config_hash;
  std::string run_dir;
  std::string city_path;
  std::string config_path;

  struct StageRecord {
    std::string name;
    int64_t env_steps = 0;
    std::string checkpoint;
    std::string metrics_csv;
    std::string zero_shot_eval;  // report written right after the stage
  };
  std::vector<StageRecord> stages;

  nlohmann::ordered_json to_json() const;
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

// Executes the plan: stages run in order from one parameter store, each stage
// followed by a checkpoint and a zero-shot ground-view evaluation in the
// target region. Artifacts land under `run_dir`.
RunManifest run_pipeline(const CityGraph& graph, const RenderContext& ctx,
                         const PipelinePlan& plan, const RunConfig& cfg,
                         const std::string& run_dir);

}  // namespace crossview
