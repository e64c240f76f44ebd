#pragma once

#include <string>
#include <vector>

#include "cli/config_json.h"
#include "json.hpp"

namespace nvs {

// Each command writes <out>/run_manifest.json (subcommand, tool version,
// resolved config, input and output paths) before doing any work, prints
// one summary JSON line to stdout and returns 0. Failures are exceptions;
// the binary maps them to exit codes (2 validation, 3 I/O, 4 numeric).

struct SynthArgs {
  std::string spec_path;  // scene spec JSON, or
  std::string preset;     // named preset ("forward-facing", "hemisphere")
  std::string name = "scene";
  bool specular = false;
  bool seed_explicit = false;  // --seed overrides a spec file's own seed
  int views = -1;  // preset overrides, -1 keeps the preset value
  int size = -1;
  std::string out;
};
int cmd_synth(const SynthArgs& args, ToolConfig cfg,
              const nlohmann::json& manifest);

struct TrainArgs {
  std::vector<std::string> scenes;
  std::string out;
  int steps = -1;  // -1 keeps config total_steps
};
int cmd_train(const TrainArgs& args, ToolConfig cfg,
              const nlohmann::json& manifest);

struct FinetuneArgs {
  std::string checkpoint;
  std::string scene;
  std::string out;
  int steps = -1;
};
int cmd_finetune(const FinetuneArgs& args, ToolConfig cfg,
                 const nlohmann::json& manifest);

struct RenderArgs {
  std::string checkpoint;
  std::string scene;
  std::string out;
  int view = -1;       // render this scene view's pose, scored against it
  int orbit = -1;      // or this many frames on a smooth orbit
  int n_sources = -1;  // override render.n_source_views
};
int cmd_render(const RenderArgs& args, ToolConfig cfg,
               const nlohmann::json& manifest);

struct EvalArgs {
  std::string checkpoint;
  std::string scene;
  std::string out;
  double holdout = -1;  // override train.holdout_fraction
};
int cmd_eval(const EvalArgs& args, ToolConfig cfg,
             const nlohmann::json& manifest);

// "none", "ray-transformer", "view-directions" or the + join of both.
std::string ablation_tag(const RadianceConfig& cfg);

// Cameras on a circular path around the scene's mean look-at point, using
// view 0's intrinsics.
std::vector<Camera> orbit_cameras(const Scene& scene, int n_frames);

}  // namespace nvs
