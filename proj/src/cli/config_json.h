#pragma once

#include <string>

#include "json.hpp"
#include "model/radiance_net.h"
#include "render/renderer.h"
#include "synth/synth.h"
#include "train/trainer.h"

namespace nvs {

inline constexpr const char* kToolVersion = "1.0.0";

// Every knob the tool exposes, in one place. `seed` feeds both training and
// render sampling; the render section is also used for training-time evals.
struct ToolConfig {
  RadianceConfig model;
  TrainConfig train;
  RenderConfig render;
  uint64_t seed = 0;
};

// All keys materialized, including defaults, so a run manifest pins the
// exact configuration.
nlohmann::json tool_config_to_json(const ToolConfig& cfg);

// Rejects unknown keys with the offending dotted path.
ToolConfig tool_config_from_json(const nlohmann::json& j);

// Reads either a bare config object or a run manifest (detected by its
// "subcommand" key, config taken from the "config" field).
ToolConfig load_tool_config(const std::string& path,
                            nlohmann::json* manifest_out = nullptr);

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);
SceneSpec load_scene_spec(const std::string& path);

}  // namespace nvs
