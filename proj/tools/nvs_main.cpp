#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.h"
#include "core/error.h"
#include "core/parallel.h"

namespace {

using nvs::ToolConfig;

struct Shared {
  uint64_t seed = 0;
  int workers = -1;
  bool det_on = false, det_off = false;
  std::string config_path;
  std::string ablate;
};

void add_shared(CLI::App* cmd, Shared& s) {
  cmd->add_option("--seed", s.seed, "RNG seed for sampling and init");
  cmd->add_option("--workers", s.workers, "max OpenMP workers");
  cmd->add_flag("--deterministic", s.det_on,
                "midpoint depth bins, render jitter off (the default)");
  cmd->add_flag("--no-deterministic", s.det_off,
                "jittered stochastic render sampling");
  cmd->add_option("--config", s.config_path,
                  "JSON config file or a run manifest to reproduce");
  cmd->add_option("--ablate", s.ablate,
                  "model ablation: ray-transformer or view-directions")
      ->check(CLI::IsMember({"ray-transformer", "view-directions", "none"}));
}

// Precedence: flag > config file > built-in default.
ToolConfig resolve(const CLI::App* cmd, const Shared& s,
                   nlohmann::json* manifest) {
  if (s.det_on && s.det_off)
    throw nvs::ContractError("--deterministic conflicts with --no-deterministic");
  ToolConfig cfg;
  if (!s.config_path.empty()) cfg = nvs::load_tool_config(s.config_path, manifest);
  if (cmd->count("--seed")) cfg.seed = s.seed;
  if (s.det_on) cfg.render.deterministic = true;
  if (s.det_off) cfg.render.deterministic = false;
  if (s.workers > 0) nvs::par::set_max_workers(s.workers);
  if (cmd->count("--ablate")) {
    cfg.model.ablate_ray_transformer = s.ablate == "ray-transformer";
    cfg.model.ablate_view_directions = s.ablate == "view-directions";
  }
  return cfg;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const nvs::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nvs::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-based novel view synthesis tool"};
  app.set_version_flag("--version", std::string("nvs ") + nvs::kToolVersion);
  app.require_subcommand(1);

  Shared s_synth, s_train, s_finetune, s_render, s_eval;
  nvs::SynthArgs synth_args;
  nvs::TrainArgs train_args;
  nvs::FinetuneArgs finetune_args;
  nvs::RenderArgs render_args;
  nvs::EvalArgs eval_args;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene");
  add_shared(synth, s_synth);
  synth->add_option("--spec", synth_args.spec_path, "scene spec JSON file");
  synth->add_option("--preset", synth_args.preset,
                    "rig preset: forward-facing (24 views) or hemisphere (32)");
  synth->add_option("--name", synth_args.name, "scene name for presets");
  synth->add_flag("--specular", synth_args.specular,
                  "preset scenes get a strong highlight");
  synth->add_option("--views", synth_args.views, "override preset view count");
  synth->add_option("--size", synth_args.size, "override preset image size");
  synth->add_option("--out", synth_args.out, "output scene directory");

  CLI::App* train = app.add_subcommand("train", "train a model on scenes");
  add_shared(train, s_train);
  train->add_option("--scene", train_args.scenes, "scene directory (repeatable)");
  train->add_option("--out", train_args.out, "output directory");
  train->add_option("--steps", train_args.steps, "override train.total_steps");

  CLI::App* finetune = app.add_subcommand("finetune", "fine-tune on one scene");
  add_shared(finetune, s_finetune);
  finetune->add_option("--checkpoint", finetune_args.checkpoint, "input checkpoint");
  finetune->add_option("--scene", finetune_args.scene, "scene directory");
  finetune->add_option("--out", finetune_args.out, "output directory");
  finetune->add_option("--steps", finetune_args.steps, "fine-tune steps");

  CLI::App* render = app.add_subcommand("render", "render novel views");
  add_shared(render, s_render);
  render->add_option("--checkpoint", render_args.checkpoint, "input checkpoint");
  render->add_option("--scene", render_args.scene, "scene directory");
  render->add_option("--out", render_args.out, "output directory");
  render->add_option("--view", render_args.view,
                     "render this scene view's pose and score against it");
  render->add_option("--orbit", render_args.orbit, "render N orbit frames");
  render->add_option("--n-sources", render_args.n_sources,
                     "override render.n_source_views");

  CLI::App* eval = app.add_subcommand("eval", "score holdout views");
  add_shared(eval, s_eval);
  eval->add_option("--checkpoint", eval_args.checkpoint, "input checkpoint");
  eval->add_option("--scene", eval_args.scene, "scene directory");
  eval->add_option("--out", eval_args.out, "output directory");
  eval->add_option("--holdout", eval_args.holdout,
                   "override train.holdout_fraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  return guarded([&]() -> int {
    nlohmann::json manifest;
    if (synth->parsed()) {
      ToolConfig cfg = resolve(synth, s_synth, &manifest);
      synth_args.seed_explicit = synth->count("--seed") > 0;
      return nvs::cmd_synth(synth_args, cfg, manifest);
    }
    if (train->parsed()) {
      ToolConfig cfg = resolve(train, s_train, &manifest);
      return nvs::cmd_train(train_args, cfg, manifest);
    }
    if (finetune->parsed()) {
      ToolConfig cfg = resolve(finetune, s_finetune, &manifest);
      return nvs::cmd_finetune(finetune_args, cfg, manifest);
    }
    if (render->parsed()) {
      ToolConfig cfg = resolve(render, s_render, &manifest);
      return nvs::cmd_render(render_args, cfg, manifest);
    }
    ToolConfig cfg = resolve(eval, s_eval, &manifest);
    return nvs::cmd_eval(eval_args, cfg, manifest);
  });
}
