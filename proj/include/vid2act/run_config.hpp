#pragma once

// Run configuration: sectioned key = value files (INI style) or a previously
// resolved JSON config, plus `section.key=value` overrides. Every key is typed
// by its default, and unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vid2act/action_replay.hpp"
#include "vid2act/behavior.hpp"
#include "vid2act/distillation.hpp"
#include "vid2act/world_model.hpp"

namespace vid2act {

struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";
  std::string env = "pm-target";
  bool deterministic = true;

  // [data]
  std::filesystem::path source_root = "data";
  std::filesystem::path teacher_root = "teachers";
  std::vector<std::string> sources;  // source env ids; teacher i is <teacher_root>/<id>.bin

  WorldModelConfig model;  // [model]

  // [distill]
  bool distill_enabled = true;
  DistillConfig distill;

  // [replay]
  bool guidance = true;
  ActionVaeConfig vae;
  double vae_lr = 3e-4;

  BehaviorConfig behavior;  // [behavior]
  int imagine_starts = 0;   // start states per behavior update, 0 = every posterior of the batch

  // [train]
  long env_steps = 21000;  // physics steps, warmup included
  int updates_per_episode = 100;
  int warmup_episodes = 5;
  int batch = 16;
  int length = 16;
  double model_lr = 6e-4;
  double head_lr = 6e-4;
  double clip_norm = 100.0;
  int checkpoint_every = 1000;
  int eval_episodes = 10;
  long buffer_steps = 1'000'000;
  int log_every = 1;

  bool uses_teachers() const { return distill_enabled && !sources.empty(); }
  std::filesystem::path source_dir(std::size_t i) const { return source_root / sources.at(i); }
  std::filesystem::path teacher_path(std::size_t i) const { return teacher_root / (sources.at(i) + ".bin"); }
  /// Range and consistency checks; `check_paths` also requires datasets and teachers to exist.
  void validate(bool check_paths) const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies one `section.key=value` override to a JSON config, typed by the existing value.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Reads an INI-style file (or a .json resolved config), then applies overrides.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
/// Defaults plus overrides, without a file.
RunConfig default_run_config(const std::vector<std::string>& overrides = {});

}  // namespace vid2act
