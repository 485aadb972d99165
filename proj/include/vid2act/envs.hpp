#pragma once

// Pixel point-mass reaching tasks. Each suite has one target environment and
// several sources; exactly one source per suite shares the target's physics
// and goal and differs only in colors, so the most relevant source is known.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "vid2act/episodes_io.hpp"
#include "vid2act/seeding.hpp"

namespace vid2act {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct Palette {
  Rgb background;
  Rgb agent;
  Rgb goal;
};

struct PhysicsParams {
  double mass = 1.0;
  double friction = 0.2;  // fraction of velocity lost per physics step
  double gain = 0.01;     // velocity change per step at |action| = 1 and unit mass
};

struct EnvSpec {
  std::string env_id;
  std::string suite;
  PhysicsParams physics;
  std::array<double, 2> goal{0.5, 0.5};
  Palette palette;
  int native_action_dim = 2;
  int episode_length = 200;  // physics steps
  int action_repeat = 2;
  int height = 64;
  int width = 64;

  int agent_steps() const { return episode_length / action_repeat; }
};

struct StepResult {
  Frame frame;
  double reward = 0.0;
  bool done = false;
};

const std::vector<EnvSpec>& env_registry();
const EnvSpec& find_env_spec(const std::string& env_id);
std::vector<std::string> suite_sources(const std::string& suite);
std::string suite_target(const std::string& suite);

class PointMassEnv {
 public:
  PointMassEnv(EnvSpec spec, std::uint64_t seed);

  Frame reset();
  // Applies the first native_action_dim entries, repeated action_repeat times.
  StepResult step(const ActionVec& action);

  const EnvSpec& spec() const { return spec_; }
  bool done() const { return done_; }
  int steps_taken() const { return t_; }
  std::array<double, 2> position() const { return pos_; }
  std::array<double, 2> velocity() const { return vel_; }
  double speed() const;
  double reward() const;  // reward of the current state
  Frame render() const;

  // Test hook: place the agent explicitly.
  void set_state(std::array<double, 2> pos, std::array<double, 2> vel);

 private:
  void physics_step(const std::array<double, 2>& force);

  EnvSpec spec_;
  Rng rng_;
  std::array<double, 2> pos_{0.5, 0.5};
  std::array<double, 2> vel_{0.0, 0.0};
  int t_ = 0;
  bool done_ = true;
};

PointMassEnv make_env(const std::string& env_id, std::uint64_t seed);

enum class ScriptedPolicy { Random, Medium, Expert };
ScriptedPolicy parse_scripted_policy(const std::string& name);
std::string to_string(ScriptedPolicy p);

/// One action of a scripted controller (proportional-derivative toward the goal).
ActionVec scripted_action(const PointMassEnv& env, ScriptedPolicy policy, Rng& rng, int a_max);

/// Runs one full episode with a scripted policy. Rewards are kept.
Episode rollout_scripted(PointMassEnv& env, ScriptedPolicy policy, Rng& rng, int a_max);

/// Writes `episodes` reward-free episodes to `<out>/<env_id>/` and returns that directory.
std::filesystem::path generate_offline_dataset(const std::string& env_id, ScriptedPolicy policy, int episodes,
                                               const std::filesystem::path& out, std::uint64_t seed, int a_max = 6);

}  // namespace vid2act
