#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"
#include "vid2act/envs.hpp"
#include "vid2act/errors.hpp"

using namespace vid2act;
using vid2act::testing::TempDir;

namespace {

double mean_return(const std::string& env_id, ScriptedPolicy policy, int episodes, std::uint64_t seed) {
  PointMassEnv env = make_env(env_id, seed);
  Rng rng(seed + 1);
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    Episode ep = rollout_scripted(env, policy, rng, 6);
    for (std::size_t t = 1; t < ep.length(); ++t) total += (*ep.rewards)[t];
  }
  return total / episodes;
}

bool same_physics(const EnvSpec& a, const EnvSpec& b) {
  return a.physics.mass == b.physics.mass && a.physics.friction == b.physics.friction &&
         a.physics.gain == b.physics.gain && a.goal == b.goal;
}

}  // namespace

TEST(Registry, SuitesHaveExpectedSourceCounts) {
  EXPECT_EQ(suite_sources("pm").size(), 4u);
  EXPECT_EQ(suite_sources("mw").size(), 5u);
  EXPECT_EQ(suite_target("pm"), "pm-target");
  for (const char* id : {"pm-src-match", "pm-src-friction", "pm-src-gain", "pm-src-goal", "pm-target"}) {
    EXPECT_NO_THROW(find_env_spec(id));
  }
  EXPECT_EQ(find_env_spec("pm-target").action_repeat, 2);
  EXPECT_EQ(find_env_spec("mw-target").action_repeat, 1);
}

TEST(Registry, UnknownIdListsRegistry) {
  try {
    make_env("nope", 0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pm-target"), std::string::npos);
  }
}

TEST(Registry, ExactlyOneSourceSharesTargetDynamics) {
  for (const std::string suite : {"pm", "mw"}) {
    const EnvSpec& target = find_env_spec(suite_target(suite));
    int matches = 0;
    for (const auto& id : suite_sources(suite)) {
      const EnvSpec& s = find_env_spec(id);
      if (same_physics(s, target)) {
        ++matches;
        EXPECT_EQ(id, suite + "-src-match");
      }
      // Every physics variant differs from every other in at least one parameter.
      for (const auto& other : suite_sources(suite)) {
        if (other != id) {
          EXPECT_FALSE(same_physics(s, find_env_spec(other)));
        }
      }
    }
    EXPECT_EQ(matches, 1) << suite;
  }
}

TEST(Env, ResetShapeAndDeterminism) {
  PointMassEnv a = make_env("pm-target", 5), b = make_env("pm-target", 5);
  Frame fa = a.reset(), fb = b.reset();
  EXPECT_EQ(fa.height, 64);
  EXPECT_EQ(fa.width, 64);
  EXPECT_EQ(fa.channels, 3);
  EXPECT_EQ(fa, fb);
  Rng ra(3), rb(3);
  while (!a.done()) {
    StepResult x = a.step(scripted_action(a, ScriptedPolicy::Medium, ra, 6));
    StepResult y = b.step(scripted_action(b, ScriptedPolicy::Medium, rb, 6));
    ASSERT_EQ(x.frame, y.frame);
    ASSERT_EQ(x.reward, y.reward);
    EXPECT_GE(x.reward, 0.0);
    EXPECT_LE(x.reward, 1.0);
  }
}

TEST(Env, LifecycleContract) {
  PointMassEnv env = make_env("mw-target", 1);
  env.reset();
  ActionVec zero = zero_action(6, 3);
  int steps = 0;
  while (!env.step(zero).done) ++steps;
  EXPECT_EQ(steps + 1, env.spec().agent_steps());
  EXPECT_THROW(env.step(zero), ContractError);
  env.reset();
  EXPECT_FALSE(env.done());
  EXPECT_NO_THROW(env.step(zero));
}

TEST(Env, ZeroActionFromRestIsStationary) {
  PointMassEnv env = make_env("pm-target", 2);
  Frame f0 = env.reset();
  auto p0 = env.position();
  StepResult r = env.step(zero_action(6, 2));
  EXPECT_EQ(env.position(), p0);
  EXPECT_EQ(r.frame, f0);
}

TEST(Env, RewardIsOneAtGoal) {
  PointMassEnv env = make_env("pm-target", 2);
  env.reset();
  env.set_state(env.spec().goal, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(env.reward(), 1.0);
  EXPECT_DOUBLE_EQ(env.step(zero_action(6, 2)).reward, 1.0);
}

TEST(Env, SpeedDecaysUnderFriction) {
  for (const auto& spec : env_registry()) {
    PointMassEnv env(spec, 9);
    env.reset();
    env.set_state({0.5, 0.5}, {0.004, -0.003});
    double prev = env.speed();
    for (int i = 0; i < 100 && !env.done(); ++i) {
      env.step(zero_action(6, spec.native_action_dim));
      EXPECT_LT(env.speed(), prev) << spec.env_id << " step " << i;
      prev = env.speed();
    }
  }
}

TEST(Env, InertAxesIgnoreAction) {
  PointMassEnv a = make_env("pm-target", 4), b = make_env("pm-target", 4);
  a.reset();
  b.reset();
  const std::vector<float> x{0.5f, -0.5f}, y{0.5f, -0.5f, 0.9f, -0.9f};
  EXPECT_EQ(a.step(pad_action(x, 6)).frame, b.step(pad_action(y, 6)).frame);
}

TEST(Policies, ExpertBeatsMediumBeatsRandom) {
  for (const auto& spec : env_registry()) {
    const double expert = mean_return(spec.env_id, ScriptedPolicy::Expert, 20, 100);
    const double medium = mean_return(spec.env_id, ScriptedPolicy::Medium, 20, 100);
    const double random = mean_return(spec.env_id, ScriptedPolicy::Random, 20, 100);
    EXPECT_GT(expert, medium) << spec.env_id;
    EXPECT_GT(medium, random) << spec.env_id;
  }
}

TEST(OfflineData, WrittenDatasetLoads) {
  TempDir dir;
  auto path = generate_offline_dataset("pm-src-gain", ScriptedPolicy::Medium, 3, dir.path(), 11);
  EXPECT_EQ(path, dir / "pm-src-gain");
  auto eps = load_dataset(dir.path(), "pm-src-gain");
  ASSERT_EQ(eps.size(), 3u);
  for (const auto& ep : eps) {
    EXPECT_FALSE(ep.has_rewards());
    EXPECT_EQ(ep.length(), static_cast<std::size_t>(find_env_spec("pm-src-gain").agent_steps() + 1));
    EXPECT_EQ(ep.actions[1].native_dim, 2);
    EXPECT_EQ(ep.actions[1].padded_dim(), 6);
  }
  // Same seed gives the same dataset, including directory names.
  TempDir dir2;
  generate_offline_dataset("pm-src-gain", ScriptedPolicy::Medium, 3, dir2.path(), 11);
  auto again = load_dataset(dir2.path(), "pm-src-gain");
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_EQ(eps[i].frames, again[i].frames);
}
