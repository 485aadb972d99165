#include "vid2act/envs.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vid2act/errors.hpp"

namespace vid2act {

namespace {

constexpr double kAgentRadius = 6.0;  // pixels
constexpr double kGoalHalf = 3.0;     // pixels

EnvSpec make_spec(std::string id, std::string suite, PhysicsParams phys, std::array<double, 2> goal, Palette pal,
                  int native, int length, int repeat) {
  EnvSpec s;
  s.env_id = std::move(id);
  s.suite = std::move(suite);
  s.physics = phys;
  s.goal = goal;
  s.palette = pal;
  s.native_action_dim = native;
  s.episode_length = length;
  s.action_repeat = repeat;
  return s;
}

std::vector<EnvSpec> build_registry() {
  std::vector<EnvSpec> r;
  // DMC-like suite: action repeat 2, four sources.
  const PhysicsParams pm{1.0, 0.2, 0.01};
  const std::array<double, 2> pm_goal{0.7, 0.3};
  r.push_back(make_spec("pm-target", "pm", pm, pm_goal, {{20, 20, 60}, {230, 200, 40}, {200, 40, 40}}, 2, 200, 2));
  r.push_back(make_spec("pm-src-match", "pm", pm, pm_goal, {{60, 20, 20}, {40, 200, 230}, {40, 200, 40}}, 2, 200, 2));
  r.push_back(make_spec("pm-src-friction", "pm", {1.0, 0.6, 0.01}, pm_goal, {{20, 60, 20}, {230, 230, 230}, {200, 40, 200}}, 2, 200, 2));
  r.push_back(make_spec("pm-src-gain", "pm", {1.0, 0.2, -0.01}, pm_goal, {{50, 50, 50}, {240, 120, 20}, {20, 120, 240}}, 2, 200, 2));
  r.push_back(make_spec("pm-src-goal", "pm", {2.0, 0.2, 0.01}, {0.25, 0.75}, {{10, 40, 40}, {250, 250, 120}, {120, 250, 120}}, 2, 200, 2));
  // Meta-World-like suite: no action repeat, five sources, a third (inert) action axis.
  const PhysicsParams mw{1.0, 0.3, 0.015};
  const std::array<double, 2> mw_goal{0.3, 0.35};
  r.push_back(make_spec("mw-target", "mw", mw, mw_goal, {{30, 30, 30}, {220, 60, 60}, {60, 220, 60}}, 3, 200, 1));
  r.push_back(make_spec("mw-src-match", "mw", mw, mw_goal, {{70, 50, 20}, {60, 60, 220}, {220, 220, 60}}, 3, 200, 1));
  r.push_back(make_spec("mw-src-friction", "mw", {1.0, 0.75, 0.015}, mw_goal, {{20, 50, 70}, {250, 150, 150}, {150, 250, 250}}, 3, 200, 1));
  r.push_back(make_spec("mw-src-gain", "mw", {1.0, 0.3, -0.015}, mw_goal, {{40, 10, 50}, {200, 200, 200}, {250, 90, 0}}, 3, 200, 1));
  r.push_back(make_spec("mw-src-goal", "mw", {1.5, 0.3, 0.015}, {0.75, 0.8}, {{5, 5, 5}, {120, 240, 60}, {240, 60, 120}}, 3, 200, 1));
  r.push_back(make_spec("mw-src-mass", "mw", {4.0, 0.3, 0.015}, mw_goal, {{60, 60, 90}, {250, 250, 0}, {0, 250, 250}}, 3, 200, 1));
  return r;
}

double coverage_disc(double px, double py, double cx, double cy, double radius) {
  const double d = std::hypot(px - cx, py - cy);
  return std::clamp(radius + 0.5 - d, 0.0, 1.0);
}

double coverage_box(double px, double py, double cx, double cy, double half) {
  const double dx = std::clamp(half + 0.5 - std::abs(px - cx), 0.0, 1.0);
  const double dy = std::clamp(half + 0.5 - std::abs(py - cy), 0.0, 1.0);
  return dx * dy;
}

std::uint8_t blend(std::uint8_t under, std::uint8_t over, double alpha) {
  return static_cast<std::uint8_t>(std::lround(under * (1.0 - alpha) + over * alpha));
}

}  // namespace

const std::vector<EnvSpec>& env_registry() {
  static const std::vector<EnvSpec> registry = build_registry();
  return registry;
}

const EnvSpec& find_env_spec(const std::string& env_id) {
  for (const EnvSpec& s : env_registry()) {
    if (s.env_id == env_id) return s;
  }
  std::ostringstream os;
  os << "unknown env_id '" << env_id << "'; registered:";
  for (const EnvSpec& s : env_registry()) os << ' ' << s.env_id;
  throw ConfigError(os.str());
}

std::vector<std::string> suite_sources(const std::string& suite) {
  std::vector<std::string> out;
  for (const EnvSpec& s : env_registry()) {
    if (s.suite == suite && s.env_id.find("-src-") != std::string::npos) out.push_back(s.env_id);
  }
  if (out.empty()) throw ConfigError("unknown suite '" + suite + "'");
  return out;
}

std::string suite_target(const std::string& suite) {
  for (const EnvSpec& s : env_registry()) {
    if (s.suite == suite && s.env_id.ends_with("-target")) return s.env_id;
  }
  throw ConfigError("unknown suite '" + suite + "'");
}

PointMassEnv::PointMassEnv(EnvSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {
  if (spec_.episode_length < 2 || spec_.action_repeat < 1 || spec_.agent_steps() < 1) {
    throw ConfigError("env " + spec_.env_id + ": episode_length >= 2 and action_repeat >= 1 required");
  }
}

PointMassEnv make_env(const std::string& env_id, std::uint64_t seed) { return PointMassEnv(find_env_spec(env_id), seed); }

Frame PointMassEnv::reset() {
  std::uniform_real_distribution<double> u(0.1, 0.9);
  pos_ = {u(rng_), u(rng_)};
  vel_ = {0.0, 0.0};
  t_ = 0;
  done_ = false;
  return render();
}

void PointMassEnv::physics_step(const std::array<double, 2>& force) {
  const PhysicsParams& p = spec_.physics;
  for (int i = 0; i < 2; ++i) {
    vel_[i] = vel_[i] * (1.0 - p.friction) + p.gain * force[i] / p.mass;
    pos_[i] += vel_[i];
    if (pos_[i] < 0.0) {
      pos_[i] = 0.0;
      vel_[i] = 0.0;
    } else if (pos_[i] > 1.0) {
      pos_[i] = 1.0;
      vel_[i] = 0.0;
    }
  }
}

StepResult PointMassEnv::step(const ActionVec& action) {
  if (done_) throw ContractError("env " + spec_.env_id + ": step() called on a finished episode; call reset()");
  if (action.padded_dim() < spec_.native_action_dim) throw ValidationError("action has fewer dims than the env needs");
  std::array<double, 2> force{0.0, 0.0};
  for (int i = 0; i < 2 && i < spec_.native_action_dim; ++i) {
    const double a = action.values[static_cast<std::size_t>(i)];
    if (!std::isfinite(a) || a < -1.0 || a > 1.0) throw ValidationError("action entry outside [-1, 1]");
    force[i] = a;
  }
  double reward = 0.0;
  for (int k = 0; k < spec_.action_repeat; ++k) {
    physics_step(force);
    reward += this->reward();
  }
  reward /= spec_.action_repeat;
  ++t_;
  done_ = t_ >= spec_.agent_steps();
  return {render(), reward, done_};
}

double PointMassEnv::speed() const { return std::hypot(vel_[0], vel_[1]); }

double PointMassEnv::reward() const {
  const double d = std::hypot(pos_[0] - spec_.goal[0], pos_[1] - spec_.goal[1]);
  return std::clamp(1.0 - d / std::sqrt(2.0), 0.0, 1.0);
}

void PointMassEnv::set_state(std::array<double, 2> pos, std::array<double, 2> vel) {
  pos_ = pos;
  vel_ = vel;
}

Frame PointMassEnv::render() const {
  Frame f(spec_.height, spec_.width, 3);
  const Palette& pal = spec_.palette;
  const double sx = spec_.width - 1, sy = spec_.height - 1;
  const double gx = spec_.goal[0] * sx, gy = spec_.goal[1] * sy;
  const double ax = pos_[0] * sx, ay = pos_[1] * sy;
  for (int y = 0; y < spec_.height; ++y) {
    for (int x = 0; x < spec_.width; ++x) {
      Rgb c = pal.background;
      const double g = coverage_box(x, y, gx, gy, kGoalHalf);
      if (g > 0) c = {blend(c.r, pal.goal.r, g), blend(c.g, pal.goal.g, g), blend(c.b, pal.goal.b, g)};
      const double a = coverage_disc(x, y, ax, ay, kAgentRadius);
      if (a > 0) c = {blend(c.r, pal.agent.r, a), blend(c.g, pal.agent.g, a), blend(c.b, pal.agent.b, a)};
      f.at(y, x, 0) = c.r;
      f.at(y, x, 1) = c.g;
      f.at(y, x, 2) = c.b;
    }
  }
  return f;
}

ScriptedPolicy parse_scripted_policy(const std::string& name) {
  if (name == "random") return ScriptedPolicy::Random;
  if (name == "scripted-medium" || name == "medium") return ScriptedPolicy::Medium;
  if (name == "scripted-expert" || name == "expert") return ScriptedPolicy::Expert;
  throw ConfigError("unknown policy kind '" + name + "' (expected random | scripted-medium | scripted-expert)");
}

std::string to_string(ScriptedPolicy p) {
  switch (p) {
    case ScriptedPolicy::Random: return "random";
    case ScriptedPolicy::Medium: return "scripted-medium";
    case ScriptedPolicy::Expert: return "scripted-expert";
  }
  return "?";
}

ActionVec scripted_action(const PointMassEnv& env, ScriptedPolicy policy, Rng& rng, int a_max) {
  const EnvSpec& s = env.spec();
  std::vector<float> raw(static_cast<std::size_t>(s.native_action_dim), 0.0f);
  if (policy == ScriptedPolicy::Random) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (float& v : raw) v = u(rng);
    return pad_action(raw, a_max);
  }
  const double controller_gain = policy == ScriptedPolicy::Expert ? 1.0 : 0.3;
  const double sign = s.physics.gain >= 0 ? 1.0 : -1.0;
  // Steer the point where the agent would coast to under friction alone.
  const auto pos = env.position();
  const auto vel = env.velocity();
  const double kp = 12.0;
  const double coast = (1.0 - s.physics.friction) / s.physics.friction;
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int i = 0; i < 2 && i < s.native_action_dim; ++i) {
    double a = sign * controller_gain * kp * (s.goal[i] - pos[i] - coast * vel[i]);
    if (policy == ScriptedPolicy::Medium) a += noise(rng);
    raw[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(a, -1.0, 1.0));
  }
  return pad_action(raw, a_max);
}

Episode rollout_scripted(PointMassEnv& env, ScriptedPolicy policy, Rng& rng, int a_max) {
  Episode ep;
  ep.domain_id = env.spec().env_id;
  std::vector<float> rewards;
  ep.frames.push_back(env.reset());
  ep.actions.push_back(zero_action(a_max, env.spec().native_action_dim));
  rewards.push_back(static_cast<float>(env.reward()));
  while (!env.done()) {
    ActionVec a = scripted_action(env, policy, rng, a_max);
    StepResult r = env.step(a);
    ep.frames.push_back(std::move(r.frame));
    ep.actions.push_back(std::move(a));
    rewards.push_back(static_cast<float>(r.reward));
  }
  ep.rewards = std::move(rewards);
  return ep;
}

std::filesystem::path generate_offline_dataset(const std::string& env_id, ScriptedPolicy policy, int episodes,
                                               const std::filesystem::path& out, std::uint64_t seed, int a_max) {
  if (episodes <= 0) throw ConfigError("generate_offline_dataset: episodes must be positive");
  const Seeder seeder(seed);
  PointMassEnv env = make_env(env_id, seeder.substream_seed("env"));
  Rng policy_rng = seeder.stream("policy");
  Rng name_rng = seeder.stream("names");
  for (int i = 0; i < episodes; ++i) {
    Episode ep = rollout_scripted(env, policy, policy_rng, a_max);
    ep.rewards.reset();  // source videos are reward-free
    save_episode(ep, out, &name_rng);
  }
  return out / env_id;
}

}  // namespace vid2act
