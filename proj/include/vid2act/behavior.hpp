#pragma once

// Actor-critic learning on imagined latent trajectories. The actor sees the
// latent state concatenated with a guidance feature and emits a tanh-squashed
// diagonal Gaussian action; the critic regresses lambda-returns computed with a
// slowly updated target copy. Actor gradients flow through the learned
// dynamics and reward head, which stay frozen.

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "vid2act/action_replay.hpp"
#include "vid2act/world_model.hpp"

namespace vid2act {

struct BehaviorConfig {
  int hidden = 200;
  int layers = 2;
  int horizon = 50;
  double gamma = 0.99;
  double lambda = 0.95;
  double entropy_scale = 3e-4;
  double init_std = 5.0;
  double min_std = 1e-4;
  int target_every = 100;
  nn::AdamConfig actor_opt{.lr = 8e-5};
  nn::AdamConfig critic_opt{.lr = 8e-5};
};

void to_json(nlohmann::json& j, const BehaviorConfig& c);
void from_json(const nlohmann::json& j, BehaviorConfig& c);

struct PolicyOutput {
  Var action;   // R x A_max in [-1, 1], zero beyond the native dims
  Var mean;     // pre-squash Gaussian mean, R x A_max
  Var std;      // pre-squash Gaussian std, R x A_max
  Var entropy;  // R x 1 single-sample estimate over the native dims (zero in mode)
};

/// Latent simulator used for imagination: one prior step and the reward of a state.
struct LatentDynamics {
  std::function<LatentState(const LatentState&, const Var&, Rng*)> step;
  std::function<Var(const LatentState&)> reward;
};

LatentDynamics dynamics_of(const WorldModel& model);

class Behavior {
 public:
  Behavior(int state_dim, int action_dim, int native_dim, int guidance_dim, const BehaviorConfig& cfg, Rng& init_rng);
  Behavior(const Behavior&) = delete;
  Behavior& operator=(const Behavior&) = delete;

  const BehaviorConfig& config() const { return cfg_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  int native_dim() const { return native_dim_; }
  int guidance_dim() const { return guidance_dim_; }

  nn::ParameterSet& actor_params() { return actor_params_; }
  nn::ParameterSet& critic_params() { return critic_params_; }
  const nn::ParameterSet& actor_params() const { return actor_params_; }
  const nn::ParameterSet& critic_params() const { return critic_params_; }
  const nn::ParameterSet& target_params() const { return target_params_; }

  /// explore = true samples with reparameterization (rng required); false returns tanh(mean).
  PolicyOutput policy_action(const Var& states, const Var& guidance, Rng* rng, bool explore) const;
  Var value(const Var& states) const { return critic_(states); }
  Var target_value(const Var& states) const { return target_(states); }
  void update_target();

  void save(Archive& ar, const std::string& prefix = "") const;
  static std::unique_ptr<Behavior> load(const Archive& ar, const std::string& prefix = "");

 private:
  int state_dim_;
  int action_dim_;
  int native_dim_;
  int guidance_dim_;
  BehaviorConfig cfg_;
  Matrix mask_;  // 1 x A_max
  nn::ParameterSet actor_params_;
  nn::ParameterSet critic_params_;
  nn::ParameterSet target_params_;
  nn::Mlp actor_;
  nn::Mlp critic_;
  nn::Mlp target_;
};

struct ImaginedTrajectory {
  std::vector<LatentState> states;  // H + 1
  std::vector<Var> actions;         // H, R x A_max
  std::vector<Var> entropies;       // H, R x 1
  std::vector<Var> rewards;         // H, R x 1: reward of states[t + 1]
  std::vector<Var> values;          // H + 1, R x 1 from the target critic
  double gamma = 0.99;

  int horizon() const { return static_cast<int>(actions.size()); }
};

/// Rolls the policy forward from detached `start` states for `horizon` steps.
/// `vae == nullptr` feeds zero guidance (the no-guidance ablation). The
/// dynamics, VAE and critic parameters must be frozen by the caller (see
/// BehaviorLearner), so the graph only reaches actor parameters.
ImaginedTrajectory imagine_trajectory(const Behavior& behavior, const LatentDynamics& dynamics, const ActionVae* vae,
                                      const LatentState& start, int horizon, Rng& rng);

/// R_t = r_t + gamma [(1 - lambda) v_{t+1} + lambda R_{t+1}], with R_H = v_H.
std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values, double gamma,
                                double lambda);

struct BehaviorLosses {
  Var actor;
  Var critic;
  double entropy = 0.0;
  double mean_return = 0.0;
  Matrix critic_inputs;   // detached imagined state features, rows t * R + r
  Matrix critic_targets;  // detached lambda-returns
};

Var critic_loss(const Behavior& behavior, const Matrix& states, const Matrix& targets);

/// Actor: -(mean lambda-return) - entropy_scale * mean entropy.
/// Critic: 0.5 * mean squared error of v(detached state) to detached returns.
BehaviorLosses behavior_losses(const Behavior& behavior, const ImaginedTrajectory& traj, double lambda);

/// Owns the optimizers and the target-copy schedule.
class BehaviorLearner {
 public:
  explicit BehaviorLearner(Behavior& behavior);

  struct Record {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double entropy = 0.0;
    double mean_imagined_return = 0.0;
  };

  /// One imagination + actor-critic update. Every set in `frozen` (world
  /// model, VAE) is held untrainable for the duration of the call.
  Record update(const LatentDynamics& dynamics, const std::vector<nn::ParameterSet*>& frozen, const ActionVae* vae,
                const LatentState& start, Rng& rng);
  std::int64_t updates() const { return updates_; }

 private:
  Behavior& behavior_;
  nn::Adam actor_opt_;
  nn::Adam critic_opt_;
  std::int64_t updates_ = 0;
};

}  // namespace vid2act
