#include "vid2act/behavior.hpp"

#include <cmath>
#include <numbers>

#include "vid2act/archive.hpp"
#include "vid2act/errors.hpp"

namespace vid2act {

namespace {

constexpr int kFormatVersion = 1;

std::vector<Index> hidden_layers(const BehaviorConfig& c) {
  return std::vector<Index>(static_cast<std::size_t>(c.layers), c.hidden);
}

nlohmann::json adam_json(const nn::AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"clip_norm", a.clip_norm}};
}

nn::AdamConfig adam_from(const nlohmann::json& j, nn::AdamConfig a) {
  a.lr = j.value("lr", a.lr);
  a.beta1 = j.value("beta1", a.beta1);
  a.beta2 = j.value("beta2", a.beta2);
  a.eps = j.value("eps", a.eps);
  a.clip_norm = j.value("clip_norm", a.clip_norm);
  return a;
}

}  // namespace

void to_json(nlohmann::json& j, const BehaviorConfig& c) {
  j = {{"hidden", c.hidden},
       {"layers", c.layers},
       {"horizon", c.horizon},
       {"gamma", c.gamma},
       {"lambda", c.lambda},
       {"entropy_scale", c.entropy_scale},
       {"init_std", c.init_std},
       {"min_std", c.min_std},
       {"target_every", c.target_every},
       {"actor_opt", adam_json(c.actor_opt)},
       {"critic_opt", adam_json(c.critic_opt)}};
}

void from_json(const nlohmann::json& j, BehaviorConfig& c) {
  const BehaviorConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.layers = j.value("layers", d.layers);
  c.horizon = j.value("horizon", d.horizon);
  c.gamma = j.value("gamma", d.gamma);
  c.lambda = j.value("lambda", d.lambda);
  c.entropy_scale = j.value("entropy_scale", d.entropy_scale);
  c.init_std = j.value("init_std", d.init_std);
  c.min_std = j.value("min_std", d.min_std);
  c.target_every = j.value("target_every", d.target_every);
  c.actor_opt = adam_from(j.value("actor_opt", nlohmann::json::object()), d.actor_opt);
  c.critic_opt = adam_from(j.value("critic_opt", nlohmann::json::object()), d.critic_opt);
}

LatentDynamics dynamics_of(const WorldModel& model) {
  if (!model.has_reward_head()) throw ConfigError("imagination needs a world model with a reward head");
  return {[&model](const LatentState& s, const Var& a, Rng* rng) { return model.imagine_step(s, a, rng); },
          [&model](const LatentState& s) { return model.predict_reward(s); }};
}

Behavior::Behavior(int state_dim, int action_dim, int native_dim, int guidance_dim, const BehaviorConfig& cfg, Rng& rng)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      native_dim_(native_dim),
      guidance_dim_(guidance_dim),
      cfg_(cfg),
      actor_params_("actor"),
      critic_params_("critic"),
      target_params_("target_critic") {
  if (state_dim <= 0 || action_dim <= 0 || guidance_dim < 0 || cfg.hidden <= 0 || cfg.layers < 1) {
    throw ConfigError("behavior: dimensions must be positive");
  }
  if (native_dim < 1 || native_dim > action_dim) throw ConfigError("behavior: native action dim outside [1, A_max]");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw ConfigError("behavior: gamma must lie in (0, 1]");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("behavior: lambda must lie in [0, 1]");
  if (cfg.horizon < 1) throw ConfigError("behavior: horizon must be at least 1");
  if (cfg.target_every < 1) throw ConfigError("behavior: target_every must be at least 1");
  mask_ = Matrix::Zero(1, action_dim);
  mask_.leftCols(native_dim).setOnes();
  actor_ = nn::Mlp(actor_params_, "actor", state_dim + guidance_dim, hidden_layers(cfg), 2 * action_dim, rng);
  critic_ = nn::Mlp(critic_params_, "critic", state_dim, hidden_layers(cfg), 1, rng);
  target_ = nn::Mlp(target_params_, "critic", state_dim, hidden_layers(cfg), 1, rng);
  target_params_.copy_values_from(critic_params_);
  target_params_.set_trainable(false);
}

void Behavior::update_target() { target_params_.copy_values_from(critic_params_); }

PolicyOutput Behavior::policy_action(const Var& states, const Var& guidance, Rng* rng, bool explore) const {
  if (states.cols() != state_dim_ || guidance.cols() != guidance_dim_ || states.rows() != guidance.rows()) {
    throw ValidationError("policy_action: state/guidance shape mismatch");
  }
  const Index R = states.rows();
  const Var stats = actor_(guidance_dim_ > 0 ? ad::concat_cols({states, guidance}) : states);
  PolicyOutput out;
  // Mean softly bounded to [-5, 5]; std starts near init_std.
  out.mean = ad::scale(ad::tanh(ad::scale(ad::slice_cols(stats, 0, action_dim_), 0.2)), 5.0);
  const double shift = std::log(std::expm1(cfg_.init_std));
  out.std = ad::add_scalar(ad::softplus(ad::add_scalar(ad::slice_cols(stats, action_dim_, action_dim_), shift)),
                           cfg_.min_std);
  const Var mask = ad::constant(mask_.replicate(R, 1));
  if (!explore) {
    out.action = ad::tanh(out.mean) * mask;
    out.entropy = ad::zeros(R, 1);
    return out;
  }
  if (rng == nullptr) throw ContractError("policy_action: exploration needs a generator");
  const Var pre = out.mean + out.std * ad::constant(ad::randn(R, action_dim_, *rng));
  const Var squashed = ad::tanh(pre);
  out.action = squashed * mask;
  // Entropy of the squashed sample: Gaussian entropy plus log|d tanh/du| at the sample.
  const double c = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  const Var per_dim = ad::add_scalar(ad::log(out.std), c) +
                      ad::log(ad::add_scalar(ad::neg(ad::square(squashed)), 1.0 + 1e-6));
  out.entropy = ad::row_sum(per_dim * mask);
  return out;
}

void Behavior::save(Archive& ar, const std::string& prefix) const {
  nlohmann::json j = cfg_;
  j["format_version"] = kFormatVersion;
  j["state_dim"] = state_dim_;
  j["action_dim"] = action_dim_;
  j["native_dim"] = native_dim_;
  j["guidance_dim"] = guidance_dim_;
  ar.put_json(prefix + "behavior_config.json", j);
  actor_params_.save(ar, prefix + "actor/");
  critic_params_.save(ar, prefix + "critic/");
  target_params_.save(ar, prefix + "target/");
}

std::unique_ptr<Behavior> Behavior::load(const Archive& ar, const std::string& prefix) {
  const nlohmann::json j = ar.get_json(prefix + "behavior_config.json");
  if (j.value("format_version", 0) != kFormatVersion) throw ValidationError("behavior checkpoint: unsupported format_version");
  Rng dummy(0);
  auto b = std::make_unique<Behavior>(j.at("state_dim").get<int>(), j.at("action_dim").get<int>(),
                                      j.at("native_dim").get<int>(), j.at("guidance_dim").get<int>(),
                                      j.get<BehaviorConfig>(), dummy);
  b->actor_params_.load(ar, prefix + "actor/");
  b->critic_params_.load(ar, prefix + "critic/");
  b->target_params_.load(ar, prefix + "target/");
  return b;
}

ImaginedTrajectory imagine_trajectory(const Behavior& behavior, const LatentDynamics& dynamics, const ActionVae* vae,
                                      const LatentState& start, int horizon, Rng& rng) {
  if (horizon < 1) throw ConfigError("imagine_trajectory: horizon must be at least 1");
  if (vae && vae->feature_dim() != behavior.guidance_dim()) throw ConfigError("imagine_trajectory: guidance dim mismatch");
  ImaginedTrajectory traj;
  traj.gamma = behavior.config().gamma;
  LatentState s = start.detached();
  const Index R = s.batch();
  traj.states.push_back(s);
  traj.values.push_back(behavior.target_value(s.features()));
  for (int t = 0; t < horizon; ++t) {
    const Var feat = s.features();
    const Var g = vae ? vae->guidance(feat) : ad::zeros(R, behavior.guidance_dim());
    PolicyOutput pi = behavior.policy_action(feat, g, &rng, true);
    s = dynamics.step(s, pi.action, &rng);
    ad::check_finite(s.deter, "imagined state");
    traj.actions.push_back(pi.action);
    traj.entropies.push_back(pi.entropy);
    traj.rewards.push_back(dynamics.reward(s));
    traj.states.push_back(s);
    traj.values.push_back(behavior.target_value(s.features()));
  }
  return traj;
}

std::vector<Var> lambda_returns(const std::vector<Var>& rewards, const std::vector<Var>& values, double gamma,
                                double lambda) {
  const std::size_t H = rewards.size();
  if (H == 0 || values.size() != H + 1) throw ValidationError("lambda_returns: need H rewards and H + 1 values");
  std::vector<Var> out(H);
  Var next = values[H];
  for (std::size_t i = H; i-- > 0;) {
    const Var mix = ad::scale(values[i + 1], 1.0 - lambda) + ad::scale(next, lambda);
    out[i] = rewards[i] + ad::scale(mix, gamma);
    next = out[i];
  }
  return out;
}

Var critic_loss(const Behavior& behavior, const Matrix& states, const Matrix& targets) {
  const Var v = behavior.value(ad::constant(states));
  return ad::scale(ad::mean(ad::square(v - ad::constant(targets))), 0.5);
}

BehaviorLosses behavior_losses(const Behavior& behavior, const ImaginedTrajectory& traj, double lambda) {
  const std::vector<Var> returns = lambda_returns(traj.rewards, traj.values, traj.gamma, lambda);
  const Var R = ad::concat_rows(returns);
  const Var H = ad::concat_rows(traj.entropies);
  BehaviorLosses out;
  out.actor = ad::neg(ad::mean(R)) - ad::scale(ad::mean(H), behavior.config().entropy_scale);
  std::vector<Var> feats;
  for (int t = 0; t < traj.horizon(); ++t) feats.push_back(traj.states[static_cast<std::size_t>(t)].features());
  out.critic_inputs = ad::concat_rows(feats).value();
  out.critic_targets = R.value();
  out.critic = critic_loss(behavior, out.critic_inputs, out.critic_targets);
  out.entropy = ad::mean(H).item();
  out.mean_return = ad::mean(R).item();
  return out;
}

BehaviorLearner::BehaviorLearner(Behavior& behavior)
    : behavior_(behavior),
      actor_opt_(behavior.actor_params(), behavior.config().actor_opt),
      critic_opt_(behavior.critic_params(), behavior.config().critic_opt) {}

BehaviorLearner::Record BehaviorLearner::update(const LatentDynamics& dynamics,
                                                const std::vector<nn::ParameterSet*>& frozen, const ActionVae* vae,
                                                const LatentState& start, Rng& rng) {
  std::vector<std::unique_ptr<nn::FreezeGuard>> guards;
  for (nn::ParameterSet* p : frozen) guards.push_back(std::make_unique<nn::FreezeGuard>(*p));
  BehaviorLosses L;
  {
    nn::FreezeGuard critic_frozen(behavior_.critic_params());
    const ImaginedTrajectory traj = imagine_trajectory(behavior_, dynamics, vae, start, behavior_.config().horizon, rng);
    L = behavior_losses(behavior_, traj, behavior_.config().lambda);
    if (!std::isfinite(L.actor.item())) {
      throw NumericError("behavior: non-finite actor loss (mean return " + std::to_string(L.mean_return) + ")");
    }
    ad::backward(L.actor);
  }
  actor_opt_.step();
  guards.clear();

  const Var critic = critic_loss(behavior_, L.critic_inputs, L.critic_targets);
  if (!std::isfinite(critic.item())) throw NumericError("behavior: non-finite critic loss");
  ad::backward(critic);
  critic_opt_.step();
  if (++updates_ % behavior_.config().target_every == 0) behavior_.update_target();

  Record r;
  r.actor_loss = L.actor.item();
  r.critic_loss = critic.item();
  r.entropy = L.entropy;
  r.mean_imagined_return = L.mean_return;
  return r;
}

}  // namespace vid2act
