#include "vid2act/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vid2act/archive.hpp"
#include "vid2act/errors.hpp"

namespace vid2act {

namespace {

constexpr int kFormatVersion = 1;

// Re-raises an error with the update index and the component that failed, keeping its category.
template <class F>
auto in_component(const char* component, std::int64_t step, F&& f) {
  auto where = [&](const std::exception& e) {
    return "update " + std::to_string(step) + ", " + component + ": " + e.what();
  };
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(where(e));
  } catch (const ValidationError& e) {
    throw ValidationError(where(e));
  } catch (const ConfigError& e) {
    throw ConfigError(where(e));
  } catch (const IoError& e) {
    throw IoError(where(e));
  } catch (const ContractError& e) {
    throw ContractError(where(e));
  }
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

std::ofstream open_csv(const std::filesystem::path& p, const std::string& header) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << header << '\n';
  f << std::setprecision(9);
  return f;
}

const char* kOutputs[] = {"metrics.csv", "weights.csv", "vae.csv", "behavior.csv", "config.resolved.json",
                          "eval.json",   "final.bin",   "checkpoints"};

}  // namespace

Var Agent::guidance_for(const Var& features) const {
  if (guidance && vae) return vae->guidance(features);
  return ad::zeros(features.rows(), behavior->guidance_dim());
}

void Agent::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  Archive ar;
  nlohmann::json j = meta;
  j["format_version"] = kFormatVersion;
  j["guidance"] = guidance;
  j["sources"] = sources;
  j["has_head"] = head != nullptr;
  ar.put_json("agent.json", j);
  world->save(ar, "world_model/");
  if (head) {
    ar.put_json("distillation/config.json", {{"state_dim", head->state_dim()}});
    head->params().save(ar, "distillation/params/");
  }
  vae->save(ar, "vae/");
  behavior->save(ar, "behavior/");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ar.write(path);
}

Agent Agent::load(const std::filesystem::path& path, nlohmann::json* meta) {
  const Archive ar = Archive::read(path);
  const nlohmann::json j = ar.get_json("agent.json");
  if (j.value("format_version", 0) != kFormatVersion) throw ValidationError("agent checkpoint: unsupported format_version");
  Agent a;
  a.guidance = j.at("guidance").get<bool>();
  a.sources = j.at("sources").get<std::vector<std::string>>();
  a.world = WorldModel::load(ar, "world_model/");
  a.vae = ActionVae::load(ar, "vae/");
  a.behavior = Behavior::load(ar, "behavior/");
  if (j.value("has_head", false)) {
    const nlohmann::json run = j.value("config", nlohmann::json::object());
    DistillConfig dc;
    if (run.contains("distill")) dc.hidden = run["distill"].value("hidden", dc.hidden);
    Rng dummy(0);
    a.head = std::make_unique<DistillationHead>(a.world->config().state_dim(), dc, dummy);
    a.head->params().load(ar, "distillation/params/");
  }
  if (meta) *meta = j;
  return a;
}

Episode run_policy_episode(const Agent& agent, PointMassEnv& env, Rng* explore_rng) {
  const WorldModelConfig& c = agent.world->config();
  const int native = env.spec().native_action_dim;
  if (agent.behavior->native_dim() != native) throw ConfigError("policy native action dim does not match the env");
  // Acting never needs gradients.
  auto& world = const_cast<WorldModel&>(*agent.world);
  auto& vae = const_cast<ActionVae&>(*agent.vae);
  auto& beh = const_cast<Behavior&>(*agent.behavior);
  nn::FreezeGuard f1(world.params()), f2(vae.params()), f3(beh.actor_params());

  Episode ep;
  ep.domain_id = env.spec().env_id;
  std::vector<float> rewards;
  ep.frames.push_back(env.reset());
  ep.actions.push_back(zero_action(c.action_dim, native));
  rewards.push_back(static_cast<float>(env.reward()));
  LatentState state = agent.world->initial_state(1);
  while (true) {
    auto [img, residual] = prepare_frame(ep.frames.back(), c);
    (void)residual;
    const Var emb = agent.world->encode(ad::constant(std::move(img)));
    state = agent.world->observe_step(state, ad::constant(action_row(ep.actions.back(), c.action_dim)), emb, nullptr)
                .posterior;
    if (env.done()) break;
    const Var feat = state.features();
    const Matrix a = agent.behavior->policy_action(feat, agent.guidance_for(feat), explore_rng, explore_rng != nullptr)
                         .action.value();
    std::vector<float> raw(static_cast<std::size_t>(native));
    for (int i = 0; i < native; ++i) raw[static_cast<std::size_t>(i)] = static_cast<float>(a(0, i));
    ActionVec act = pad_action(raw, c.action_dim);
    StepResult r = env.step(act);
    ep.frames.push_back(std::move(r.frame));
    ep.actions.push_back(std::move(act));
    rewards.push_back(static_cast<float>(r.reward));
  }
  ep.rewards = std::move(rewards);
  return ep;
}

Episode run_random_episode(PointMassEnv& env, int a_max, Rng& rng) {
  return rollout_scripted(env, ScriptedPolicy::Random, rng, a_max);
}

double episode_return(const Episode& ep) {
  if (!ep.rewards) throw ValidationError("episode_return: episode has no rewards");
  // rewards[0] belongs to the reset state, not to an action.
  return std::accumulate(ep.rewards->begin() + 1, ep.rewards->end(), 0.0);
}

bool episode_success(const Episode& ep) { return ep.rewards && !ep.rewards->empty() && ep.rewards->back() >= 0.95f; }

EvalResult evaluate(const Agent& agent, const std::string& env_id, int episodes, std::uint64_t seed) {
  if (episodes <= 0) throw ConfigError("evaluate: episodes must be positive");
  const Seeder seeder(seed);
  PointMassEnv env = make_env(env_id, seeder.substream_seed("eval"));
  EvalResult r;
  r.env_id = env_id;
  r.episodes = episodes;
  int successes = 0;
  for (int i = 0; i < episodes; ++i) {
    const Episode ep = run_policy_episode(agent, env, nullptr);
    r.returns.push_back(episode_return(ep));
    successes += episode_success(ep) ? 1 : 0;
  }
  r.mean = std::accumulate(r.returns.begin(), r.returns.end(), 0.0) / episodes;
  double ss = 0.0;
  for (double x : r.returns) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / episodes);
  r.success_rate = static_cast<double>(successes) / episodes;
  return r;
}

EvalResult evaluate(const std::filesystem::path& checkpoint, const std::string& env_id, int episodes,
                    std::uint64_t seed) {
  if (episodes <= 0) throw ConfigError("evaluate: episodes must be positive");
  const Agent agent = Agent::load(checkpoint);
  return evaluate(agent, env_id, episodes, seed);
}

nlohmann::json to_json(const EvalResult& r) {
  return {{"env", r.env_id},   {"episodes", r.episodes},         {"mean_return", r.mean},
          {"std_return", r.std}, {"success_rate", r.success_rate}, {"returns", r.returns}};
}

Trainer::Trainer(const RunConfig& cfg, TrainOptions opts)
    : cfg_(cfg),
      opts_(std::move(opts)),
      seeder_(cfg.seed),
      sampler_rng_(seeder_.stream("sampler")),
      world_rng_(seeder_.stream("noise/world_model")),
      vae_rng_(seeder_.stream("noise/vae")),
      behavior_rng_(seeder_.stream("noise/behavior")),
      act_rng_(seeder_.stream("act")),
      warmup_rng_(seeder_.stream("warmup")),
      env_(make_env(cfg.env, seeder_.substream_seed("env"))),
      buffer_(static_cast<std::size_t>(cfg.buffer_steps)) {
  cfg_.validate(true);
  const WorldModelConfig& mc = cfg_.model;
  const int D = mc.state_dim();

  if (cfg_.uses_teachers()) {
    for (std::size_t i = 0; i < cfg_.sources.size(); ++i) {
      teachers_.push_back(load_frozen(cfg_.teacher_path(i), &mc));
    }
  }
  if (cfg_.guidance) {
    for (std::size_t i = 0; i < cfg_.sources.size(); ++i) {
      SourcePool pool;
      pool.domain_id = cfg_.sources[i];
      for (const Episode& ep : load_dataset(cfg_.source_root, cfg_.sources[i])) {
        pool.episodes.push_back(prepare_episode(ep, mc));
      }
      if (pool.episodes.empty()) throw ConfigError("source dataset " + cfg_.source_dir(i).string() + " is empty");
      pools_.push_back(std::move(pool));
    }
  }

  Rng init_world = seeder_.stream("init/world_model");
  Rng init_head = seeder_.stream("init/distillation");
  Rng init_vae = seeder_.stream("init/vae");
  Rng init_behavior = seeder_.stream("init/behavior");
  agent_.world = std::make_unique<WorldModel>(mc, init_world);
  if (!teachers_.empty()) agent_.head = std::make_unique<DistillationHead>(D, cfg_.distill, init_head);
  agent_.vae = std::make_unique<ActionVae>(D, mc.action_dim, cfg_.vae, init_vae);
  agent_.behavior = std::make_unique<Behavior>(D, mc.action_dim, env_.spec().native_action_dim,
                                               agent_.vae->feature_dim(), cfg_.behavior, init_behavior);
  agent_.guidance = cfg_.guidance;
  agent_.sources = cfg_.sources;

  world_opt_ = std::make_unique<nn::Adam>(agent_.world->params(), nn::AdamConfig{.lr = cfg_.model_lr, .clip_norm = cfg_.clip_norm});
  if (agent_.head) {
    head_opt_ = std::make_unique<nn::Adam>(agent_.head->params(), nn::AdamConfig{.lr = cfg_.head_lr, .clip_norm = cfg_.clip_norm});
  }
  vae_opt_ = std::make_unique<nn::Adam>(agent_.vae->params(), nn::AdamConfig{.lr = cfg_.vae_lr, .clip_norm = cfg_.clip_norm});
  learner_ = std::make_unique<BehaviorLearner>(*agent_.behavior);
}

Trainer::~Trainer() = default;

void Trainer::warmup() {
  for (int i = 0; i < cfg_.warmup_episodes; ++i) {
    Episode ep = run_random_episode(env_, cfg_.model.action_dim, warmup_rng_);
    env_steps_ += env_.spec().episode_length;
    prepared_.push_back(prepare_episode(ep, cfg_.model));
    buffer_.append(std::move(ep));
  }
}

PreparedSequence Trainer::sample_target_batch() {
  while (prepared_.size() > buffer_.episodes()) prepared_.pop_front();  // mirror buffer eviction
  std::vector<const PreparedEpisode*> ptrs;
  std::vector<std::size_t> lengths;
  for (const auto& p : prepared_) {
    ptrs.push_back(&p);
    lengths.push_back(p.length());
  }
  const auto refs = sample_windows(lengths, cfg_.batch, cfg_.length, sampler_rng_);
  return gather_sequence(ptrs, refs, cfg_.length);
}

void Trainer::update_world() {
  in_component("world model", updates_ + 1, [&] {
    const PreparedSequence seq = sample_target_batch();
    std::vector<const TeacherModel*> teachers;
    for (const auto& t : teachers_) teachers.push_back(t.get());
    StudentLosses L = student_objective(*agent_.world, teachers, agent_.head.get(), seq, cfg_.distill.alpha, &world_rng_);
    require_finite(L.total.item(), "world-model loss");
    ad::backward(L.total);
    // With alpha = 0 the distillation graph is detached from the world model and trains the head alone.
    if (!teachers.empty() && cfg_.distill.alpha == 0.0) ad::backward(L.distill);
    world_opt_->step();
    if (head_opt_) head_opt_->step();
    current_ = UpdateRecord{};
    current_.step = updates_ + 1;
    current_.image = L.image.item();
    current_.reward = L.reward.item();
    current_.kl = L.kl.item();
    current_.distill = L.distill.item();
    current_.total = L.total.item();
    require_finite(current_.distill, "distillation loss");
    current_.weights = L.weights.w;
    last_states_ = std::move(L.states);
  });
}

void Trainer::update_vae() {
  if (!cfg_.guidance) return;
  in_component("action replay", updates_ + 1, [&] {
    std::vector<double> w = current_.weights;
    if (w.empty()) w.assign(pools_.size(), 1.0 / static_cast<double>(pools_.size()));
    current_.vae = train_step_on_sources(*agent_.vae, *vae_opt_, *agent_.world, pools_, w, cfg_.batch, cfg_.length,
                                         vae_rng_);
    require_finite(current_.vae.total, "VAE loss");
  });
}

LatentState Trainer::imagination_starts() const {
  if (last_states_.empty()) throw ContractError("behavior update before any world-model update");
  std::vector<Var> deter, stoch;
  for (const StatePair& p : last_states_) {
    deter.push_back(ad::detach(p.posterior.deter));
    stoch.push_back(ad::detach(p.posterior.stoch));
  }
  LatentState s = LatentState::zeros(1, cfg_.model.deter_dim, cfg_.model.stoch_dim);
  Matrix d = ad::concat_rows(deter).value(), z = ad::concat_rows(stoch).value();
  const Index rows = d.rows();
  if (cfg_.imagine_starts > 0 && cfg_.imagine_starts < rows) {
    // Evenly spaced rows keep the choice deterministic without consuming random draws.
    const Index n = cfg_.imagine_starts;
    Matrix ds(n, d.cols()), zs(n, z.cols());
    for (Index i = 0; i < n; ++i) {
      const Index r = i * rows / n;
      ds.row(i) = d.row(r);
      zs.row(i) = z.row(r);
    }
    d = std::move(ds);
    z = std::move(zs);
  }
  s.deter = ad::constant(std::move(d));
  s.stoch = ad::constant(std::move(z));
  s.mean = Var();
  s.std = Var();
  return s;
}

void Trainer::update_behavior() {
  in_component("behavior", updates_ + 1, [&] {
    std::vector<nn::ParameterSet*> frozen{&agent_.world->params(), &agent_.vae->params()};
    if (agent_.head) frozen.push_back(&agent_.head->params());
    current_.behavior = learner_->update(dynamics_of(*agent_.world), frozen, cfg_.guidance ? agent_.vae.get() : nullptr,
                                         imagination_starts(), behavior_rng_);
    require_finite(current_.behavior.actor_loss, "actor loss");
    require_finite(current_.behavior.critic_loss, "critic loss");
  });
}

UpdateRecord Trainer::update() {
  update_world();
  update_vae();
  update_behavior();
  ++updates_;
  write_update_logs(current_);
  if (metrics_.is_open() && updates_ % cfg_.checkpoint_every == 0) {
    std::ostringstream name;
    name << "step_" << std::setw(7) << std::setfill('0') << updates_ << ".bin";
    checkpoint(cfg_.out / "checkpoints" / name.str());
  }
  return current_;
}

Episode Trainer::collect_episode() {
  Episode ep = in_component("environment", updates_, [&] { return run_policy_episode(agent_, env_, &act_rng_); });
  env_steps_ += env_.spec().episode_length;
  ++episodes_;
  prepared_.push_back(prepare_episode(ep, cfg_.model));
  buffer_.append(ep);
  return ep;
}

void Trainer::write_update_logs(const UpdateRecord& r) {
  if (!weights_csv_.is_open() || r.step % cfg_.log_every != 0) return;
  weights_csv_ << r.step;
  for (double w : r.weights) weights_csv_ << ',' << w;
  weights_csv_ << ',' << r.image << ',' << r.reward << ',' << r.kl << ',' << r.distill << ',' << r.total << '\n';
  if (cfg_.guidance) {
    vae_csv_ << r.step << ',' << r.vae.recon << ',' << r.vae.kl << ','
             << (r.vae.selected.empty() ? std::string() : cfg_.sources[static_cast<std::size_t>(r.vae.selected[0])])
             << '\n';
  }
  behavior_csv_ << r.step << ',' << r.behavior.actor_loss << ',' << r.behavior.critic_loss << ',' << r.behavior.entropy
                << ',' << r.behavior.mean_imagined_return << '\n';
}

nlohmann::json Trainer::meta() const {
  return {{"config", to_json(cfg_)}, {"updates", updates_}, {"env_steps", env_steps_}, {"env", cfg_.env}};
}

void Trainer::checkpoint(const std::filesystem::path& path) const { agent_.save(path, meta()); }

TrainSummary Trainer::run() {
  namespace fs = std::filesystem;
  const fs::path& out = cfg_.out;
  if (fs::exists(out)) {
    bool clash = false;
    for (const char* name : kOutputs) clash = clash || fs::exists(out / name);
    if (clash && !opts_.force) {
      throw IoError("output directory " + out.string() + " already holds a run; pass --force to overwrite");
    }
    for (const char* name : kOutputs) fs::remove_all(out / name);
  }
  fs::create_directories(out / "checkpoints");
  {
    std::ofstream f(out / "config.resolved.json");
    f << to_json(cfg_).dump(2) << '\n';
    if (!f) throw IoError("cannot write config.resolved.json");
  }
  metrics_ = open_csv(out / "metrics.csv",
                      "step,episode,env_steps,return,success,image,reward,kl,distill,total,vae_loss,actor_loss,"
                      "critic_loss,entropy,imagined_return");
  std::string wh = "step";
  for (std::size_t i = 0; i < teachers_.size(); ++i) wh += ",w_" + std::to_string(i + 1);
  weights_csv_ = open_csv(out / "weights.csv", wh + ",L_image,L_reward,L_kl,L_distill,L_total");
  if (cfg_.guidance) vae_csv_ = open_csv(out / "vae.csv", "step,vae_recon,vae_kl,selected_domain");
  behavior_csv_ = open_csv(out / "behavior.csv", "step,actor_loss,critic_loss,entropy,mean_imagined_return");

  TrainSummary summary;
  warmup();
  const int C = cfg_.updates_per_episode;
  while (env_steps_ + env_.spec().episode_length <= cfg_.env_steps) {
    double sums[10] = {};
    for (int c = 0; c < C; ++c) {
      const UpdateRecord r = update();
      const double vals[10] = {r.image, r.reward, r.kl, r.distill, r.total, r.vae.total, r.behavior.actor_loss,
                               r.behavior.critic_loss, r.behavior.entropy, r.behavior.mean_imagined_return};
      for (int k = 0; k < 10; ++k) sums[k] += vals[k] / C;
      if (!r.weights.empty()) summary.weights.push_back(r.weights);
    }
    const Episode ep = collect_episode();
    IterationRecord it{updates_, episodes_, env_steps_, episode_return(ep), episode_success(ep)};
    summary.iterations.push_back(it);
    metrics_ << it.step << ',' << it.episode << ',' << it.env_steps << ',' << it.ret << ',' << (it.success ? 1 : 0);
    for (double s : sums) metrics_ << ',' << s;
    metrics_ << '\n';
    metrics_.flush();
    if (opts_.progress) {
      std::ostringstream line;
      line << "update " << it.step << "  env_steps " << it.env_steps << "  return " << std::fixed << std::setprecision(2)
           << it.ret << "  wm_total " << sums[4];
      if (!current_.weights.empty()) {
        line << "  w";
        for (double w : current_.weights) line << ' ' << std::setprecision(3) << w;
      }
      opts_.progress(line.str());
    }
  }
  for (auto* f : {&metrics_, &weights_csv_, &vae_csv_, &behavior_csv_}) {
    if (f->is_open()) f->close();
  }

  summary.updates = updates_;
  summary.env_steps = env_steps_;
  summary.final_checkpoint = out / "final.bin";
  checkpoint(summary.final_checkpoint);
  if (cfg_.eval_episodes > 0) {
    summary.eval = evaluate(agent_, cfg_.env, cfg_.eval_episodes, seeder_.substream_seed("eval"));
    std::ofstream f(out / "eval.json");
    f << to_json(summary.eval).dump(2) << '\n';
  }
  return summary;
}

}  // namespace vid2act
