#pragma once

// End-to-end training loop: random warmup, then per iteration C updates of
// (a) student world model + distillation head, (b) action VAE on the selected
// sources, (c) actor-critic in imagination, followed by one environment
// episode collected with the current policy. Also policy deployment and
// evaluation from checkpoints.

#include <cstdint>
#include <filesystem>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vid2act/action_replay.hpp"
#include "vid2act/behavior.hpp"
#include "vid2act/distillation.hpp"
#include "vid2act/envs.hpp"
#include "vid2act/run_config.hpp"
#include "vid2act/teacher_zoo.hpp"

namespace vid2act {

/// The deployable parts of a trained run.
struct Agent {
  std::unique_ptr<WorldModel> world;
  std::unique_ptr<DistillationHead> head;  // null without teachers
  std::unique_ptr<ActionVae> vae;
  std::unique_ptr<Behavior> behavior;
  bool guidance = true;
  std::vector<std::string> sources;

  /// Guidance features for policy input: VAE decoder feature at z = 0, or zeros.
  Var guidance_for(const Var& features) const;

  void save(const std::filesystem::path& path, const nlohmann::json& meta) const;
  static Agent load(const std::filesystem::path& path, nlohmann::json* meta = nullptr);
};

/// Runs one episode. With `explore_rng` the policy samples, otherwise it acts
/// with its mode. The latent state tracks the posterior of every observation.
Episode run_policy_episode(const Agent& agent, PointMassEnv& env, Rng* explore_rng);
Episode run_random_episode(PointMassEnv& env, int a_max, Rng& rng);

double episode_return(const Episode& ep);
/// Success proxy: the final state's reward is at least 0.95.
bool episode_success(const Episode& ep);

struct EvalResult {
  std::string env_id;
  int episodes = 0;
  double mean = 0.0;
  double std = 0.0;
  double success_rate = 0.0;
  std::vector<double> returns;
};

EvalResult evaluate(const Agent& agent, const std::string& env_id, int episodes, std::uint64_t seed);
EvalResult evaluate(const std::filesystem::path& checkpoint, const std::string& env_id, int episodes,
                    std::uint64_t seed);
nlohmann::json to_json(const EvalResult& r);

struct TrainOptions {
  bool force = false;
  std::function<void(const std::string&)> progress;  // one line per iteration when set
};

struct UpdateRecord {
  std::int64_t step = 0;
  double image = 0.0, reward = 0.0, kl = 0.0, distill = 0.0, total = 0.0;
  std::vector<double> weights;
  VaeStepResult vae;
  BehaviorLearner::Record behavior;
};

struct IterationRecord {
  std::int64_t step = 0;
  int episode = 0;
  long env_steps = 0;
  double ret = 0.0;
  bool success = false;
};

struct TrainSummary {
  std::int64_t updates = 0;
  long env_steps = 0;
  std::vector<IterationRecord> iterations;
  std::vector<std::vector<double>> weights;  // per update, empty without teachers
  std::filesystem::path final_checkpoint;
  EvalResult eval;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, TrainOptions opts = {});
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Algorithm 1 end to end; writes every output under cfg.out.
  TrainSummary run();

  // Individual phases, exposed for audits.
  void warmup();
  void update_world();
  void update_vae();
  void update_behavior();
  UpdateRecord update();
  Episode collect_episode();

  const RunConfig& config() const { return cfg_; }
  const Agent& agent() const { return agent_; }
  Agent& agent() { return agent_; }
  const std::vector<std::unique_ptr<TeacherModel>>& teachers() const { return teachers_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t updates() const { return updates_; }
  long env_steps() const { return env_steps_; }

 private:
  PreparedSequence sample_target_batch();
  LatentState imagination_starts() const;
  void write_update_logs(const UpdateRecord& r);
  void checkpoint(const std::filesystem::path& path) const;
  nlohmann::json meta() const;

  RunConfig cfg_;
  TrainOptions opts_;
  Seeder seeder_;
  Rng sampler_rng_, world_rng_, vae_rng_, behavior_rng_, act_rng_, warmup_rng_;
  PointMassEnv env_;

  Agent agent_;
  std::vector<std::unique_ptr<TeacherModel>> teachers_;
  std::vector<SourcePool> pools_;
  std::unique_ptr<nn::Adam> world_opt_, head_opt_, vae_opt_;
  std::unique_ptr<BehaviorLearner> learner_;

  ReplayBuffer buffer_;
  std::deque<PreparedEpisode> prepared_;
  std::int64_t updates_ = 0;
  long env_steps_ = 0;
  int episodes_ = 0;

  // Results of the latest world-model phase, consumed by the other phases.
  UpdateRecord current_;
  std::vector<StatePair> last_states_;

  std::ofstream metrics_, weights_csv_, vae_csv_, behavior_csv_;
};

}  // namespace vid2act
