#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tiny_run.hpp"
#include "vid2act/errors.hpp"
#include "vid2act/plot.hpp"
#include "vid2act/seeding.hpp"
#include "vid2act/trainer.hpp"

using namespace vid2act;
using namespace vid2act::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override { write_tiny_assets(dir_.path()); }
  RunConfig config(std::vector<std::string> extra = {}, int episodes = 2, int updates = 3) const {
    auto o = tiny_overrides(dir_.path(), episodes, updates);
    o.insert(o.end(), extra.begin(), extra.end());
    return default_run_config(o);
  }
  TempDir dir_{"v2a-trainer"};
};

}  // namespace

TEST(Seeder, SubstreamsAreIndependentAndReproducible) {
  const Seeder a(5), b(5), c(6);
  EXPECT_EQ(a.substream_seed("act"), b.substream_seed("act"));
  EXPECT_NE(a.substream_seed("act"), a.substream_seed("env"));
  EXPECT_NE(a.substream_seed("act"), c.substream_seed("act"));
  Rng r1 = a.stream("sampler"), r2 = b.stream("sampler");
  for (int i = 0; i < 10; ++i) EXPECT_EQ(r1(), r2());
  Seeder d(1);
  EXPECT_THROW(d.seed(2), ContractError);
  EXPECT_THROW(Seeder().root(), ContractError);
}

TEST(EpisodeReturn, SkipsInitialFrameReward) {
  Episode ep;
  ep.rewards = std::vector<float>{5.0f, 0.25f, 0.5f, 1.0f};
  EXPECT_DOUBLE_EQ(episode_return(ep), 1.75);
  EXPECT_TRUE(episode_success(ep));
  ep.rewards->back() = 0.5f;
  EXPECT_FALSE(episode_success(ep));
}

TEST_F(TrainerTest, RunWritesEveryOutput) {
  const RunConfig cfg = config();
  const std::string teacher_bytes = slurp(dir_ / "teachers" / "pm-src-match.bin");
  Trainer trainer(cfg);
  const TrainSummary s = trainer.run();
  EXPECT_EQ(slurp(dir_ / "teachers" / "pm-src-match.bin"), teacher_bytes);
  EXPECT_EQ(s.updates, 6);
  EXPECT_EQ(s.env_steps, 600);
  ASSERT_EQ(s.iterations.size(), 2u);
  EXPECT_EQ(s.weights.size(), 6u);
  for (const auto& w : s.weights) {
    ASSERT_EQ(w.size(), 2u);
    EXPECT_NEAR(w[0] + w[1], 1.0, 1e-9);
  }
  const auto& out = cfg.out;
  for (const char* f : {"config.resolved.json", "metrics.csv", "weights.csv", "vae.csv", "behavior.csv", "eval.json",
                        "final.bin", "checkpoints/step_0000004.bin"}) {
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  }
  const CsvTable metrics = read_csv(out / "metrics.csv");
  EXPECT_EQ(metrics.rows.size(), 2u);
  EXPECT_EQ(metrics.values("env_steps"), (std::vector<double>{400, 600}));
  const CsvTable weights = read_csv(out / "weights.csv");
  EXPECT_EQ(weights.rows.size(), 6u);
  EXPECT_EQ(weights.header[1], "w_1");
  const auto resolved = load_run_config(out / "config.resolved.json");
  EXPECT_EQ(to_json(resolved), to_json(cfg));
  const auto eval = nlohmann::json::parse(slurp(out / "eval.json"));
  EXPECT_EQ(eval["episodes"], 1);
}

TEST_F(TrainerTest, IdenticalSeedsGiveIdenticalMetrics) {
  const RunConfig a = config({"run.seed=4"});
  const RunConfig b = config({"run.seed=4", "run.out=" + (dir_ / "run_b").string()});
  Trainer(a).run();
  Trainer(b).run();
  for (const char* f : {"metrics.csv", "weights.csv", "vae.csv", "behavior.csv"}) {
    EXPECT_EQ(slurp(a.out / f), slurp(b.out / f)) << f;
  }
  const RunConfig c = config({"run.seed=5", "run.out=" + (dir_ / "run_c").string()});
  Trainer(c).run();
  EXPECT_NE(slurp(a.out / "metrics.csv"), slurp(c.out / "metrics.csv"));
}

TEST_F(TrainerTest, RefusesToOverwriteWithoutForce) {
  const RunConfig cfg = config({}, 1, 1);
  Trainer(cfg).run();
  EXPECT_THROW(Trainer(cfg).run(), IoError);
  EXPECT_NO_THROW(Trainer(cfg, TrainOptions{.force = true}).run());
}

TEST_F(TrainerTest, PhaseIsolation) {
  Trainer t(config());
  t.warmup();
  auto& a = t.agent();
  std::vector<std::uint64_t> teachers;
  for (const auto& tm : t.teachers()) teachers.push_back(tm->param_hash());

  std::uint64_t world = a.world->params().hash(), head = a.head->params().hash(), vae = a.vae->params().hash();
  std::uint64_t actor = a.behavior->actor_params().hash(), critic = a.behavior->critic_params().hash();

  t.update_world();
  EXPECT_NE(a.world->params().hash(), world);
  EXPECT_NE(a.head->params().hash(), head);
  EXPECT_EQ(a.vae->params().hash(), vae);
  EXPECT_EQ(a.behavior->actor_params().hash(), actor);
  world = a.world->params().hash();
  head = a.head->params().hash();

  t.update_vae();
  EXPECT_NE(a.vae->params().hash(), vae);
  EXPECT_EQ(a.world->params().hash(), world);
  EXPECT_EQ(a.head->params().hash(), head);
  EXPECT_EQ(a.behavior->actor_params().hash(), actor);
  vae = a.vae->params().hash();

  t.update_behavior();
  EXPECT_NE(a.behavior->actor_params().hash(), actor);
  EXPECT_NE(a.behavior->critic_params().hash(), critic);
  EXPECT_EQ(a.world->params().hash(), world);
  EXPECT_EQ(a.head->params().hash(), head);
  EXPECT_EQ(a.vae->params().hash(), vae);

  for (int i = 0; i < 3; ++i) t.update();
  t.collect_episode();
  for (std::size_t i = 0; i < teachers.size(); ++i) EXPECT_EQ(t.teachers()[i]->param_hash(), teachers[i]);
}

TEST_F(TrainerTest, BufferGrowsOneEpisodePerIteration) {
  Trainer t(config());
  t.warmup();
  EXPECT_EQ(t.buffer().episodes(), 1u);
  EXPECT_EQ(t.env_steps(), 200);
  t.update();
  const Episode ep = t.collect_episode();
  EXPECT_EQ(t.buffer().episodes(), 2u);
  EXPECT_EQ(t.env_steps(), 400);
  EXPECT_EQ(ep.length(), 101u);
  ASSERT_TRUE(ep.rewards.has_value());
  for (std::size_t i = 1; i < ep.actions.size(); ++i) {
    EXPECT_EQ(ep.actions[i].values[2], 0.0f);  // padding beyond the native dims
    EXPECT_LE(std::abs(ep.actions[i].values[0]), 1.0f);
  }
}

TEST_F(TrainerTest, AblationArmsRun) {
  for (const auto& extra : std::vector<std::vector<std::string>>{
           {"distill.alpha=0"}, {"replay.guidance=false"}, {"distill.enabled=false", "replay.guidance=false"}}) {
    RunConfig cfg = config(extra, 1, 2);
    cfg.out = dir_ / ("arm_" + std::to_string(std::hash<std::string>{}(extra[0]) % 1000));
    const TrainSummary s = Trainer(cfg).run();
    EXPECT_EQ(s.updates, 2);
    EXPECT_EQ(std::filesystem::exists(cfg.out / "vae.csv"), cfg.guidance);
    EXPECT_EQ(s.weights.empty(), !cfg.uses_teachers());
  }
}

TEST_F(TrainerTest, CheckpointRoundTripAndEval) {
  const RunConfig cfg = config({}, 1, 2);
  const TrainSummary s = Trainer(cfg).run();
  nlohmann::json meta;
  const Agent agent = Agent::load(s.final_checkpoint, &meta);
  EXPECT_EQ(meta["updates"], 2);
  EXPECT_EQ(meta["env"], "pm-target");
  const EvalResult a = evaluate(agent, "pm-target", 2, 9);
  const EvalResult b = evaluate(s.final_checkpoint, "pm-target", 2, 9);
  EXPECT_EQ(a.returns, b.returns);
  EXPECT_THROW(evaluate(agent, "pm-target", 0, 9), ConfigError);
  EXPECT_THROW(evaluate(s.final_checkpoint, "pm-target", 0, 9), ConfigError);
}

TEST_F(TrainerTest, MissingTeacherIsConfigError) {
  std::filesystem::remove(dir_ / "teachers" / "pm-src-friction.bin");
  EXPECT_THROW(Trainer{config()}, ConfigError);
  EXPECT_NO_THROW(Trainer{config({"distill.enabled=false"})});
}
