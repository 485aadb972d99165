// Acceptance suite: one PASS/FAIL line per criterion, exit code 0 only when
// every selected criterion passes.
//
//   vid2act_acceptance [--config desk.cfg] [--work DIR] [--only 1,2,...] [--quick]
//
// Criteria 5 and 6 train 4 arms x 3 seeds on the desk config (hours on one
// core). Their datasets, teachers and runs live under --work and are reused
// when a finished run with the same resolved config is found there. --quick
// skips them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "cli.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"
#include "tiny_run.hpp"
#include "vid2act/action_replay.hpp"
#include "vid2act/behavior.hpp"
#include "vid2act/distillation.hpp"
#include "vid2act/plot.hpp"
#include "vid2act/trainer.hpp"

using namespace vid2act;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kIdentityTol = 1e-6;
constexpr double kGradRelTol = 1e-4;
constexpr double kWeightTol = 1e-6;
constexpr double kLoopTol = 1e-6;
constexpr double kLambdaTol = 1e-8;
constexpr double kMatchWeight = 0.5;
constexpr int kMatchSeedsNeeded = 2;
constexpr int kFinalWindow = 1000;  // updates

// Long-run protocol.
constexpr int kSeeds = 3;
constexpr int kSourceEpisodes = 50;
constexpr int kPretrainSteps = 5000;
constexpr int kPretrainBatch = 16;
constexpr int kPretrainLength = 32;
const char* kMatchingSource = "pm-src-match";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(4) << x;
  return s.str();
}

WorldModelConfig tiny_model() {
  WorldModelConfig c;
  c.height = 8;
  c.width = 8;
  c.conv_depth = 2;
  c.conv_layers = 2;
  c.embed_dim = 6;
  c.deter_dim = 8;
  c.stoch_dim = 4;
  c.hidden_dim = 8;
  c.action_dim = 4;
  c.free_nats = 0.0;
  c.reward_head = true;
  return c;
}

std::vector<std::unique_ptr<TeacherModel>> tiny_teachers(const WorldModelConfig& student, int n, Rng& rng,
                                                         const fs::path& dir) {
  WorldModelConfig c = student;
  c.reward_head = false;
  std::vector<std::unique_ptr<TeacherModel>> out;
  for (int i = 0; i < n; ++i) {
    const fs::path p = dir / ("t" + std::to_string(i) + ".bin");
    WorldModel(c, rng).save(p);
    out.push_back(load_frozen(p, &c));
  }
  return out;
}

// 1. Loss identities.
Outcome loss_identities() {
  Rng rng(1);
  double worst_kl = 0.0, worst_distill = 0.0, worst_vae = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    LatentState q = LatentState::zeros(5, 3, 6);
    q.mean = ad::constant(ad::randn(5, 6, rng) * 3.0);
    q.std = ad::constant(ad::randn(5, 6, rng).array().abs() + 0.1);
    worst_kl = std::max(worst_kl, kl_divergence(q, q).value().cwiseAbs().maxCoeff());

    Var e = ad::constant(ad::randn(8, 7, rng));
    DistillationHead head(7, {.hidden = 8}, rng);
    const auto dw = domain_weights(head, {ad::constant(ad::randn(8, 7, rng)), ad::constant(ad::randn(8, 7, rng))}, e);
    worst_distill = std::max(worst_distill, std::abs(distillation_loss(e, {e, e}, dw, 2).item()));

    const Matrix a = ad::randn(6, 4, rng);
    const VaeLoss v = vae_loss_terms(ad::constant(a), a, ad::zeros(6, 3), ad::constant(Matrix::Ones(6, 3)), 3);
    worst_vae = std::max(worst_vae, std::abs(v.total.item()));
  }
  const bool pass = worst_kl <= kIdentityTol && worst_distill <= kIdentityTol && worst_vae <= kIdentityTol;
  return {pass, "max |KL[q||q]| " + fmt(worst_kl) + ", |L_distill(e=u)| " + fmt(worst_distill) + ", |L_vae(identity)| " +
                    fmt(worst_vae) + " (tol " + fmt(kIdentityTol) + ")"};
}

// 2. Finite-difference gradient checks on tiny models.
Outcome gradient_oracles() {
  testing::TempDir dir("v2a-accept");
  Rng rng(2);
  const WorldModelConfig c = tiny_model();
  auto teachers = tiny_teachers(c, 3, rng, dir.path());
  std::vector<const TeacherModel*> tp;
  for (const auto& t : teachers) tp.push_back(t.get());
  WorldModel student(c, rng);
  DistillationHead head(c.state_dim(), {.hidden = 8}, rng);
  std::vector<Episode> eps{testing::random_episode(rng, 6, "t", true), testing::random_episode(rng, 5, "t", true)};
  const PreparedSequence seq = prepare_sequence(sample_sequences(eps, 2, 3, rng), c);
  auto student_fn = [&] {
    Rng noise(21);
    return student_objective(student, tp, &head, seq, 1.0, &noise).total;
  };
  const double g_student = std::max(testing::grad_check_all(student.params(), student_fn, 1e-4, 10).max_rel_error,
                                    testing::grad_check_all(head.params(), student_fn, 1e-4, 10).max_rel_error);

  ActionVae vae(c.state_dim(), c.action_dim, {.hidden = 8, .latent_dim = 2, .feature_dim = 5}, rng);
  const Matrix s = ad::randn(4, c.state_dim(), rng);
  const Matrix a = ad::randn(4, c.action_dim, rng).array().tanh();
  const Matrix z = ad::randn(4, 2, rng);
  const double g_vae =
      testing::grad_check_all(vae.params(), [&] { return vae.loss(ad::constant(s), a, z, 2).total; }, 1e-5, 32)
          .max_rel_error;

  BehaviorConfig bc;
  bc.hidden = 8;
  bc.init_std = 0.5;
  Behavior behavior(c.state_dim(), c.action_dim, 2, 5, bc, rng);
  LatentState start = LatentState::zeros(2, c.deter_dim, c.stoch_dim);
  start.deter = ad::constant(ad::randn(2, c.deter_dim, rng));
  start.stoch = ad::constant(ad::randn(2, c.stoch_dim, rng));
  double g_actor = 0.0;
  {
    nn::FreezeGuard f1(student.params()), f2(vae.params()), f3(behavior.critic_params());
    const LatentDynamics dyn = dynamics_of(student);
    auto actor_fn = [&] {
      Rng noise(11);
      return behavior_losses(behavior, imagine_trajectory(behavior, dyn, &vae, start, 3, noise), 0.95).actor;
    };
    g_actor = testing::grad_check_all(behavior.actor_params(), actor_fn, 1e-5, 32).max_rel_error;
  }
  const bool pass = g_student < kGradRelTol && g_vae < kGradRelTol && g_actor < kGradRelTol;
  return {pass, "max rel error: student objective " + fmt(g_student) + ", VAE " + fmt(g_vae) + ", actor " +
                    fmt(g_actor) + " (tol " + fmt(kGradRelTol) + ")"};
}

// 3. Weight normalization, symmetry and permutation equivariance.
Outcome weight_properties() {
  Rng rng(3);
  double norm_err = 0.0, uniform_err = 0.0, perm_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 5), dim = 2 + static_cast<int>(rng() % 6), B = 2, rows = 3 * B;
    DistillationHead head(dim, {.hidden = 6}, rng);
    std::vector<Var> states;
    for (int i = 0; i < n; ++i) states.push_back(ad::constant(ad::randn(rows, dim, rng) * 2.0));
    const Var e = ad::constant(ad::randn(rows, dim, rng) * 2.0);
    const DomainWeights dw = domain_weights(head, states, e);
    norm_err = std::max(norm_err, (dw.per_step.value().rowwise().sum().array() - 1.0).abs().maxCoeff());
    norm_err = std::max(norm_err, std::abs(std::accumulate(dw.w.begin(), dw.w.end(), 0.0) - 1.0));

    const std::vector<Var> same(static_cast<std::size_t>(n), states[0]);
    uniform_err = std::max(uniform_err, (domain_weights(head, same, e).per_step.value().array() - 1.0 / n).abs().maxCoeff());

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Var> permuted;
    for (int p : perm) permuted.push_back(states[static_cast<std::size_t>(p)]);
    const DomainWeights dwp = domain_weights(head, permuted, e);
    for (int i = 0; i < n; ++i) {
      perm_err = std::max(perm_err, std::abs(dwp.w[static_cast<std::size_t>(i)] - dw.w[static_cast<std::size_t>(perm[i])]));
    }
    const double l = distillation_loss(e, transfer_features(head, states), dw, B).item();
    const double lp = distillation_loss(e, transfer_features(head, permuted), dwp, B).item();
    perm_err = std::max(perm_err, std::abs(l - lp));
  }
  const bool pass = norm_err <= kWeightTol && uniform_err <= kWeightTol && perm_err <= kWeightTol;
  return {pass, "1000 instances: row-sum error " + fmt(norm_err) + ", identical-teacher deviation from 1/N " +
                    fmt(uniform_err) + ", permutation error " + fmt(perm_err) + " (tol " + fmt(kWeightTol) + ")"};
}

// 4. Vectorized losses against brute-force loops.
Outcome brute_force() {
  Rng rng(4);
  const int N = 3, B = 2, L = 4, D = 6;
  double distill_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    DistillationHead head(D, {.hidden = 8}, rng);
    const Var e = ad::constant(ad::randn(L * B, D, rng));
    std::vector<Var> states;
    for (int i = 0; i < N; ++i) states.push_back(ad::constant(ad::randn(L * B, D, rng)));
    const auto feats = transfer_features(head, states);
    const auto dw = domain_weights(head, states, e);
    const Matrix w = dw.per_step.value();
    double oracle = 0.0;
    for (int i = 0; i < N; ++i) {
      for (int b = 0; b < B; ++b) {
        for (int t = 0; t < L; ++t) {
          const Index row = static_cast<Index>(t) * B + b;
          double d = 0.0;
          for (Index k = 0; k < D; ++k) {
            const double diff = e.value()(row, k) - feats[static_cast<std::size_t>(i)].value()(row, k);
            d += diff * diff;
          }
          oracle += w(row, i) * d;
        }
      }
    }
    distill_err = std::max(distill_err, std::abs(distillation_loss(e, feats, dw, B).item() - oracle / B));
  }

  // Lambda-return against the explicit mixture of n-step returns, H = 5.
  double lambda_err = 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int H = 5;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(H), v(H + 1);
    for (auto& x : r) x = normal(rng);
    for (auto& x : v) x = normal(rng);
    const double g = 0.5 + 0.5 * uni(rng), lam = uni(rng);
    std::vector<Var> rv, vv;
    for (double x : r) rv.push_back(ad::constant(Matrix::Constant(1, 1, x)));
    for (double x : v) vv.push_back(ad::constant(Matrix::Constant(1, 1, x)));
    const auto R = lambda_returns(rv, vv, g, lam);
    for (int t = 0; t < H; ++t) {
      auto nstep = [&](int n) {
        double s = 0.0;
        for (int k = 0; k < n; ++k) s += std::pow(g, k) * r[static_cast<std::size_t>(t + k)];
        return s + std::pow(g, n) * v[static_cast<std::size_t>(t + n)];
      };
      const int m = H - t;
      double oracle = std::pow(lam, m - 1) * nstep(m);
      for (int n = 1; n < m; ++n) oracle += (1.0 - lam) * std::pow(lam, n - 1) * nstep(n);
      lambda_err = std::max(lambda_err, std::abs(R[static_cast<std::size_t>(t)].item() - oracle));
    }
  }
  const bool pass = distill_err <= kLoopTol && lambda_err <= kLambdaTol;
  return {pass, "distillation vs triple loop " + fmt(distill_err) + " (tol " + fmt(kLoopTol) +
                    "), lambda-return vs n-step expansion " + fmt(lambda_err) + " (tol " + fmt(kLambdaTol) + ")"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 7. Parameter-hash audits over a short real training loop.
Outcome phase_isolation() {
  testing::TempDir dir("v2a-accept");
  testing::write_tiny_assets(dir.path());
  std::vector<std::string> teacher_bytes;
  for (const auto& id : testing::tiny_sources()) teacher_bytes.push_back(slurp(dir / "teachers" / (id + ".bin")));

  Trainer t(testing::tiny_run_config(dir.path(), 2, 3));
  t.warmup();
  Agent& a = t.agent();
  std::vector<std::uint64_t> teachers;
  for (const auto& tm : t.teachers()) teachers.push_back(tm->param_hash());
  int violations = 0, checks = 0;
  auto expect = [&](bool ok) {
    ++checks;
    violations += ok ? 0 : 1;
  };
  for (int u = 0; u < 4; ++u) {
    const auto world = a.world->params().hash(), head = a.head->params().hash(), vae = a.vae->params().hash();
    t.update_world();
    expect(a.vae->params().hash() == vae);
    const auto world2 = a.world->params().hash(), head2 = a.head->params().hash();
    expect(world2 != world && head2 != head);
    t.update_vae();
    expect(a.world->params().hash() == world2 && a.head->params().hash() == head2);
    const auto vae2 = a.vae->params().hash();
    const auto actor = a.behavior->actor_params().hash();
    t.update_behavior();
    expect(a.world->params().hash() == world2 && a.head->params().hash() == head2);
    expect(a.vae->params().hash() == vae2);
    expect(a.behavior->actor_params().hash() != actor);
    for (std::size_t i = 0; i < teachers.size(); ++i) expect(t.teachers()[i]->param_hash() == teachers[i]);
  }
  t.collect_episode();
  const TrainSummary s = Trainer(testing::tiny_run_config(dir.path(), 2, 3)).run();
  for (std::size_t i = 0; i < teacher_bytes.size(); ++i) {
    expect(slurp(dir / "teachers" / (testing::tiny_sources()[i] + ".bin")) == teacher_bytes[i]);
  }
  expect(s.updates == 6);
  return {violations == 0, std::to_string(checks - violations) + "/" + std::to_string(checks) +
                               " audits hold (teachers, world model under VAE/behavior steps, VAE under behavior steps)"};
}

// 8. Two identical runs give identical metrics.csv.
Outcome determinism() {
  testing::TempDir dir("v2a-accept");
  testing::write_tiny_assets(dir.path());
  RunConfig a = testing::tiny_run_config(dir.path(), 3, 3);
  RunConfig b = a;
  b.out = dir / "run_b";
  Trainer(a).run();
  Trainer(b).run();
  const std::string ma = slurp(a.out / "metrics.csv"), mb = slurp(b.out / "metrics.csv");
  const bool weights_equal = slurp(a.out / "weights.csv") == slurp(b.out / "weights.csv");
  const bool pass = !ma.empty() && ma == mb && weights_equal;
  return {pass, std::string("metrics.csv ") + (ma == mb ? "identical" : "differs") + " (" +
                    std::to_string(std::count(ma.begin(), ma.end(), '\n')) + " lines), weights.csv " +
                    (weights_equal ? "identical" : "differs")};
}

// 9. Episode format round trip.
Outcome format_round_trip() {
  testing::TempDir dir("v2a-accept");
  Rng rng(9);
  int frame_bad = 0, action_bad = 0, reward_bad = 0;
  for (int i = 0; i < 100; ++i) {
    const int len = 2 + static_cast<int>(rng() % 12);
    const int native = 1 + static_cast<int>(rng() % 4);
    const int h = 2 + static_cast<int>(rng() % 20), w = 2 + static_cast<int>(rng() % 20);
    const Episode ep = testing::random_episode(rng, len, "rt" + std::to_string(i % 3), i % 2 == 0, h, w, 3, native, 4);
    const Episode back = load_episode(save_episode(ep, dir.path(), &rng));
    for (std::size_t t = 0; t < ep.frames.size(); ++t) {
      frame_bad += back.frames[t].pixels == ep.frames[t].pixels ? 0 : 1;
      action_bad += back.actions[t] == ep.actions[t] ? 0 : 1;
    }
    reward_bad += back.rewards == ep.rewards ? 0 : 1;
  }
  const bool pass = frame_bad == 0 && action_bad == 0 && reward_bad == 0;
  return {pass, "100 episodes: " + std::to_string(frame_bad) + " frame, " + std::to_string(action_bad) + " action, " +
                    std::to_string(reward_bad) + " reward mismatches"};
}

// ---------------------------------------------------------------------------
// Long runs shared by criteria 5 and 6.

struct Arm {
  std::string name;
  std::vector<std::string> overrides;
};

const std::vector<Arm>& arms() {
  static const std::vector<Arm> a{{"full", {}},
                                  {"alpha0", {"distill.alpha=0"}},
                                  {"noguide", {"replay.guidance=false"}},
                                  {"plain", {"distill.enabled=false", "replay.guidance=false"}}};
  return a;
}

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"vid2act"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, std::cerr);
  std::cerr << out.str();
  return code;
}

class LongRuns {
 public:
  LongRuns(fs::path config, fs::path work) : config_(std::move(config)), work_(std::move(work)) {}

  // Runs (or reuses) everything; returns false with a message on failure.
  bool prepare(std::string& error) {
    if (prepared_) return ok_;
    prepared_ = true;
    try {
      const RunConfig base = load_run_config(config_);
      fs::create_directories(work_);
      for (const auto& id : base.sources) {
        if (fs::is_directory(work_ / "data" / id)) continue;
        log("generating " + id);
        if (cli({"gen-data", "--env", id, "--episodes", std::to_string(kSourceEpisodes), "--a-max",
                 std::to_string(base.model.action_dim), "--out", (work_ / "data").string()}) != 0) {
          throw std::runtime_error("gen-data failed for " + id);
        }
      }
      for (const auto& id : base.sources) {
        if (fs::exists(work_ / "teachers" / (id + ".bin"))) continue;
        log("pretraining teacher " + id);
        std::vector<std::string> args{"pretrain", "--config", config_.string(), "--env", id, "--steps",
                                      std::to_string(kPretrainSteps), "--batch", std::to_string(kPretrainBatch),
                                      "--length", std::to_string(kPretrainLength)};
        for (const auto& s : paths()) args.insert(args.end(), {"--set", s});
        if (cli(args) != 0) throw std::runtime_error("pretrain failed for " + id);
      }
      for (const Arm& arm : arms()) {
        for (int seed = 0; seed < kSeeds; ++seed) run(arm, seed);
      }
      ok_ = true;
    } catch (const std::exception& e) {
      error_ = e.what();
    }
    error = error_;
    return ok_;
  }

  fs::path out(const Arm& arm, int seed) const { return work_ / "runs" / (arm.name + "_s" + std::to_string(seed)); }
  const RunConfig& config_of(const Arm& arm, int seed) const { return configs_.at(out(arm, seed).string()); }

 private:
  std::vector<std::string> paths() const {
    return {"data.source_root=" + (work_ / "data").string(), "data.teacher_root=" + (work_ / "teachers").string()};
  }

  void run(const Arm& arm, int seed) {
    std::vector<std::string> sets = paths();
    sets.push_back("run.seed=" + std::to_string(seed));
    sets.push_back("run.out=" + out(arm, seed).string());
    sets.insert(sets.end(), arm.overrides.begin(), arm.overrides.end());
    const RunConfig cfg = load_run_config(config_, sets);
    configs_[out(arm, seed).string()] = cfg;
    const fs::path dir = cfg.out;
    if (fs::exists(dir / "eval.json") && fs::exists(dir / "config.resolved.json") &&
        to_json(load_run_config(dir / "config.resolved.json")) == to_json(cfg)) {
      log("reusing " + dir.string());
      return;
    }
    log("training " + arm.name + " seed " + std::to_string(seed));
    const auto t0 = std::chrono::steady_clock::now();
    Trainer(cfg, TrainOptions{.force = true}).run();
    const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    log("  done in " + fmt(mins) + " min");
  }

  static void log(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

  fs::path config_, work_;
  bool prepared_ = false, ok_ = false;
  std::string error_;
  std::map<std::string, RunConfig> configs_;
};

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double sample_var(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// 5. The matching source dominates the weights late in training.
Outcome domain_selection(LongRuns& runs) {
  std::string err;
  if (!runs.prepare(err)) return {false, "long runs unavailable: " + err};
  const Arm& full = arms()[0];
  int good = 0;
  std::string per_seed;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const RunConfig& cfg = runs.config_of(full, seed);
    const auto it = std::find(cfg.sources.begin(), cfg.sources.end(), kMatchingSource);
    if (it == cfg.sources.end()) return {false, std::string(kMatchingSource) + " is not among the configured sources"};
    const std::string col = "w_" + std::to_string(it - cfg.sources.begin() + 1);
    const CsvTable t = read_csv(cfg.out / "weights.csv");
    const std::vector<double> steps = t.values("step"), w = t.values(col);
    const double last = steps.back();
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (steps[i] > last - kFinalWindow) {
        sum += w[i];
        ++n;
      }
    }
    const double m = sum / n;
    good += m > kMatchWeight ? 1 : 0;
    per_seed += (per_seed.empty() ? "" : ", ") + fmt(m);
  }
  return {good >= kMatchSeedsNeeded, "mean weight on " + std::string(kMatchingSource) + " over the final " +
                                         std::to_string(kFinalWindow) + " updates per seed: " + per_seed + " (need > " +
                                         fmt(kMatchWeight) + " on >= " + std::to_string(kMatchSeedsNeeded) + " of " +
                                         std::to_string(kSeeds) + ")"};
}

// 6. Ablation ordering on the mean return of the episodes collected during the
// final 1k updates.
Outcome ablation_ordering(LongRuns& runs) {
  std::string err;
  if (!runs.prepare(err)) return {false, "long runs unavailable: " + err};
  std::map<std::string, std::vector<double>> per_arm;
  for (const Arm& arm : arms()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      const CsvTable t = read_csv(runs.config_of(arm, seed).out / "metrics.csv");
      const std::vector<double> steps = t.values("step"), ret = t.values("return");
      const double last = steps.back();
      std::vector<double> window;
      for (std::size_t i = 0; i < ret.size(); ++i) {
        if (steps[i] > last - kFinalWindow) window.push_back(ret[i]);
      }
      per_arm[arm.name].push_back(mean(window));
    }
  }
  const double full = mean(per_arm["full"]), a0 = mean(per_arm["alpha0"]), ng = mean(per_arm["noguide"]),
               plain = mean(per_arm["plain"]);
  const double pooled = std::sqrt(0.5 * (sample_var(per_arm["full"]) + sample_var(per_arm["plain"])));
  const bool pass = full >= a0 && full >= ng && full - plain > pooled;
  return {pass, "mean final return over " + std::to_string(kSeeds) + " seeds: full " + fmt(full) + ", alpha=0 " +
                    fmt(a0) + ", no-guidance " + fmt(ng) + ", plain " + fmt(plain) + "; full - plain " +
                    fmt(full - plain) + " vs pooled std " + fmt(pooled)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string config = "configs/desk.cfg";
  std::string work = "acceptance";
  std::vector<int> only;
  bool quick = false;
  app.add_option("--config", config, "Desk config for criteria 5 and 6")->capture_default_str();
  app.add_option("--work", work, "Work directory for datasets, teachers and runs")->capture_default_str();
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_flag("--quick", quick, "Skip criteria 5 and 6");
  CLI11_PARSE(app, argc, argv);

  LongRuns runs(config, work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"loss identities", loss_identities},
      {"gradient oracles", gradient_oracles},
      {"weight normalization and symmetry", weight_properties},
      {"brute-force equivalence", brute_force},
      {"domain selection", [&] { return domain_selection(runs); }},
      {"ablation ordering", [&] { return ablation_ordering(runs); }},
      {"phase isolation", phase_isolation},
      {"determinism", determinism},
      {"format round trip", format_round_trip},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    if (quick && (id == 5 || id == 6)) {
      std::cout << "criterion " << id << " SKIP  " << criteria[i].first << ": --quick" << std::endl;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << " [" << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat
              << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
