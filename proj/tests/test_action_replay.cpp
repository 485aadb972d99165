#include <gtest/gtest.h>

#include <cmath>

#include "grad_check.hpp"
#include "test_util.hpp"
#include "vid2act/action_replay.hpp"
#include "vid2act/errors.hpp"

using namespace vid2act;
using vid2act::testing::random_episode;
using vid2act::testing::TempDir;

namespace {

WorldModelConfig tiny_config() {
  WorldModelConfig c;
  c.height = 8;
  c.width = 8;
  c.conv_depth = 4;
  c.conv_layers = 2;
  c.embed_dim = 16;
  c.deter_dim = 8;
  c.stoch_dim = 4;
  c.hidden_dim = 16;
  c.action_dim = 4;
  return c;
}

ActionVaeConfig tiny_vae() {
  ActionVaeConfig v;
  v.hidden = 16;
  v.feature_dim = 8;
  return v;
}

// Each episode repeats one random action after the initial zero action.
Episode constant_action_episode(Rng& rng, int length, const std::string& domain) {
  Episode ep = random_episode(rng, length, domain, false);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  const std::vector<float> raw{u(rng), u(rng)};
  for (std::size_t t = 1; t < ep.actions.size(); ++t) ep.actions[t] = pad_action(raw, 4);
  return ep;
}

SourcePool make_pool(const std::vector<Episode>& eps, const WorldModelConfig& c) {
  SourcePool p;
  p.domain_id = eps.front().domain_id;
  for (const auto& e : eps) p.episodes.push_back(prepare_episode(e, c));
  return p;
}

}  // namespace

TEST(SelectSource, ExamplesAndTies) {
  const std::vector<double> w{0.2, 0.5, 0.3};
  EXPECT_EQ(select_source(w, 1), std::vector<int>{1});
  EXPECT_EQ(select_source(w, 2), (std::vector<int>{1, 2}));
  EXPECT_EQ(select_source(w, 3), (std::vector<int>{1, 2, 0}));
  const std::vector<double> u{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(select_source(u, 1), std::vector<int>{0});
  EXPECT_EQ(select_source(u, 2), (std::vector<int>{0, 1}));
  const std::vector<double> tie{0.1, 0.45, 0.45};
  EXPECT_EQ(select_source(tie, 1), std::vector<int>{1});
}

TEST(SelectSource, KOutOfRange) {
  const std::vector<double> w{0.5, 0.5};
  EXPECT_THROW(select_source(w, 0), ConfigError);
  EXPECT_THROW(select_source(w, 3), ConfigError);
}

TEST(SelectSource, ArgmaxMatchesPreSoftmaxScores) {
  Rng rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(5);
    for (auto& s : scores) s = n(rng);
    double z = 0.0;
    std::vector<double> w(5);
    for (std::size_t i = 0; i < 5; ++i) z += w[i] = std::exp(3.0 * scores[i] + 1.0);
    for (auto& x : w) x /= z;
    EXPECT_EQ(select_source(w, 1), select_source(scores, 1));
    EXPECT_EQ(select_source(w, 3), select_source(scores, 3));
  }
}

TEST(VaeLoss, ZeroAtPerfectReconstructionAndStandardPosterior) {
  Rng rng(2);
  const Matrix target = ad::randn(6, 4, rng).array().tanh();
  const VaeLoss L = vae_loss_terms(ad::constant(target), target, ad::zeros(6, 8), ad::full(6, 8, 1.0), 3);
  EXPECT_EQ(L.recon.item(), 0.0);
  EXPECT_EQ(L.kl.item(), 0.0);
  EXPECT_EQ(L.total.item(), 0.0);
}

TEST(VaeLoss, TermsMatchLoops) {
  Rng rng(3);
  const int rows = 6, batch = 2;
  const Matrix recon = ad::randn(rows, 4, rng), target = ad::randn(rows, 4, rng);
  const Matrix mean = ad::randn(rows, 3, rng);
  const Matrix std = ad::randn(rows, 3, rng).array().exp();
  const VaeLoss L = vae_loss_terms(ad::constant(recon), target, ad::constant(mean), ad::constant(std), batch);
  double r = 0.0, k = 0.0;
  for (int i = 0; i < rows; ++i) {
    for (int d = 0; d < 4; ++d) r += (recon(i, d) - target(i, d)) * (recon(i, d) - target(i, d));
    for (int d = 0; d < 3; ++d) {
      const double m = mean(i, d), s = std(i, d);
      k += 0.5 * (m * m + s * s - 1.0) - std::log(s);
    }
  }
  EXPECT_NEAR(L.recon.item(), r / batch, 1e-12);
  EXPECT_NEAR(L.kl.item(), k / batch, 1e-12);
  EXPECT_GE(L.kl.item(), 0.0);
}

TEST(ActionVae, ShapesRangesAndDeterminism) {
  Rng rng(4);
  ActionVae vae(12, 4, tiny_vae(), rng);
  EXPECT_EQ(vae.latent_dim(), 8);
  const Var s = ad::constant(ad::randn(5, 12, rng) * 3.0);
  const Var a = ad::constant(ad::randn(5, 4, rng).array().tanh());
  auto p1 = vae.encode(s, a), p2 = vae.encode(s, a);
  EXPECT_EQ(p1.mean.cols(), 8);
  EXPECT_EQ(p1.std.cols(), 8);
  EXPECT_TRUE((p1.std.value().array() > 0.0).all());
  EXPECT_EQ(p1.mean.value(), p2.mean.value());
  const Var z = ad::constant(ad::randn(5, 8, rng) * 10.0);
  auto d1 = vae.decode(s, z), d2 = vae.decode(s, z);
  EXPECT_EQ(d1.feature.cols(), 8);
  EXPECT_EQ(d1.action.cols(), 4);
  EXPECT_TRUE((d1.action.value().array().abs() <= 1.0).all());
  EXPECT_EQ(d1.action.value(), d2.action.value());
  EXPECT_EQ(d1.feature.value(), d2.feature.value());
  EXPECT_EQ(vae.guidance(s).value(), vae.guidance(s).value());
  EXPECT_EQ(vae.guidance(s).value(), vae.decode(s, ad::zeros(5, 8)).feature.value());
}

TEST(ActionVae, DefaultFeatureDim) {
  Rng rng(5);
  ActionVae vae(12, 6, ActionVaeConfig{}, rng);
  EXPECT_EQ(vae.feature_dim(), 64);
  EXPECT_EQ(vae.latent_dim(), 12);
  EXPECT_EQ(vae.config().top_k, 1);
}

TEST(ActionVae, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  ActionVae vae(6, 3, {.hidden = 8, .latent_dim = 2, .feature_dim = 5}, rng);
  const Matrix s = ad::randn(4, 6, rng);
  const Matrix a = ad::randn(4, 3, rng).array().tanh();
  const Matrix noise = ad::randn(4, 2, rng);
  auto loss_fn = [&] { return vae.loss(ad::constant(s), a, noise, 2).total; };
  auto r = vid2act::testing::grad_check_all(vae.params(), loss_fn, 1e-5, 32);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.max_abs_grad, 0.0);
}

TEST(ActionVae, GuidanceGradientReachesStateOnly) {
  Rng rng(7);
  ActionVae vae(6, 3, tiny_vae(), rng);
  Var s(ad::randn(3, 6, rng), true);
  {
    nn::FreezeGuard freeze(vae.params());
    ad::backward(ad::sum(ad::square(vae.guidance(s))));
  }
  EXPECT_GT(s.grad().norm(), 0.0);
  for (auto& [name, v] : vae.params().entries()) EXPECT_FALSE(v.has_grad()) << name;
  EXPECT_TRUE(vae.params().trainable());
}

TEST(ActionVae, SaveLoadRoundTrip) {
  Rng rng(8);
  ActionVae vae(6, 3, tiny_vae(), rng);
  TempDir dir;
  vae.save(dir / "vae.bin");
  auto back = ActionVae::load(dir / "vae.bin");
  EXPECT_EQ(back->params().hash(), vae.params().hash());
  EXPECT_EQ(back->config(), vae.config());
  const Var s = ad::constant(ad::randn(2, 6, rng));
  EXPECT_EQ(back->guidance(s).value(), vae.guidance(s).value());
}

TEST(TrainStep, UpdatesOnlyTheVae) {
  Rng rng(9);
  WorldModelConfig c = tiny_config();
  WorldModel student(c, rng);
  ActionVae vae(c.state_dim(), c.action_dim, tiny_vae(), rng);
  std::vector<Episode> a{random_episode(rng, 8, "a", false), random_episode(rng, 9, "a", false)};
  std::vector<Episode> b{random_episode(rng, 8, "b", false)};
  std::vector<SourcePool> pools{make_pool(a, c), make_pool(b, c)};
  nn::Adam opt(vae.params(), {});
  const auto student_hash = student.params().hash();
  const auto vae_hash = vae.params().hash();
  const std::vector<double> w{0.3, 0.7};
  VaeStepResult r = train_step_on_sources(vae, opt, student, pools, w, 3, 4, rng);
  EXPECT_FALSE(r.skipped);
  EXPECT_EQ(r.selected, std::vector<int>{1});
  EXPECT_TRUE(std::isfinite(r.total));
  EXPECT_EQ(student.params().hash(), student_hash);
  EXPECT_NE(vae.params().hash(), vae_hash);
  EXPECT_TRUE(student.params().trainable());
  for (auto& [name, v] : student.params().entries()) EXPECT_FALSE(v.has_grad()) << name;
}

TEST(TrainStep, SkipsWhenSelectedDomainHasNoWindows) {
  Rng rng(10);
  WorldModelConfig c = tiny_config();
  WorldModel student(c, rng);
  ActionVae vae(c.state_dim(), c.action_dim, tiny_vae(), rng);
  std::vector<Episode> shorty{random_episode(rng, 3, "a", false)};
  std::vector<SourcePool> pools{make_pool(shorty, c)};
  nn::Adam opt(vae.params(), {});
  const auto h = vae.params().hash();
  const std::vector<double> w{1.0};
  VaeStepResult r = train_step_on_sources(vae, opt, student, pools, w, 2, 5, rng);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(vae.params().hash(), h);
}

TEST(TrainStep, BeatsMeanActionBaselineOnConstantActionSource) {
  Rng rng(11);
  WorldModelConfig c = tiny_config();
  WorldModel student(c, rng);
  ActionVae vae(c.state_dim(), c.action_dim, tiny_vae(), rng);
  std::vector<Episode> eps;
  for (int i = 0; i < 20; ++i) eps.push_back(constant_action_episode(rng, 12, "src"));
  std::vector<SourcePool> pools{make_pool(eps, c)};

  // Mean-action predictor: every window contributes (length - 1) pairs, none of them the zero first action.
  const int length = 6;
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(4);
  for (const auto& p : pools[0].episodes) mean += p.actions.row(1);
  mean /= static_cast<double>(eps.size());
  double var = 0.0;
  for (const auto& p : pools[0].episodes) var += (p.actions.row(1) - mean).squaredNorm();
  var /= static_cast<double>(eps.size());
  const double baseline = (length - 1) * var;

  nn::Adam opt(vae.params(), {.lr = 1e-3});
  const std::vector<double> w{1.0};
  double late = 0.0;
  for (int step = 1; step <= 2000; ++step) {
    VaeStepResult r = train_step_on_sources(vae, opt, student, pools, w, 8, length, rng);
    if (step > 1900) late += r.total / 100.0;
  }
  EXPECT_LT(late, baseline) << "baseline " << baseline;
}
