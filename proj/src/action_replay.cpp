#include "vid2act/action_replay.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "vid2act/archive.hpp"
#include "vid2act/errors.hpp"

namespace vid2act {

namespace {
constexpr int kFormatVersion = 1;
}

void to_json(nlohmann::json& j, const ActionVaeConfig& c) {
  j = {{"hidden", c.hidden},       {"latent_dim", c.latent_dim}, {"feature_dim", c.feature_dim},
       {"top_k", c.top_k},         {"min_std", c.min_std}};
}

void from_json(const nlohmann::json& j, ActionVaeConfig& c) {
  ActionVaeConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.top_k = j.value("top_k", d.top_k);
  c.min_std = j.value("min_std", d.min_std);
}

ActionVae::ActionVae(int state_dim, int action_dim, const ActionVaeConfig& cfg, Rng& rng)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      latent_dim_(cfg.latent_dim > 0 ? cfg.latent_dim : 2 * action_dim),
      cfg_(cfg),
      params_("action_vae") {
  if (state_dim <= 0 || action_dim <= 0 || cfg.hidden <= 0 || cfg.feature_dim <= 0 || cfg.latent_dim < 0) {
    throw ConfigError("action VAE: dimensions must be positive");
  }
  if (cfg.min_std <= 0.0) throw ConfigError("action VAE: min_std must be positive");
  encoder_ = nn::Mlp(params_, "encoder", state_dim + action_dim, {cfg.hidden}, 2 * latent_dim_, rng);
  decoder_ = nn::Mlp(params_, "decoder", state_dim + latent_dim_, {cfg.hidden, cfg.feature_dim}, action_dim, rng);
}

ActionVae::Posterior ActionVae::encode(const Var& states, const Var& actions) const {
  if (states.cols() != state_dim_ || actions.cols() != action_dim_ || states.rows() != actions.rows()) {
    throw ValidationError("action VAE encode: input shape mismatch");
  }
  const Var stats = encoder_(ad::concat_cols({states, actions}));
  Posterior p;
  p.mean = ad::slice_cols(stats, 0, latent_dim_);
  p.std = ad::add_scalar(ad::softplus(ad::slice_cols(stats, latent_dim_, latent_dim_)), cfg_.min_std);
  return p;
}

ActionVae::Decoded ActionVae::decode(const Var& states, const Var& z) const {
  if (states.cols() != state_dim_ || z.cols() != latent_dim_ || states.rows() != z.rows()) {
    throw ValidationError("action VAE decode: input shape mismatch");
  }
  Decoded d;
  d.feature = decoder_.penultimate(ad::concat_cols({states, z}));
  d.action = ad::tanh(decoder_.head(d.feature));
  return d;
}

Var ActionVae::guidance(const Var& states) const {
  return decode(states, ad::zeros(states.rows(), latent_dim_)).feature;
}

VaeLoss vae_loss_terms(const Var& reconstructed, const Matrix& target, const Var& mean, const Var& std, int batch) {
  if (batch <= 0) throw ValidationError("vae loss: batch must be positive");
  VaeLoss out;
  const double inv = 1.0 / batch;
  out.recon = ad::scale(ad::sum(ad::square(reconstructed - ad::constant(target))), inv);
  // KL[N(m, s) || N(0, 1)] = 0.5 (m^2 + s^2 - 1) - log s per dimension.
  const Var per_dim = ad::scale(ad::add_scalar(ad::square(mean) + ad::square(std), -1.0), 0.5) - ad::log(std);
  out.kl = ad::scale(ad::sum(per_dim), inv);
  out.total = out.recon + out.kl;
  return out;
}

VaeLoss ActionVae::loss(const Var& states, const Matrix& actions, const Matrix& noise, int batch) const {
  const Posterior q = encode(states, ad::constant(actions));
  if (noise.rows() != states.rows() || noise.cols() != latent_dim_) throw ValidationError("action VAE: noise shape");
  const Var z = q.mean + q.std * ad::constant(noise);
  return vae_loss_terms(decode(states, z).action, actions, q.mean, q.std, batch);
}

void ActionVae::save(Archive& ar, const std::string& prefix) const {
  nlohmann::json j = cfg_;
  j["format_version"] = kFormatVersion;
  j["state_dim"] = state_dim_;
  j["action_dim"] = action_dim_;
  ar.put_json(prefix + "vae_config.json", j);
  params_.save(ar, prefix + "params/");
}

void ActionVae::save(const std::filesystem::path& path) const {
  Archive ar;
  save(ar);
  ar.write(path);
}

std::unique_ptr<ActionVae> ActionVae::load(const Archive& ar, const std::string& prefix) {
  const nlohmann::json j = ar.get_json(prefix + "vae_config.json");
  if (j.value("format_version", 0) != kFormatVersion) throw ValidationError("action VAE checkpoint: unsupported format_version");
  Rng dummy(0);
  auto vae = std::make_unique<ActionVae>(j.at("state_dim").get<int>(), j.at("action_dim").get<int>(),
                                         j.get<ActionVaeConfig>(), dummy);
  vae->params_.load(ar, prefix + "params/");
  return vae;
}

std::unique_ptr<ActionVae> ActionVae::load(const std::filesystem::path& path) { return load(Archive::read(path)); }

std::vector<int> select_source(std::span<const double> weights, int k) {
  const int n = static_cast<int>(weights.size());
  if (k < 1 || k > n) {
    throw ConfigError("select_source: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return weights[static_cast<std::size_t>(a)] > weights[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

VaeStepResult train_step_on_sources(ActionVae& vae, nn::Adam& opt, WorldModel& student,
                                    std::span<const SourcePool> pools, std::span<const double> weights, int batch,
                                    int length, Rng& rng) {
  if (pools.size() != weights.size()) throw ValidationError("train_step_on_sources: one weight per source pool");
  if (length < 2) throw ConfigError("train_step_on_sources: windows need at least two steps");
  VaeStepResult result;
  result.selected = select_source(weights, vae.config().top_k);

  std::vector<const PreparedEpisode*> episodes;
  std::vector<std::size_t> lengths;
  for (int i : result.selected) {
    for (const PreparedEpisode& ep : pools[static_cast<std::size_t>(i)].episodes) {
      if (ep.length() < static_cast<std::size_t>(length)) continue;
      episodes.push_back(&ep);
      lengths.push_back(ep.length());
    }
  }
  if (episodes.empty()) {
    std::cerr << "warning: no source windows of length " << length << " in the selected domains; skipping VAE step\n";
    result.skipped = true;
    return result;
  }

  const auto refs = sample_windows(lengths, batch, length, rng);
  const PreparedSequence seq = gather_sequence(episodes, refs, length);
  std::vector<StatePair> states;
  {
    nn::FreezeGuard freeze(student.params());
    states = student.observe_sequence(seq, &rng);
  }
  std::vector<Var> rows;
  std::vector<Matrix> acts;
  for (int t = 0; t + 1 < length; ++t) {
    rows.push_back(ad::detach(states[static_cast<std::size_t>(t)].posterior.features()));
    acts.push_back(seq.actions[static_cast<std::size_t>(t + 1)]);
  }
  const Var s = ad::concat_rows(rows);
  Matrix a(s.rows(), vae.action_dim());
  for (std::size_t t = 0; t < acts.size(); ++t) a.middleRows(static_cast<Index>(t) * batch, batch) = acts[t];
  const Matrix noise = ad::randn(s.rows(), vae.latent_dim(), rng);

  const VaeLoss L = vae.loss(s, a, noise, batch);
  if (!std::isfinite(L.total.item())) throw NumericError("action VAE: non-finite loss");
  ad::backward(L.total);
  opt.step();
  result.recon = L.recon.item();
  result.kl = L.kl.item();
  result.total = L.total.item();
  return result;
}

}  // namespace vid2act
