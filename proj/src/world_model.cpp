#include "vid2act/world_model.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "vid2act/errors.hpp"

namespace vid2act {

namespace {

constexpr int kFormatVersion = 1;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

}  // namespace

void WorldModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("world model: ") + name + " must be positive");
  };
  positive(height, "height");
  positive(width, "width");
  positive(channels, "channels");
  positive(pool, "pool");
  positive(conv_depth, "conv_depth");
  positive(conv_layers, "conv_layers");
  positive(embed_dim, "embed_dim");
  positive(deter_dim, "deter_dim");
  positive(stoch_dim, "stoch_dim");
  positive(hidden_dim, "hidden_dim");
  positive(action_dim, "action_dim");
  if (height % pool != 0 || width % pool != 0) throw ConfigError("world model: frame size must be divisible by pool");
  const int div = 1 << conv_layers;
  if (pooled_height() % div != 0 || pooled_width() % div != 0) {
    throw ConfigError("world model: pooled frame size must be divisible by 2^conv_layers");
  }
  if (!(min_std > 0)) throw ConfigError("world model: min_std must be positive");
  if (!(free_nats >= 0)) throw ConfigError("world model: free_nats must be non-negative");
}

void to_json(nlohmann::json& j, const WorldModelConfig& c) {
  j = nlohmann::json{{"height", c.height},         {"width", c.width},         {"channels", c.channels},
                     {"pool", c.pool},             {"conv_depth", c.conv_depth}, {"conv_layers", c.conv_layers},
                     {"embed_dim", c.embed_dim},   {"deter_dim", c.deter_dim}, {"stoch_dim", c.stoch_dim},
                     {"hidden_dim", c.hidden_dim}, {"action_dim", c.action_dim}, {"min_std", c.min_std},
                     {"free_nats", c.free_nats},   {"beta", c.beta},           {"reward_head", c.reward_head}};
}

void from_json(const nlohmann::json& j, WorldModelConfig& c) {
  WorldModelConfig d;
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.channels = j.value("channels", d.channels);
  c.pool = j.value("pool", d.pool);
  c.conv_depth = j.value("conv_depth", d.conv_depth);
  c.conv_layers = j.value("conv_layers", d.conv_layers);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.deter_dim = j.value("deter_dim", d.deter_dim);
  c.stoch_dim = j.value("stoch_dim", d.stoch_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.action_dim = j.value("action_dim", d.action_dim);
  c.min_std = j.value("min_std", d.min_std);
  c.free_nats = j.value("free_nats", d.free_nats);
  c.beta = j.value("beta", d.beta);
  c.reward_head = j.value("reward_head", d.reward_head);
}

LatentState LatentState::detached() const {
  auto d = [](const Var& v) { return v.defined() ? ad::detach(v) : v; };
  return {d(deter), d(stoch), d(mean), d(std)};
}

LatentState LatentState::zeros(Index batch, int deter_dim, int stoch_dim) {
  // std is 1 rather than 0 so the initial state still satisfies std > 0.
  return {ad::zeros(batch, deter_dim), ad::zeros(batch, stoch_dim), ad::zeros(batch, stoch_dim),
          ad::full(batch, stoch_dim, 1.0)};
}

std::pair<Matrix, double> prepare_frame(const Frame& f, const WorldModelConfig& cfg) {
  if (f.height != cfg.height || f.width != cfg.width || f.channels != cfg.channels) {
    throw ValidationError("frame is " + std::to_string(f.height) + "x" + std::to_string(f.width) + "x" +
                          std::to_string(f.channels) + ", model expects " + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width) + "x" + std::to_string(cfg.channels));
  }
  static const std::array<double, 256> level = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[static_cast<std::size_t>(i)] = i / 255.0 - 0.5;
    return t;
  }();
  const int p = cfg.pool;
  const int h = cfg.pooled_height(), w = cfg.pooled_width(), c = cfg.channels;
  Matrix out = Matrix::Zero(1, static_cast<Index>(c) * h * w);
  double* o = out.data();
  const std::uint8_t* px = f.pixels.data();
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      for (int ch = 0; ch < c; ++ch) o[(ch * h + y / p) * w + x / p] += level[*px++];
    }
  }
  out /= static_cast<double>(p * p);
  double residual = 0.0;
  if (p > 1) {
    px = f.pixels.data();
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          const double d = level[*px++] - o[(ch * h + y / p) * w + x / p];
          residual += d * d;
        }
      }
    }
  }
  return {std::move(out), residual};
}

Matrix action_row(const ActionVec& a, int action_dim) {
  if (a.padded_dim() != action_dim) {
    throw ValidationError("action has " + std::to_string(a.padded_dim()) + " padded dims, model expects " +
                          std::to_string(action_dim));
  }
  Matrix m(1, action_dim);
  for (int i = 0; i < action_dim; ++i) m(0, i) = a.values[static_cast<std::size_t>(i)];
  return m;
}

PreparedSequence prepare_sequence(const SequenceBatch& batch, const WorldModelConfig& cfg) {
  PreparedSequence s;
  s.batch = batch.batch;
  s.length = batch.length;
  const Index dim = static_cast<Index>(cfg.channels) * cfg.pooled_height() * cfg.pooled_width();
  for (int t = 0; t < batch.length; ++t) {
    Matrix img(batch.batch, dim);
    Matrix res(batch.batch, 1);
    Matrix act(batch.batch, cfg.action_dim);
    for (int b = 0; b < batch.batch; ++b) {
      auto [row, r] = prepare_frame(batch.obs(b, t), cfg);
      img.row(b) = row.row(0);
      res(b, 0) = r;
      act.row(b) = action_row(batch.action(b, t), cfg.action_dim).row(0);
    }
    s.images.push_back(std::move(img));
    s.residual.push_back(std::move(res));
    s.actions.push_back(std::move(act));
  }
  if (batch.rewards) {
    std::vector<Matrix> rewards;
    for (int t = 0; t < batch.length; ++t) {
      Matrix r(batch.batch, 1);
      for (int b = 0; b < batch.batch; ++b) r(b, 0) = batch.reward(b, t);
      rewards.push_back(std::move(r));
    }
    s.rewards = std::move(rewards);
  }
  return s;
}

PreparedEpisode prepare_episode(const Episode& episode, const WorldModelConfig& cfg) {
  PreparedEpisode out;
  out.domain_id = episode.domain_id;
  const Index T = static_cast<Index>(episode.length());
  out.images.resize(T, static_cast<Index>(cfg.channels) * cfg.pooled_height() * cfg.pooled_width());
  out.residual.resize(T, 1);
  out.actions.resize(T, cfg.action_dim);
  for (Index t = 0; t < T; ++t) {
    auto [row, r] = prepare_frame(episode.frames[static_cast<std::size_t>(t)], cfg);
    out.images.row(t) = row.row(0);
    out.residual(t, 0) = r;
    out.actions.row(t) = action_row(episode.actions[static_cast<std::size_t>(t)], cfg.action_dim).row(0);
  }
  if (episode.rewards) {
    Matrix r(T, 1);
    for (Index t = 0; t < T; ++t) r(t, 0) = (*episode.rewards)[static_cast<std::size_t>(t)];
    out.rewards = std::move(r);
  }
  return out;
}

PreparedSequence gather_sequence(std::span<const PreparedEpisode* const> episodes, std::span<const WindowRef> refs,
                                 int length) {
  if (refs.empty() || length <= 0) throw ValidationError("gather_sequence: empty batch");
  PreparedSequence s;
  s.batch = static_cast<int>(refs.size());
  s.length = length;
  const PreparedEpisode& first = *episodes[refs[0].episode];
  bool rewards = true;
  for (const WindowRef& r : refs) {
    const PreparedEpisode& ep = *episodes[r.episode];
    if (r.start + static_cast<std::size_t>(length) > ep.length()) throw ValidationError("gather_sequence: window out of range");
    rewards = rewards && ep.rewards.has_value();
  }
  std::vector<Matrix> rew;
  for (int t = 0; t < length; ++t) {
    Matrix img(s.batch, first.images.cols()), res(s.batch, 1), act(s.batch, first.actions.cols()), rw(s.batch, 1);
    for (int b = 0; b < s.batch; ++b) {
      const PreparedEpisode& ep = *episodes[refs[b].episode];
      const Index row = static_cast<Index>(refs[b].start) + t;
      img.row(b) = ep.images.row(row);
      res(b, 0) = ep.residual(row, 0);
      act.row(b) = ep.actions.row(row);
      if (rewards) rw(b, 0) = (*ep.rewards)(row, 0);
    }
    s.images.push_back(std::move(img));
    s.residual.push_back(std::move(res));
    s.actions.push_back(std::move(act));
    if (rewards) rew.push_back(std::move(rw));
  }
  if (rewards) s.rewards = std::move(rew);
  return s;
}

Var image_log_loss(const Var& decoded, const Matrix& target, const Matrix& residual, const WorldModelConfig& cfg) {
  const double rows = static_cast<double>(decoded.rows());
  const double p2 = static_cast<double>(cfg.pool) * cfg.pool;
  const double pixels = static_cast<double>(cfg.height) * cfg.width * cfg.channels;
  // Within a pool block the prediction is constant, so the full-resolution
  // squared error splits into p^2 * (block mean error)^2 plus the residual.
  Var sq = ad::sum(ad::square(decoded - ad::constant(target)));
  const double constant_term = 0.5 * residual.sum() / rows + 0.5 * pixels * kLog2Pi;
  return ad::add_scalar(ad::scale(sq, 0.5 * p2 / rows), constant_term);
}

Var kl_divergence(const LatentState& q, const LatentState& p) {
  if (q.std.value().minCoeff() <= 0.0 || p.std.value().minCoeff() <= 0.0) {
    throw NumericError("kl_divergence: non-positive std");
  }
  Var ratio = q.std / p.std;
  Var shift = (q.mean - p.mean) / p.std;
  Var per_dim = ad::scale(ad::add_scalar(ad::square(ratio) + ad::square(shift), -1.0), 0.5) - ad::log(ratio);
  return ad::row_sum(per_dim);
}

Var kl_loss(std::span<const StatePair> pairs, double beta, double free_nats) {
  if (pairs.empty()) throw std::invalid_argument("kl_loss: no state pairs");
  std::vector<Var> terms;
  terms.reserve(pairs.size());
  for (const StatePair& sp : pairs) terms.push_back(kl_divergence(sp.posterior, sp.prior));
  Var mean_kl = ad::mean(ad::concat_rows(terms));
  return ad::scale(ad::clamp_min(ad::add_scalar(mean_kl, -free_nats), 0.0), beta);
}

Var kl_loss(const StatePair& pair, double beta, double free_nats) {
  return kl_loss(std::span<const StatePair>(&pair, 1), beta, free_nats);
}

Var reward_log_loss(const Var& predicted, const Matrix& target) {
  return ad::add_scalar(ad::scale(ad::mean(ad::square(predicted - ad::constant(target))), 0.5), 0.5 * kLog2Pi);
}

WorldModel::WorldModel(const WorldModelConfig& cfg, Rng& rng) : cfg_(cfg), params_("world_model") {
  cfg_.validate();
  const ad::ImageShape img{cfg_.channels, cfg_.pooled_height(), cfg_.pooled_width()};
  const nn::ConvStackConfig conv{cfg_.conv_depth, cfg_.conv_layers, {4, 2, 1}};
  encoder_ = nn::ConvEncoder(params_, "encoder", img, conv, cfg_.embed_dim, rng);
  decoder_ = nn::ConvDecoder(params_, "decoder", cfg_.state_dim(), img, conv, rng);
  img_in_ = nn::Linear(params_, "img_in", cfg_.stoch_dim + cfg_.action_dim, cfg_.hidden_dim, rng);
  cell_ = nn::GruCell(params_, "gru", cfg_.hidden_dim, cfg_.deter_dim, rng);
  prior_net_ = nn::Mlp(params_, "prior", cfg_.deter_dim, {cfg_.hidden_dim}, 2 * cfg_.stoch_dim, rng);
  posterior_net_ = nn::Mlp(params_, "posterior", cfg_.deter_dim + cfg_.embed_dim, {cfg_.hidden_dim}, 2 * cfg_.stoch_dim, rng);
  if (cfg_.reward_head) {
    reward_net_ = nn::Mlp(params_, "reward", cfg_.state_dim(), {cfg_.hidden_dim, cfg_.hidden_dim}, 1, rng);
  }
}

Var WorldModel::encode(const Var& images) const { return encoder_(images); }

Var WorldModel::encode_obs(const Frame& frame) const { return encode(ad::constant(prepare_frame(frame, cfg_).first)); }

LatentState WorldModel::make_state(const Var& deter, const Var& stats, Rng* rng) const {
  LatentState s;
  s.deter = deter;
  s.mean = ad::slice_cols(stats, 0, cfg_.stoch_dim);
  s.std = ad::add_scalar(ad::softplus(ad::slice_cols(stats, cfg_.stoch_dim, cfg_.stoch_dim)), cfg_.min_std);
  if (rng) {
    s.stoch = s.mean + s.std * ad::constant(ad::randn(deter.rows(), cfg_.stoch_dim, *rng));
  } else {
    s.stoch = s.mean;
  }
  return s;
}

Var WorldModel::transition(const LatentState& prev, const Var& action) const {
  if (action.cols() != cfg_.action_dim) throw ValidationError("action width does not match A_max");
  ad::check_finite(prev.deter, "prev.deter");
  ad::check_finite(prev.stoch, "prev.stoch");
  ad::check_finite(action, "action");
  Var x = ad::elu(img_in_(ad::concat_cols({prev.stoch, action})));
  return cell_(x, prev.deter);
}

StatePair WorldModel::observe_step(const LatentState& prev, const Var& prev_action, const Var& embedding, Rng* rng) const {
  ad::check_finite(embedding, "embedding");
  Var deter = transition(prev, prev_action);
  StatePair out;
  out.prior = make_state(deter, prior_net_(deter), rng);
  out.posterior = make_state(deter, posterior_net_(ad::concat_cols({deter, embedding})), rng);
  return out;
}

LatentState WorldModel::imagine_step(const LatentState& prev, const Var& action, Rng* rng) const {
  Var deter = transition(prev, action);
  return make_state(deter, prior_net_(deter), rng);
}

Var WorldModel::decode_pooled(const LatentState& state) const { return decoder_(state.features()); }

Matrix WorldModel::decode(const LatentState& state) const {
  const Matrix pooled = decode_pooled(state).value();
  const int p = cfg_.pool, h = cfg_.pooled_height(), w = cfg_.pooled_width(), c = cfg_.channels;
  Matrix out(pooled.rows(), static_cast<Index>(cfg_.height) * cfg_.width * c);
  for (Index r = 0; r < pooled.rows(); ++r) {
    for (int y = 0; y < cfg_.height; ++y) {
      for (int x = 0; x < cfg_.width; ++x) {
        for (int ch = 0; ch < c; ++ch) {
          out(r, (static_cast<Index>(y) * cfg_.width + x) * c + ch) = pooled(r, (static_cast<Index>(ch) * h + y / p) * w + x / p);
        }
      }
    }
  }
  return out;
}

Var WorldModel::predict_reward(const LatentState& state) const {
  if (!cfg_.reward_head) throw ConfigError("predict_reward: this world model has no reward head (teacher models never do)");
  return reward_net_(state.features());
}

std::vector<StatePair> WorldModel::observe_sequence(const PreparedSequence& seq, Rng* rng) const {
  if (seq.length < 1) throw ValidationError("observe_sequence: empty sequence");
  // One encoder pass over all B*L frames.
  std::vector<Var> frames;
  for (const Matrix& m : seq.images) frames.push_back(ad::constant(m));
  Var embed = encode(ad::concat_rows(frames));
  std::vector<StatePair> out;
  out.reserve(static_cast<std::size_t>(seq.length));
  LatentState prev = initial_state(seq.batch);
  for (int t = 0; t < seq.length; ++t) {
    StatePair sp = observe_step(prev, ad::constant(seq.actions[t]), ad::slice_rows(embed, static_cast<Index>(t) * seq.batch, seq.batch), rng);
    prev = sp.posterior;
    out.push_back(std::move(sp));
  }
  return out;
}

WorldModelLosses WorldModel::losses_for(const PreparedSequence& seq, std::vector<StatePair> states, bool include_reward) const {
  if (include_reward && !seq.rewards) throw ValidationError("sequence_loss: reward term requested but batch has no rewards");
  WorldModelLosses L;
  std::vector<Var> feats;
  feats.reserve(states.size());
  for (const StatePair& sp : states) feats.push_back(sp.posterior.features());
  Var all_feats = ad::concat_rows(feats);

  Matrix target(static_cast<Index>(seq.length) * seq.batch, seq.images.front().cols());
  Matrix residual(target.rows(), 1);
  for (int t = 0; t < seq.length; ++t) {
    target.middleRows(static_cast<Index>(t) * seq.batch, seq.batch) = seq.images[t];
    residual.middleRows(static_cast<Index>(t) * seq.batch, seq.batch) = seq.residual[t];
  }
  L.image = image_log_loss(decoder_(all_feats), target, residual, cfg_);
  L.kl = kl_loss(states, cfg_.beta, cfg_.free_nats);
  L.total = L.image + L.kl;
  if (include_reward) {
    Matrix rew(target.rows(), 1);
    for (int t = 0; t < seq.length; ++t) rew.middleRows(static_cast<Index>(t) * seq.batch, seq.batch) = (*seq.rewards)[t];
    L.reward = reward_log_loss(reward_net_(all_feats), rew);
    L.total = L.total + L.reward;
  }
  L.states = std::move(states);
  return L;
}

WorldModelLosses WorldModel::sequence_loss(const PreparedSequence& seq, bool include_reward, Rng* rng) const {
  if (include_reward && !cfg_.reward_head) throw ConfigError("sequence_loss: reward term requires a reward head");
  return losses_for(seq, observe_sequence(seq, rng), include_reward);
}

void WorldModel::save(Archive& ar, const std::string& prefix) const {
  nlohmann::json cfg = cfg_;
  cfg["format_version"] = kFormatVersion;
  ar.put_json(prefix + "config.json", cfg);
  params_.save(ar, prefix + "params/");
}

void WorldModel::save(const std::filesystem::path& path) const {
  Archive ar;
  save(ar);
  ar.write(path);
}

std::unique_ptr<WorldModel> WorldModel::load(const Archive& ar, const std::string& prefix) {
  const nlohmann::json j = ar.get_json(prefix + "config.json");
  if (j.value("format_version", 0) != kFormatVersion) throw ValidationError("world model checkpoint: unsupported format_version");
  const WorldModelConfig cfg = j.get<WorldModelConfig>();
  Rng dummy(0);
  auto model = std::make_unique<WorldModel>(cfg, dummy);
  model->params_.load(ar, prefix + "params/");
  return model;
}

std::unique_ptr<WorldModel> WorldModel::load(const std::filesystem::path& path) { return load(Archive::read(path)); }

}  // namespace vid2act
