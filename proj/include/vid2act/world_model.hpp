#pragma once

// Recurrent state-space world model: convolutional observation encoder,
// GRU-based deterministic path with diagonal-Gaussian stochastic states,
// prior (dynamics) and posterior (representation) heads, a convolutional
// decoder, and an optional reward head used only by the target-domain model.

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vid2act/autodiff.hpp"
#include "vid2act/episodes_io.hpp"
#include "vid2act/nn.hpp"

namespace vid2act {

using ad::Matrix;
using ad::Var;
using ad::Index;

struct WorldModelConfig {
  int height = 64;
  int width = 64;
  int channels = 3;
  // Fixed average-pooling factor applied to frames before the encoder; the
  // decoder predicts at the pooled resolution and is upsampled by repetition.
  int pool = 1;
  int conv_depth = 32;
  int conv_layers = 4;
  int embed_dim = 256;
  int deter_dim = 200;
  int stoch_dim = 32;
  int hidden_dim = 200;
  int action_dim = 6;  // A_max
  double min_std = 0.1;
  double free_nats = 1.0;
  double beta = 1.0;
  bool reward_head = false;

  int pooled_height() const { return height / pool; }
  int pooled_width() const { return width / pool; }
  int state_dim() const { return deter_dim + stoch_dim; }
  void validate() const;
  bool operator==(const WorldModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const WorldModelConfig& c);
void from_json(const nlohmann::json& j, WorldModelConfig& c);

/// Batched latent state; every member has one row per batch element.
struct LatentState {
  Var deter;
  Var stoch;
  Var mean;
  Var std;

  Index batch() const { return deter.rows(); }
  Var features() const { return ad::concat_cols({deter, stoch}); }
  LatentState detached() const;
  static LatentState zeros(Index batch, int deter_dim, int stoch_dim);
};

struct StatePair {
  LatentState posterior;
  LatentState prior;
};

/// Frames of one batch converted to model inputs, indexed by time step.
struct PreparedSequence {
  int batch = 0;
  int length = 0;
  std::vector<Matrix> images;     // B x (C*h*w) pooled, channel-major, in [-0.5, 0.5]
  std::vector<Matrix> residual;   // B x 1: within-pool-block squared deviation (constant term)
  std::vector<Matrix> actions;    // B x A_max; actions[t] led to images[t]
  std::optional<std::vector<Matrix>> rewards;  // B x 1
};

PreparedSequence prepare_sequence(const SequenceBatch& batch, const WorldModelConfig& cfg);

/// A whole episode converted once, so repeated window sampling skips pooling.
struct PreparedEpisode {
  std::string domain_id;
  Matrix images;    // T x (C*h*w)
  Matrix residual;  // T x 1
  Matrix actions;   // T x A_max
  std::optional<Matrix> rewards;  // T x 1

  std::size_t length() const { return static_cast<std::size_t>(images.rows()); }
};

PreparedEpisode prepare_episode(const Episode& episode, const WorldModelConfig& cfg);
/// Same layout as prepare_sequence over the windows `refs` (indices into `episodes`).
PreparedSequence gather_sequence(std::span<const PreparedEpisode* const> episodes, std::span<const WindowRef> refs,
                                 int length);
/// One frame to the pooled, normalized model input (1 x C*h*w) and its residual term.
std::pair<Matrix, double> prepare_frame(const Frame& frame, const WorldModelConfig& cfg);
Matrix action_row(const ActionVec& a, int action_dim);

/// Sum of -ln N(x; mean, 1) over all full-resolution pixels, averaged over rows.
Var image_log_loss(const Var& decoded, const Matrix& target, const Matrix& residual, const WorldModelConfig& cfg);
/// Closed-form KL[q || p] for diagonal Gaussians, summed over dims: rows x 1.
Var kl_divergence(const LatentState& q, const LatentState& p);
/// beta * max(mean_KL - free_nats, 0) over all pairs and batch rows.
Var kl_loss(std::span<const StatePair> pairs, double beta, double free_nats);
Var kl_loss(const StatePair& pair, double beta, double free_nats);
/// Mean of -ln N(r; prediction, 1).
Var reward_log_loss(const Var& predicted, const Matrix& target);

struct WorldModelLosses {
  Var image;
  Var kl;
  Var reward;  // undefined when the reward term is excluded
  Var total;
  std::vector<StatePair> states;
};

class WorldModel {
 public:
  WorldModel(const WorldModelConfig& cfg, Rng& init_rng);
  WorldModel(const WorldModel&) = delete;
  WorldModel& operator=(const WorldModel&) = delete;

  const WorldModelConfig& config() const { return cfg_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  bool has_reward_head() const { return cfg_.reward_head; }

  /// Pooled normalized images (B x C*h*w) to embeddings (B x embed_dim).
  Var encode(const Var& images) const;
  Var encode_obs(const Frame& frame) const;

  LatentState initial_state(Index batch) const { return LatentState::zeros(batch, cfg_.deter_dim, cfg_.stoch_dim); }

  /// One recurrent update. `rng == nullptr` selects the deterministic mode where stoch == mean.
  StatePair observe_step(const LatentState& prev, const Var& prev_action, const Var& embedding, Rng* rng) const;
  LatentState imagine_step(const LatentState& prev, const Var& action, Rng* rng) const;

  /// Per-pixel Gaussian means at pooled resolution: B x (C*h*w), channel-major.
  Var decode_pooled(const LatentState& state) const;
  /// Full-resolution per-pixel means, B x (H*W*C) in frame (row-major, channel-last) order.
  Matrix decode(const LatentState& state) const;
  Var predict_reward(const LatentState& state) const;

  std::vector<StatePair> observe_sequence(const PreparedSequence& seq, Rng* rng) const;
  WorldModelLosses sequence_loss(const PreparedSequence& seq, bool include_reward, Rng* rng) const;
  /// Loss terms for an already computed posterior/prior rollout.
  WorldModelLosses losses_for(const PreparedSequence& seq, std::vector<StatePair> states, bool include_reward) const;

  void save(Archive& ar, const std::string& prefix = "") const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<WorldModel> load(const Archive& ar, const std::string& prefix = "");
  static std::unique_ptr<WorldModel> load(const std::filesystem::path& path);

 private:
  LatentState make_state(const Var& deter, const Var& stats, Rng* rng) const;
  Var transition(const LatentState& prev, const Var& action) const;

  WorldModelConfig cfg_;
  nn::ParameterSet params_;
  nn::ConvEncoder encoder_;
  nn::ConvDecoder decoder_;
  nn::Linear img_in_;
  nn::GruCell cell_;
  nn::Mlp prior_net_;
  nn::Mlp posterior_net_;
  nn::Mlp reward_net_;
};

}  // namespace vid2act
