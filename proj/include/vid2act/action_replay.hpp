#pragma once

// State-conditioned action VAE trained on the source domains the distillation
// weights rank highest. Its decoder's penultimate activation at z = 0 is the
// guidance feature fed to the actor.

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "vid2act/world_model.hpp"

namespace vid2act {

struct ActionVaeConfig {
  int hidden = 256;
  int latent_dim = 0;  // 0 selects 2 * A_max
  int feature_dim = 64;
  int top_k = 1;
  double min_std = 1e-4;
  bool operator==(const ActionVaeConfig&) const = default;
};

void to_json(nlohmann::json& j, const ActionVaeConfig& c);
void from_json(const nlohmann::json& j, ActionVaeConfig& c);

struct VaeLoss {
  Var recon;
  Var kl;
  Var total;
};

class ActionVae {
 public:
  ActionVae(int state_dim, int action_dim, const ActionVaeConfig& cfg, Rng& init_rng);
  ActionVae(const ActionVae&) = delete;
  ActionVae& operator=(const ActionVae&) = delete;

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  int latent_dim() const { return latent_dim_; }
  int feature_dim() const { return cfg_.feature_dim; }
  const ActionVaeConfig& config() const { return cfg_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  struct Posterior {
    Var mean;
    Var std;
  };
  struct Decoded {
    Var action;   // tanh output, R x A_max
    Var feature;  // penultimate activation, R x feature_dim
  };

  Posterior encode(const Var& states, const Var& actions) const;
  Decoded decode(const Var& states, const Var& z) const;
  /// Decoder feature at z = 0. Call with the parameters frozen (see FreezeGuard)
  /// so gradients reach the state but never the VAE.
  Var guidance(const Var& states) const;

  /// Reconstruction + KL to N(0, I) with z = mean + std * noise; sums over
  /// rows and divides by `batch`.
  VaeLoss loss(const Var& states, const Matrix& actions, const Matrix& noise, int batch) const;

  void save(Archive& ar, const std::string& prefix = "") const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ActionVae> load(const Archive& ar, const std::string& prefix = "");
  static std::unique_ptr<ActionVae> load(const std::filesystem::path& path);

 private:
  int state_dim_;
  int action_dim_;
  int latent_dim_;
  ActionVaeConfig cfg_;
  nn::ParameterSet params_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
};

/// Loss terms from already computed quantities; rows are summed and divided by `batch`.
VaeLoss vae_loss_terms(const Var& reconstructed, const Matrix& target, const Var& mean, const Var& std, int batch);

/// Indices of the k largest weights; ties go to the lower index.
std::vector<int> select_source(std::span<const double> weights, int k);

/// Windows of one source domain, already converted with the student's config.
struct SourcePool {
  std::string domain_id;
  std::vector<PreparedEpisode> episodes;
};

struct VaeStepResult {
  bool skipped = false;
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::vector<int> selected;
};

/// Samples windows from the selected pools, embeds them with the student
/// (frozen, detached), pairs each posterior e_t with the action taken from it
/// (actions[t+1]) and takes one optimizer step on the VAE only.
VaeStepResult train_step_on_sources(ActionVae& vae, nn::Adam& opt, WorldModel& student,
                                    std::span<const SourcePool> pools, std::span<const double> weights, int batch,
                                    int length, Rng& rng);

}  // namespace vid2act
