#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "vid2act/archive.hpp"
#include "vid2act/autodiff.hpp"
#include "vid2act/seeding.hpp"

namespace vid2act::nn {

using ad::Index;
using ad::Matrix;
using ad::Var;

/// Owns the named leaf tensors of one model. Layers register into a set and
/// keep handles (shared nodes) to their entries.
class ParameterSet {
 public:
  explicit ParameterSet(std::string name = "params") : name_(std::move(name)) {}
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Var add(const std::string& name, Matrix init);

  const std::string& name() const { return name_; }
  std::size_t size() const { return params_.size(); }
  Index count() const;  // scalar count
  const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
  std::vector<std::pair<std::string, Var>>& entries() { return params_; }

  // Trainable parameters feed gradients; untrainable ones enter graphs as constants.
  void set_trainable(bool on);
  bool trainable() const { return trainable_; }

  // Permanent freeze: untrainable, and any attempt to update raises ContractError.
  void lock();
  bool locked() const { return locked_; }

  void zero_grad();
  double grad_norm() const;
  std::uint64_t hash() const;

  void copy_values_from(const ParameterSet& other);
  void save(Archive& ar, const std::string& prefix) const;
  void load(const Archive& ar, const std::string& prefix);

 private:
  std::string name_;
  std::vector<std::pair<std::string, Var>> params_;
  bool trainable_ = true;
  bool locked_ = false;
};

/// Temporarily marks a parameter set untrainable for the guard's lifetime.
class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterSet& set) : set_(set), was_(set.trainable()) { set_.set_trainable(false); }
  ~FreezeGuard() {
    if (!set_.locked()) set_.set_trainable(was_);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterSet& set_;
  bool was_;
};

enum class Activation { None, Elu, Tanh, Relu };

Var activate(const Var& x, Activation a);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng);
  Var operator()(const Var& x) const { return ad::linear(x, weight_, bias_); }
  Index in_features() const { return weight_.rows(); }
  Index out_features() const { return weight_.cols(); }

 private:
  Var weight_;
  Var bias_;
};

/// Fully connected stack; hidden layers use `hidden_act`, the last layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& ps, const std::string& name, Index in, const std::vector<Index>& hidden, Index out, Rng& rng,
      Activation hidden_act = Activation::Elu);
  Var operator()(const Var& x) const;
  // Output of the last hidden layer (after its activation).
  Var penultimate(const Var& x) const;
  Var head(const Var& penultimate) const { return layers_.back()(penultimate); }

 private:
  std::vector<Linear> layers_;
  Activation act_ = Activation::Elu;
};

class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterSet& ps, const std::string& name, Index in, Index hidden, Rng& rng);
  Var operator()(const Var& x, const Var& h) const;
  Index hidden() const { return hidden_; }

 private:
  Linear gates_;      // [x, h] -> reset, update
  Linear candidate_;  // [x, r*h] -> candidate
  Index hidden_ = 0;
};

struct ConvStackConfig {
  Index depth = 32;     // channels of the first conv layer, doubled per layer
  Index layers = 4;
  ad::ConvSpec spec{};
};

class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(ParameterSet& ps, const std::string& name, const ad::ImageShape& in, const ConvStackConfig& cfg,
              Index embed_dim, Rng& rng);
  Var operator()(const Var& images) const;

 private:
  ad::ImageShape in_{};
  ad::ConvSpec spec_{};
  std::vector<std::pair<Var, Var>> convs_;
  std::vector<ad::ImageShape> shapes_;
  Linear out_;
};

class ConvDecoder {
 public:
  ConvDecoder() = default;
  ConvDecoder(ParameterSet& ps, const std::string& name, Index in_dim, const ad::ImageShape& out,
              const ConvStackConfig& cfg, Rng& rng);
  Var operator()(const Var& features) const;

 private:
  ad::ConvSpec spec_{};
  Linear in_;
  std::vector<std::pair<Var, Var>> deconvs_;
  std::vector<ad::ImageShape> shapes_;  // input shape of each deconv, then final output
};

struct AdamConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
  double clip_norm = 100.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig cfg);
  // Applies accumulated gradients, then clears them. Returns the pre-clip gradient norm.
  double step();
  std::int64_t steps() const { return t_; }

 private:
  ParameterSet& params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

}  // namespace vid2act::nn
