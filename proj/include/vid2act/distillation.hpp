#pragma once

// Domain-selective transfer from frozen teachers into the target world model:
// a shared feature network maps teacher predictions into the student's state
// space, a scoring layer turns (teacher state, student state) pairs into
// per-step softmax weights over teachers, and the weighted squared distance
// between student states and transferred features is added to the student's
// world-model loss.
//
// Rows of every (L*B) x ... tensor here are time-major: row t * B + b.

#include <memory>
#include <vector>

#include "vid2act/teacher_zoo.hpp"
#include "vid2act/world_model.hpp"

namespace vid2act {

struct DistillConfig {
  int hidden = 256;
  double alpha = 1.0;
};

class DistillationHead {
 public:
  DistillationHead(int state_dim, const DistillConfig& cfg, Rng& init_rng);
  DistillationHead(const DistillationHead&) = delete;
  DistillationHead& operator=(const DistillationHead&) = delete;

  int state_dim() const { return state_dim_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  /// f_distill applied row-wise: R x D -> R x D.
  Var transfer(const Var& teacher_states) const { return distill_(teacher_states); }
  /// f_weight on concat(teacher state, student state): R x 1.
  Var score(const Var& teacher_states, const Var& student_states) const;

 private:
  int state_dim_;
  nn::ParameterSet params_;
  nn::Mlp distill_;
  nn::Linear weight_;
};

struct DomainWeights {
  Var per_step;                // R x N, each row a probability vector
  std::vector<double> w;       // mean of per_step over all rows
  Matrix per_step_values() const { return per_step.value(); }
};

std::vector<Var> transfer_features(const DistillationHead& head, const std::vector<Var>& teacher_states);
DomainWeights domain_weights(const DistillationHead& head, const std::vector<Var>& teacher_states,
                             const Var& student_states);
/// R x N matrix of ||e - u_i||^2.
Var squared_distances(const Var& student_states, const std::vector<Var>& features);
/// Sum over teachers and time, mean over the batch.
Var weighted_distance(const Var& weights, const Var& sq_distances, int batch);
Var distillation_loss(const Var& student_states, const std::vector<Var>& features, const DomainWeights& weights,
                      int batch);

struct StudentLosses {
  Var image;
  Var reward;
  Var kl;
  Var distill;  // zero scalar when there are no teachers
  Var total;    // image + reward + kl + alpha * distill
  DomainWeights weights;
  std::vector<StatePair> states;
};

/// Teachers run deterministically from the student posterior at t-1 (the zero
/// state at t = 0) under actions[t]. With alpha == 0 the distillation term is
/// computed from detached student states, so backpropagating `distill` trains
/// only the head and `total` is exactly the plain world-model loss.
StudentLosses student_objective(const WorldModel& student, const std::vector<const TeacherModel*>& teachers,
                                const DistillationHead* head, const PreparedSequence& seq, double alpha, Rng* rng);

}  // namespace vid2act
