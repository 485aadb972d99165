#include "vid2act/distillation.hpp"

#include "vid2act/errors.hpp"

namespace vid2act {

DistillationHead::DistillationHead(int state_dim, const DistillConfig& cfg, Rng& rng)
    : state_dim_(state_dim), params_("distillation") {
  if (state_dim <= 0 || cfg.hidden <= 0) throw ConfigError("distillation head: dimensions must be positive");
  distill_ = nn::Mlp(params_, "f_distill", state_dim, {cfg.hidden}, state_dim, rng);
  weight_ = nn::Linear(params_, "f_weight", 2 * state_dim, 1, rng);
}

Var DistillationHead::score(const Var& teacher_states, const Var& student_states) const {
  return weight_(ad::concat_cols({teacher_states, student_states}));
}

std::vector<Var> transfer_features(const DistillationHead& head, const std::vector<Var>& teacher_states) {
  std::vector<Var> out;
  out.reserve(teacher_states.size());
  for (const Var& s : teacher_states) {
    if (s.cols() != head.state_dim()) throw ValidationError("transfer_features: teacher state width mismatch");
    out.push_back(head.transfer(s));
  }
  return out;
}

DomainWeights domain_weights(const DistillationHead& head, const std::vector<Var>& teacher_states,
                             const Var& student_states) {
  if (teacher_states.empty()) throw ConfigError("domain_weights: at least one teacher is required");
  std::vector<Var> scores;
  scores.reserve(teacher_states.size());
  for (const Var& s : teacher_states) {
    if (s.rows() != student_states.rows()) throw ValidationError("domain_weights: row count mismatch");
    scores.push_back(head.score(s, student_states));
  }
  DomainWeights dw;
  dw.per_step = ad::softmax_rows(ad::concat_cols(scores));
  const Matrix mean = dw.per_step.value().colwise().mean();
  dw.w.assign(mean.data(), mean.data() + mean.size());
  return dw;
}

Var squared_distances(const Var& student_states, const std::vector<Var>& features) {
  std::vector<Var> cols;
  cols.reserve(features.size());
  for (const Var& u : features) cols.push_back(ad::row_sum(ad::square(student_states - u)));
  return ad::concat_cols(cols);
}

Var weighted_distance(const Var& weights, const Var& sq_distances, int batch) {
  if (batch <= 0) throw ValidationError("weighted_distance: batch must be positive");
  return ad::scale(ad::sum(weights * sq_distances), 1.0 / batch);
}

Var distillation_loss(const Var& student_states, const std::vector<Var>& features, const DomainWeights& weights,
                      int batch) {
  return weighted_distance(weights.per_step, squared_distances(student_states, features), batch);
}

StudentLosses student_objective(const WorldModel& student, const std::vector<const TeacherModel*>& teachers,
                                const DistillationHead* head, const PreparedSequence& seq, double alpha, Rng* rng) {
  if (!seq.rewards) throw ValidationError("student_objective: target batches must carry rewards");
  if (!teachers.empty() && head == nullptr) throw ConfigError("student_objective: teachers given without a distillation head");
  WorldModelLosses wm = student.sequence_loss(seq, true, rng);
  StudentLosses out;
  out.image = wm.image;
  out.reward = wm.reward;
  out.kl = wm.kl;
  out.total = wm.total;
  out.distill = ad::zeros(1, 1);

  if (!teachers.empty()) {
    const int B = seq.batch;
    // Previous posteriors e_{t-1} and current posteriors e_t, stacked over time.
    std::vector<Var> prev_deter, prev_stoch, cur, actions;
    const LatentState init = student.initial_state(B);
    for (int t = 0; t < seq.length; ++t) {
      const LatentState& prev = t == 0 ? init : wm.states[static_cast<std::size_t>(t - 1)].posterior;
      prev_deter.push_back(prev.deter);
      prev_stoch.push_back(prev.stoch);
      cur.push_back(wm.states[static_cast<std::size_t>(t)].posterior.features());
      actions.push_back(ad::constant(seq.actions[static_cast<std::size_t>(t)]));
    }
    LatentState prev_all;
    prev_all.deter = ad::concat_rows(prev_deter);
    prev_all.stoch = ad::concat_rows(prev_stoch);
    Var student_states = ad::concat_rows(cur);
    if (alpha == 0.0) {
      prev_all.deter = ad::detach(prev_all.deter);
      prev_all.stoch = ad::detach(prev_all.stoch);
      student_states = ad::detach(student_states);
    }
    const Var action_all = ad::concat_rows(actions);

    std::vector<Var> teacher_states;
    teacher_states.reserve(teachers.size());
    for (const TeacherModel* teacher : teachers) {
      teacher_states.push_back(teacher_prior_step(*teacher, prev_all, action_all, nullptr).features());
    }
    const std::vector<Var> features = transfer_features(*head, teacher_states);
    out.weights = domain_weights(*head, teacher_states, student_states);
    out.distill = distillation_loss(student_states, features, out.weights, B);
    if (alpha != 0.0) out.total = out.total + ad::scale(out.distill, alpha);
  }
  out.states = std::move(wm.states);
  return out;
}

}  // namespace vid2act
