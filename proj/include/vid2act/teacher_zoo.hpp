#pragma once

// Source-domain world models: offline pretraining on reward-free videos and
// frozen inference during transfer.

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vid2act/world_model.hpp"

namespace vid2act {

struct PretrainOptions {
  int steps = 5000;
  int batch = 50;
  int length = 50;
  nn::AdamConfig adam;
  int log_every = 10;
};

struct PretrainRecord {
  int step = 0;
  double image = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::vector<PretrainRecord> curve;
};

/// Optimizes image + KL on one source dataset and writes a checkpoint to
/// `out` (plus the loss curve as `<out>.loss.csv`). A non-finite loss aborts
/// with NumericError naming the last finite step.
PretrainResult pretrain_teacher(const std::vector<Episode>& dataset, const WorldModelConfig& cfg,
                                const PretrainOptions& opts, Rng& rng, const std::filesystem::path& out);

class TeacherModel {
 public:
  TeacherModel(std::unique_ptr<WorldModel> model, std::string domain_id);

  const std::string& domain_id() const { return domain_id_; }
  const WorldModel& model() const { return *model_; }
  const WorldModelConfig& config() const { return model_->config(); }
  std::uint64_t param_hash() const { return model_->params().hash(); }
  /// Only for audits: the tensors are locked, so optimizers refuse them.
  nn::ParameterSet& params() { return model_->params(); }

 private:
  std::unique_ptr<WorldModel> model_;
  std::string domain_id_;
};

/// Loads a checkpoint with all parameters locked against updates. When
/// `student` is given its D_h and D_z must match the teacher's.
std::unique_ptr<TeacherModel> load_frozen(const std::filesystem::path& checkpoint,
                                          const WorldModelConfig* student = nullptr);

/// The teacher's dynamics applied to a student state. Gradients reach the
/// student state but never the teacher's parameters.
LatentState teacher_prior_step(const TeacherModel& teacher, const LatentState& student_state, const Var& action,
                               Rng* rng);

void check_compatible(const WorldModelConfig& teacher, const WorldModelConfig& student, const std::string& teacher_name);

}  // namespace vid2act
