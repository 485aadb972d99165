#include "vid2act/teacher_zoo.hpp"

#include <cmath>
#include <fstream>

#include "vid2act/archive.hpp"
#include "vid2act/errors.hpp"

namespace vid2act {

PretrainResult pretrain_teacher(const std::vector<Episode>& dataset, const WorldModelConfig& cfg_in,
                                const PretrainOptions& opts, Rng& rng, const std::filesystem::path& out) {
  if (dataset.empty()) throw ValidationError("pretrain_teacher: empty dataset");
  if (opts.steps <= 0) throw ConfigError("pretrain_teacher: steps must be positive");
  WorldModelConfig cfg = cfg_in;
  cfg.reward_head = false;  // sources carry no rewards
  const std::string domain = dataset.front().domain_id;

  std::vector<PreparedEpisode> prepared;
  std::vector<std::size_t> lengths;
  for (const Episode& ep : dataset) {
    if (ep.domain_id != domain) throw ValidationError("pretrain_teacher: dataset mixes domains");
    prepared.push_back(prepare_episode(ep, cfg));
    lengths.push_back(ep.length());
  }
  std::vector<const PreparedEpisode*> ptrs;
  for (const auto& p : prepared) ptrs.push_back(&p);

  auto model = std::make_unique<WorldModel>(cfg, rng);
  nn::Adam opt(model->params(), opts.adam);
  PretrainResult result;
  int last_finite = 0;
  for (int step = 1; step <= opts.steps; ++step) {
    const auto refs = sample_windows(lengths, opts.batch, opts.length, rng);
    const PreparedSequence seq = gather_sequence(ptrs, refs, opts.length);
    auto diverged = [&](const std::string& what) {
      return NumericError("pretrain_teacher(" + domain + "): " + what + " at step " + std::to_string(step) +
                          "; last finite step " + std::to_string(last_finite));
    };
    try {
      WorldModelLosses L = model->sequence_loss(seq, false, &rng);
      if (!std::isfinite(L.total.item())) throw diverged("non-finite loss");
      ad::backward(L.total);
      opt.step();
      if (step % opts.log_every == 0 || step == 1 || step == opts.steps) {
        result.curve.push_back({step, L.image.item(), L.kl.item(), L.total.item()});
      }
    } catch (const NumericError& e) {
      if (std::string(e.what()).find("last finite step") != std::string::npos) throw;
      throw diverged(e.what());
    }
    last_finite = step;
  }

  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  Archive ar;
  model->save(ar);
  ar.put_json("teacher.json", {{"domain_id", domain}, {"steps", opts.steps}});
  ar.write(out);
  std::ofstream csv(out.string() + ".loss.csv");
  csv << "step,image,kl,total\n";
  for (const auto& r : result.curve) csv << r.step << ',' << r.image << ',' << r.kl << ',' << r.total << '\n';
  if (!csv) throw IoError("cannot write loss curve next to " + out.string());
  result.checkpoint = out;
  return result;
}

TeacherModel::TeacherModel(std::unique_ptr<WorldModel> model, std::string domain_id)
    : model_(std::move(model)), domain_id_(std::move(domain_id)) {
  if (model_->has_reward_head()) throw ConfigError("teacher " + domain_id_ + " must not have a reward head");
  model_->params().set_trainable(false);
  model_->params().lock();
}

void check_compatible(const WorldModelConfig& teacher, const WorldModelConfig& student, const std::string& teacher_name) {
  if (teacher.deter_dim != student.deter_dim || teacher.stoch_dim != student.stoch_dim ||
      teacher.action_dim != student.action_dim) {
    throw ConfigError("teacher " + teacher_name + " has (D_h=" + std::to_string(teacher.deter_dim) +
                      ", D_z=" + std::to_string(teacher.stoch_dim) + ", A_max=" + std::to_string(teacher.action_dim) +
                      ") but the student has (D_h=" + std::to_string(student.deter_dim) + ", D_z=" +
                      std::to_string(student.stoch_dim) + ", A_max=" + std::to_string(student.action_dim) + ")");
  }
}

std::unique_ptr<TeacherModel> load_frozen(const std::filesystem::path& checkpoint, const WorldModelConfig* student) {
  const Archive ar = Archive::read(checkpoint);
  std::string domain = checkpoint.stem().string();
  if (ar.contains("teacher.json")) domain = ar.get_json("teacher.json").value("domain_id", domain);
  auto model = WorldModel::load(ar);
  if (student) check_compatible(model->config(), *student, domain + " (" + checkpoint.string() + ")");
  return std::make_unique<TeacherModel>(std::move(model), domain);
}

LatentState teacher_prior_step(const TeacherModel& teacher, const LatentState& student_state, const Var& action,
                               Rng* rng) {
  const WorldModelConfig& c = teacher.config();
  if (student_state.deter.cols() != c.deter_dim || student_state.stoch.cols() != c.stoch_dim) {
    throw ConfigError("teacher " + teacher.domain_id() + ": student state dims do not match the teacher");
  }
  return teacher.model().imagine_step(student_state, action, rng);
}

}  // namespace vid2act
