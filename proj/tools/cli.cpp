#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "vid2act/envs.hpp"
#include "vid2act/errors.hpp"
#include "vid2act/plot.hpp"
#include "vid2act/run_config.hpp"
#include "vid2act/teacher_zoo.hpp"
#include "vid2act/trainer.hpp"

namespace vid2act {

namespace {

namespace fs = std::filesystem;

// Relative output paths go under $VID2ACT_OUT when it is set.
fs::path output_path(const fs::path& p) {
  const char* root = std::getenv("VID2ACT_OUT");
  if (root == nullptr || *root == '\0' || p.is_absolute()) return p;
  return fs::path(root) / p;
}

void refuse_overwrite(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) throw IoError(p.string() + " already exists; pass --force to overwrite");
}

bool dir_has_entries(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

struct GenDataArgs {
  std::vector<std::string> envs;
  std::string suite;
  std::string policy = "mixed";
  int episodes = 50;
  std::string out = "data";
  std::uint64_t seed = 0;
  int a_max = 6;
  bool force = false;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  std::vector<std::string> envs = a.envs;
  if (!a.suite.empty()) {
    const auto s = suite_sources(a.suite);
    envs.insert(envs.end(), s.begin(), s.end());
  }
  if (envs.empty()) throw ConfigError("gen-data: give --env or --suite");
  if (a.episodes <= 0) throw ConfigError("gen-data: --episodes must be positive");
  const fs::path root = output_path(a.out);
  for (const auto& id : envs) {
    find_env_spec(id);
    const fs::path dir = root / id;
    if (dir_has_entries(dir)) {
      if (!a.force) throw IoError(dir.string() + " already holds episodes; pass --force to overwrite");
      fs::remove_all(dir);
    }
    const std::uint64_t seed = a.seed ^ splitmix64(fnv1a(id));
    if (a.policy == "mixed") {
      const int medium = a.episodes / 2;
      if (medium > 0) generate_offline_dataset(id, ScriptedPolicy::Medium, medium, root, seed, a.a_max);
      generate_offline_dataset(id, ScriptedPolicy::Expert, a.episodes - medium, root, seed + 1, a.a_max);
    } else {
      generate_offline_dataset(id, parse_scripted_policy(a.policy), a.episodes, root, seed, a.a_max);
    }
    out << "wrote " << a.episodes << " episodes to " << dir.string() << '\n';
  }
  return 0;
}

struct PretrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::string> envs;
  std::string dataset;
  std::string out;
  int steps = 5000;
  int batch = 50;
  int length = 50;
  double lr = 6e-4;
  std::uint64_t seed = 0;
  bool force = false;
};

int pretrain(const PretrainArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? default_run_config(a.sets) : load_run_config(a.config, a.sets);
  cfg.source_root = output_path(a.dataset.empty() ? cfg.source_root : fs::path(a.dataset));
  const std::vector<std::string> envs = a.envs.empty() ? cfg.sources : a.envs;
  if (envs.empty()) throw ConfigError("pretrain: no source domains (set data.sources or pass --domain)");
  if (!a.out.empty() && envs.size() != 1) throw ConfigError("pretrain: --out needs exactly one domain");
  const fs::path teacher_root = output_path(cfg.teacher_root);
  PretrainOptions opts;
  opts.steps = a.steps;
  opts.batch = a.batch;
  opts.length = a.length;
  opts.adam.lr = a.lr;
  opts.adam.clip_norm = cfg.clip_norm;
  for (const auto& id : envs) {
    const fs::path dst = a.out.empty() ? teacher_root / (id + ".bin") : output_path(a.out);
    refuse_overwrite(dst, a.force);
    const auto data = load_dataset(cfg.source_root, id);
    if (data.empty()) throw ConfigError("pretrain: no episodes under " + (cfg.source_root / id).string());
    const Seeder seeder(a.seed ^ splitmix64(fnv1a(id)));
    Rng rng = seeder.stream("pretrain");
    const PretrainResult r = pretrain_teacher(data, cfg.model, opts, rng, dst);
    out << "teacher " << id << ": final image loss " << r.curve.back().image << " -> " << r.checkpoint.string() << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool quiet = false;
};

int train(const TrainArgs& a, std::ostream& out) {
  std::vector<std::string> sets = a.sets;
  if (a.seed) sets.push_back("run.seed=" + std::to_string(*a.seed));
  if (!a.out.empty()) sets.push_back("run.out=" + a.out);
  RunConfig cfg = load_run_config(a.config, sets);
  cfg.out = output_path(cfg.out);
  cfg.source_root = output_path(cfg.source_root);
  cfg.teacher_root = output_path(cfg.teacher_root);
  TrainOptions opts;
  opts.force = a.force;
  if (!a.quiet) opts.progress = [&out](const std::string& line) { out << line << std::endl; };
  Trainer trainer(cfg, opts);
  const TrainSummary s = trainer.run();
  out << "finished " << s.updates << " updates, " << s.env_steps << " env steps; checkpoint "
      << s.final_checkpoint.string() << '\n';
  if (cfg.eval_episodes > 0) out << "eval return " << s.eval.mean << " +/- " << s.eval.std << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string env;
  int episodes = 10;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

int eval(const EvalArgs& a, std::ostream& out) {
  if (a.episodes <= 0) throw ConfigError("eval: --episodes must be positive");
  std::string env = a.env;
  if (env.empty()) {
    nlohmann::json meta;
    Agent::load(a.checkpoint, &meta);
    env = meta.value("env", std::string());
    if (env.empty()) throw ConfigError("eval: checkpoint does not name its env; pass --env");
  }
  const EvalResult r = evaluate(a.checkpoint, env, a.episodes, a.seed);
  const nlohmann::json j = to_json(r);
  if (!a.out.empty()) {
    const fs::path p = output_path(a.out);
    refuse_overwrite(p, a.force);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    f << j.dump(2) << '\n';
    if (!f) throw IoError("cannot write " + p.string());
  }
  out << j.dump(2) << '\n';
  return 0;
}

struct PlotArgs {
  std::vector<std::string> metrics;
  std::string what;
  std::string out;
  bool force = false;
};

int plot(const PlotArgs& a, std::ostream& out) {
  const PlotKind kind = parse_plot_kind(a.what);
  const fs::path dst = output_path(a.out.empty() ? "plots/" + a.what + ".svg" : a.out);
  refuse_overwrite(dst, a.force);
  std::vector<fs::path> csvs(a.metrics.begin(), a.metrics.end());
  plot_metrics(csvs, kind, dst);
  out << "wrote " << dst.string() << '\n';
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video-to-action transfer: world-model distillation and generative action replay on pixel toy tasks"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "Roll out scripted policies and write reward-free source datasets");
  gen->add_option("--env", g.envs, "Env id to generate (repeatable)");
  gen->add_option("--suite", g.suite, "Generate every source env of a suite (pm or mw)");
  gen->add_option("--policy", g.policy, "random, medium, expert, or mixed (half medium, half expert)")
      ->check(CLI::IsMember({"random", "medium", "expert", "mixed"}))
      ->capture_default_str();
  gen->add_option("--episodes", g.episodes, "Episodes per env")->capture_default_str();
  gen->add_option("--out", g.out, "Dataset root (under $VID2ACT_OUT when relative)")->capture_default_str();
  gen->add_option("--seed", g.seed, "Root seed")->capture_default_str();
  gen->add_option("--a-max", g.a_max, "Padded action width A_max")->capture_default_str();
  gen->add_flag("--force", g.force, "Replace existing datasets");

  PretrainArgs p;
  auto* pre = app.add_subcommand("pretrain", "Pretrain one frozen teacher world model per source dataset");
  pre->add_option("--config", p.config, "Run config whose [model] and [data] sections are used")->check(CLI::ExistingFile);
  pre->add_option("--set", p.sets, "Config override section.key=value (repeatable)");
  pre->add_option("--domain,--env", p.envs, "Source domain id (repeatable; default: data.sources)");
  pre->add_option("--dataset", p.dataset, "Dataset root holding <domain>/ episode directories (default: data.source_root)");
  pre->add_option("--out", p.out, "Checkpoint path for a single domain (default: <teacher_root>/<domain>.bin)");
  pre->add_option("--steps", p.steps, "Gradient steps per teacher")->capture_default_str();
  pre->add_option("--batch", p.batch, "Sequences per batch")->capture_default_str();
  pre->add_option("--length", p.length, "Sequence length")->capture_default_str();
  pre->add_option("--lr", p.lr, "Adam learning rate")->capture_default_str();
  pre->add_option("--seed", p.seed, "Root seed")->capture_default_str();
  pre->add_flag("--force", p.force, "Replace existing teacher checkpoints");

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Train the target agent (world model, distillation, action replay, behavior)");
  tr->add_option("--config", t.config, "Run config (INI sections or a config.resolved.json)")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--set", t.sets, "Config override section.key=value (repeatable)");
  tr->add_option("--seed", t.seed, "Root seed (overrides run.seed)");
  tr->add_option("--out", t.out, "Output directory (overrides run.out)");
  tr->add_flag("--force", t.force, "Overwrite an existing run in the output directory");
  tr->add_flag("--quiet", t.quiet, "No per-iteration progress lines");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with the deterministic policy");
  ev->add_option("--checkpoint", e.checkpoint, "Agent checkpoint (final.bin or checkpoints/step_*.bin)")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--env", e.env, "Env id (default: the env the checkpoint was trained on)");
  ev->add_option("--episodes", e.episodes, "Evaluation episodes")->capture_default_str();
  ev->add_option("--seed", e.seed, "Evaluation seed")->capture_default_str();
  ev->add_option("--out", e.out, "Also write the result JSON here");
  ev->add_flag("--force", e.force, "Overwrite --out");

  PlotArgs pl;
  auto* plt = app.add_subcommand("plot", "Write an SVG figure from training CSV logs");
  plt->add_option("--metrics", pl.metrics, "metrics.csv (returns; several for a mean +/- std band) or weights.csv")
      ->required();
  plt->add_option("--what", pl.what, "returns, weights or losses")
      ->required()
      ->check(CLI::IsMember({"returns", "weights", "losses"}));
  plt->add_option("--out", pl.out, "Output SVG path (default plots/<what>.svg)");
  plt->add_flag("--force", pl.force, "Overwrite --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }
  try {
    if (gen->parsed()) return gen_data(g, out);
    if (pre->parsed()) return pretrain(p, out);
    if (tr->parsed()) return train(t, out);
    if (ev->parsed()) return eval(e, out);
    if (plt->parsed()) return plot(pl, out);
  } catch (const ConfigError& ex) {
    err << "configuration error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace vid2act
