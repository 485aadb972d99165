#include "vid2act/run_config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "vid2act/envs.hpp"
#include "vid2act/errors.hpp"

namespace vid2act {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Converts `text` to the JSON type of `like`.
nlohmann::json typed_value(const nlohmann::json& like, const std::string& text, const std::string& key) {
  const std::string v = trim(text);
  auto fail = [&](const std::string& what) {
    return ConfigError("config key " + key + ": expected " + what + ", got '" + v + "'");
  };
  try {
    std::size_t used = 0;
    switch (like.type()) {
      case nlohmann::json::value_t::boolean:
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw fail("a boolean");
      case nlohmann::json::value_t::number_unsigned: {
        if (!v.empty() && v[0] == '-') throw fail("a non-negative integer");
        const auto x = std::stoull(v, &used);
        if (used != v.size()) throw fail("a non-negative integer");
        return x;
      }
      case nlohmann::json::value_t::number_integer: {
        const auto x = std::stoll(v, &used);
        if (used != v.size()) throw fail("an integer");
        return x;
      }
      case nlohmann::json::value_t::number_float: {
        const double x = std::stod(v, &used);
        if (used != v.size()) throw fail("a number");
        return x;
      }
      case nlohmann::json::value_t::array:
        return split_list(v);
      case nlohmann::json::value_t::string:
        return v;
      default:
        throw fail("a scalar");
    }
  } catch (const std::invalid_argument&) {
    throw fail("a value of the key's type");
  } catch (const std::out_of_range&) {
    throw fail("a value in range");
  }
}

nlohmann::json& slot(nlohmann::json& j, const std::string& section, const std::string& key) {
  if (!j.contains(section)) throw ConfigError("unknown config section [" + section + "]");
  nlohmann::json& s = j[section];
  if (!s.contains(key)) throw ConfigError("unknown config key " + section + "." + key);
  return s[key];
}

// Line of each `section.key` in an INI file, for diagnostics.
std::map<std::string, int> ini_key_lines(const std::filesystem::path& path) {
  std::map<std::string, int> lines;
  std::ifstream in(path);
  std::string line, section;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
    } else if (const auto eq = t.find('='); eq != std::string::npos) {
      lines.emplace(section + "." + trim(t.substr(0, eq)), n);
    }
  }
  return lines;
}

nlohmann::json adam_lr_free(const nn::AdamConfig& a) { return a.lr; }

}  // namespace

void RunConfig::validate(bool check_paths) const {
  model.validate();
  if (!model.reward_head) throw ConfigError("run config: the target world model needs its reward head");
  if (env.empty()) throw ConfigError("run config: env is required");
  find_env_spec(env);
  if (updates_per_episode < 1) throw ConfigError("run config: updates_per_episode (C) must be at least 1");
  if (warmup_episodes < 1) throw ConfigError("run config: warmup_episodes must be at least 1");
  if (batch < 1 || length < 2) throw ConfigError("run config: batch >= 1 and length >= 2 required");
  if (env_steps < 1) throw ConfigError("run config: env_steps must be positive");
  if (checkpoint_every < 1 || log_every < 1) throw ConfigError("run config: checkpoint_every and log_every must be positive");
  if (eval_episodes < 0) throw ConfigError("run config: eval_episodes must be non-negative");
  if (imagine_starts < 0) throw ConfigError("run config: imagine_starts must be non-negative");
  if (!(distill.alpha >= 0.0)) throw ConfigError("run config: distill.alpha must be non-negative");
  if (guidance && !sources.empty() && (vae.top_k < 1 || vae.top_k > static_cast<int>(sources.size()))) {
    throw ConfigError("run config: replay.top_k must lie in [1, number of sources]");
  }
  if (guidance && sources.empty()) throw ConfigError("run config: guidance needs at least one source dataset");
  const EnvSpec& spec = find_env_spec(env);
  if (spec.native_action_dim > model.action_dim) throw ConfigError("run config: model.action_dim below the env's native dim");
  if (spec.height != model.height || spec.width != model.width) {
    throw ConfigError("run config: model frame size " + std::to_string(model.height) + "x" + std::to_string(model.width) +
                      " does not match env " + env);
  }
  if (check_paths) {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (guidance && !std::filesystem::is_directory(source_dir(i))) {
        throw ConfigError("source dataset not found: " + source_dir(i).string());
      }
      if (uses_teachers() && !std::filesystem::exists(teacher_path(i))) {
        throw ConfigError("teacher checkpoint not found: " + teacher_path(i).string());
      }
    }
  }
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["run"] = {{"seed", c.seed}, {"out", c.out.string()}, {"env", c.env}, {"deterministic", c.deterministic}};
  j["data"] = {{"source_root", c.source_root.string()},
               {"teacher_root", c.teacher_root.string()},
               {"sources", c.sources}};
  j["model"] = c.model;
  j["model"].erase("reward_head");
  j["distill"] = {{"enabled", c.distill_enabled}, {"hidden", c.distill.hidden}, {"alpha", c.distill.alpha}};
  j["replay"] = c.vae;
  j["replay"]["guidance"] = c.guidance;
  j["replay"]["lr"] = c.vae_lr;
  const BehaviorConfig& b = c.behavior;
  j["behavior"] = {{"hidden", b.hidden},
                   {"layers", b.layers},
                   {"horizon", b.horizon},
                   {"gamma", b.gamma},
                   {"lambda", b.lambda},
                   {"entropy_scale", b.entropy_scale},
                   {"init_std", b.init_std},
                   {"min_std", b.min_std},
                   {"target_every", b.target_every},
                   {"actor_lr", adam_lr_free(b.actor_opt)},
                   {"critic_lr", adam_lr_free(b.critic_opt)},
                   {"starts", c.imagine_starts}};
  j["train"] = {{"env_steps", c.env_steps},
                {"updates_per_episode", c.updates_per_episode},
                {"warmup_episodes", c.warmup_episodes},
                {"batch", c.batch},
                {"length", c.length},
                {"model_lr", c.model_lr},
                {"head_lr", c.head_lr},
                {"clip_norm", c.clip_norm},
                {"checkpoint_every", c.checkpoint_every},
                {"eval_episodes", c.eval_episodes},
                {"buffer_steps", c.buffer_steps},
                {"log_every", c.log_every}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& in) {
  // Start from the defaults so partial configs fill in, and reject unknown keys.
  nlohmann::json j = to_json(RunConfig{});
  for (auto& [section, body] : in.items()) {
    if (!body.is_object()) throw ConfigError("config section " + section + " must be an object");
    for (auto& [key, value] : body.items()) {
      nlohmann::json& dst = slot(j, section, key);
      if (dst.is_number_float() && value.is_number()) {
        dst = value.get<double>();
      } else if (dst.is_number() && value.is_number_integer()) {
        dst = value;
      } else if (dst.type() == value.type() || (dst.is_number_integer() && value.is_number_unsigned()) ||
                 (dst.is_number_unsigned() && value.is_number_integer() && value.get<long long>() >= 0)) {
        dst = value;
      } else {
        throw ConfigError("config key " + section + "." + key + " has the wrong type");
      }
    }
  }
  RunConfig c;
  const auto& run = j["run"];
  c.seed = run["seed"].get<std::uint64_t>();
  c.out = run["out"].get<std::string>();
  c.env = run["env"].get<std::string>();
  c.deterministic = run["deterministic"].get<bool>();
  const auto& data = j["data"];
  c.source_root = data["source_root"].get<std::string>();
  c.teacher_root = data["teacher_root"].get<std::string>();
  c.sources = data["sources"].get<std::vector<std::string>>();
  c.model = j["model"].get<WorldModelConfig>();
  c.model.reward_head = true;
  const auto& d = j["distill"];
  c.distill_enabled = d["enabled"].get<bool>();
  c.distill.hidden = d["hidden"].get<int>();
  c.distill.alpha = d["alpha"].get<double>();
  const auto& r = j["replay"];
  c.vae = r.get<ActionVaeConfig>();
  c.guidance = r["guidance"].get<bool>();
  c.vae_lr = r["lr"].get<double>();
  const auto& b = j["behavior"];
  c.behavior.hidden = b["hidden"].get<int>();
  c.behavior.layers = b["layers"].get<int>();
  c.behavior.horizon = b["horizon"].get<int>();
  c.behavior.gamma = b["gamma"].get<double>();
  c.behavior.lambda = b["lambda"].get<double>();
  c.behavior.entropy_scale = b["entropy_scale"].get<double>();
  c.behavior.init_std = b["init_std"].get<double>();
  c.behavior.min_std = b["min_std"].get<double>();
  c.behavior.target_every = b["target_every"].get<int>();
  c.behavior.actor_opt.lr = b["actor_lr"].get<double>();
  c.behavior.critic_opt.lr = b["critic_lr"].get<double>();
  c.imagine_starts = b["starts"].get<int>();
  const auto& t = j["train"];
  c.env_steps = t["env_steps"].get<long>();
  c.updates_per_episode = t["updates_per_episode"].get<int>();
  c.warmup_episodes = t["warmup_episodes"].get<int>();
  c.batch = t["batch"].get<int>();
  c.length = t["length"].get<int>();
  c.model_lr = t["model_lr"].get<double>();
  c.head_lr = t["head_lr"].get<double>();
  c.clip_norm = t["clip_norm"].get<double>();
  c.checkpoint_every = t["checkpoint_every"].get<int>();
  c.eval_episodes = t["eval_episodes"].get<int>();
  c.buffer_steps = t["buffer_steps"].get<long>();
  c.log_every = t["log_every"].get<int>();
  c.behavior.actor_opt.clip_norm = c.clip_norm;
  c.behavior.critic_opt.clip_norm = c.clip_norm;
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const std::string path = trim(assignment.substr(0, eq));
  const auto dot = path.find('.');
  if (eq == std::string::npos || dot == std::string::npos) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string section = path.substr(0, dot), key = path.substr(dot + 1);
  nlohmann::json& dst = slot(j, section, key);
  dst = typed_value(dst, assignment.substr(eq + 1), path);
}

RunConfig default_run_config(const std::vector<std::string>& overrides) {
  nlohmann::json j = to_json(RunConfig{});
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j = to_json(RunConfig{});
  if (path.extension() == ".json") {
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    j = to_json(run_config_from_json(file));
  } else {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    const auto lines = ini_key_lines(path);
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty()) {
        throw ConfigError(path.string() + ":" + std::to_string(lines.count("." + section) ? lines.at("." + section) : 0) +
                          ": key '" + section + "' outside any [section]");
      }
      for (const auto& [key, value] : body) {
        const std::string name = section + "." + key;
        try {
          nlohmann::json& dst = slot(j, section, key);
          dst = typed_value(dst, value.data(), name);
        } catch (const ConfigError& e) {
          const int n = lines.count(name) ? lines.at(name) : 0;
          throw ConfigError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
      }
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

}  // namespace vid2act
