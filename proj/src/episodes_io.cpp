#include "vid2act/episodes_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vid2act/errors.hpp"

namespace fs = std::filesystem;

namespace vid2act {

static_assert(std::endian::native == std::endian::little, "episode payloads are stored little-endian");

namespace {

constexpr int kFormatVersion = 1;

std::string make_uuid(Rng* rng) {
  std::random_device rd;
  std::uint64_t hi = 0, lo = 0;
  if (rng) {
    hi = (*rng)();
    lo = (*rng)();
  } else {
    hi = (static_cast<std::uint64_t>(rd()) << 32) | rd();
    lo = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  }
  hi = (hi & 0xFFFFFFFFFFFF0FFFull) | 0x0000000000004000ull;  // version 4
  lo = (lo & 0x3FFFFFFFFFFFFFFFull) | 0x8000000000000000ull;  // RFC 4122 variant
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(8) << (hi >> 32) << '-' << std::setw(4) << ((hi >> 16) & 0xFFFF)
     << '-' << std::setw(4) << (hi & 0xFFFF) << '-' << std::setw(4) << (lo >> 48) << '-' << std::setw(12)
     << (lo & 0xFFFFFFFFFFFFull);
  return os.str();
}

void write_file(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!os) throw IoError("write failed: " + path.string());
}

std::string read_file(const fs::path& path, const fs::path& episode_dir) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("episode " + episode_dir.string() + ": missing " + path.filename().string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

ActionVec pad_action(std::span<const float> raw, int a_max) {
  if (static_cast<int>(raw.size()) > a_max) {
    throw ConfigError("action has " + std::to_string(raw.size()) + " dims but A_max is " + std::to_string(a_max));
  }
  ActionVec a;
  a.values.assign(static_cast<std::size_t>(a_max), 0.0f);
  a.native_dim = static_cast<int>(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i]) || raw[i] < -1.0f || raw[i] > 1.0f) {
      throw ValidationError("action entry " + std::to_string(i) + " = " + std::to_string(raw[i]) + " outside [-1, 1]");
    }
    a.values[i] = raw[i];
  }
  return a;
}

ActionVec zero_action(int a_max, int native_dim) {
  ActionVec a;
  a.values.assign(static_cast<std::size_t>(a_max), 0.0f);
  a.native_dim = native_dim;
  return a;
}

void validate_frame(const Frame& f) {
  if (f.height <= 0 || f.width <= 0 || f.channels <= 0) throw ValidationError("frame dimensions must be positive");
  if (f.pixels.size() != static_cast<std::size_t>(f.height) * f.width * f.channels) {
    throw ValidationError("frame pixel buffer does not match its dimensions");
  }
}

void validate_action(const ActionVec& a) {
  if (a.native_dim < 0 || a.native_dim > a.padded_dim()) throw ValidationError("action native_dim out of range");
  for (int i = 0; i < a.padded_dim(); ++i) {
    const float v = a.values[static_cast<std::size_t>(i)];
    if (!std::isfinite(v) || v < -1.0f || v > 1.0f) throw ValidationError("action entry outside [-1, 1]");
    if (i >= a.native_dim && v != 0.0f) throw ValidationError("action padding entries must be exactly zero");
  }
}

void validate_episode(const Episode& ep) {
  if (ep.domain_id.empty()) throw ValidationError("episode has empty domain_id");
  const std::size_t t = ep.frames.size();
  if (t < 2) throw ValidationError("episode must have at least 2 steps");
  if (ep.actions.size() != t) throw ValidationError("episode frames/actions length mismatch");
  if (ep.rewards && ep.rewards->size() != t) throw ValidationError("episode rewards length mismatch");
  const Frame& f0 = ep.frames.front();
  for (const Frame& f : ep.frames) {
    validate_frame(f);
    if (f.height != f0.height || f.width != f0.width || f.channels != f0.channels) {
      throw ValidationError("episode frames have inconsistent shapes");
    }
  }
  const ActionVec& a0 = ep.actions.front();
  for (const ActionVec& a : ep.actions) {
    validate_action(a);
    if (a.padded_dim() != a0.padded_dim() || a.native_dim != a0.native_dim) {
      throw ValidationError("episode actions have inconsistent dims");
    }
  }
  if (ep.rewards) {
    for (float r : *ep.rewards) {
      if (!std::isfinite(r)) throw ValidationError("episode reward is not finite");
    }
  }
}

fs::path save_episode(const Episode& ep, const fs::path& root, Rng* rng) {
  validate_episode(ep);
  const fs::path dir = root / ep.domain_id / make_uuid(rng);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const Frame& f0 = ep.frames.front();
  const int a_max = ep.actions.front().padded_dim();
  nlohmann::json meta = {
      {"domain_id", ep.domain_id},
      {"length", ep.length()},
      {"height", f0.height},
      {"width", f0.width},
      {"channels", f0.channels},
      {"action_dim_native", ep.actions.front().native_dim},
      {"action_dim_padded", a_max},
      {"has_rewards", ep.has_rewards()},
      {"format_version", kFormatVersion},
  };
  const std::string meta_text = meta.dump(2) + "\n";
  write_file(dir / "meta.json", meta_text.data(), meta_text.size());

  std::vector<std::uint8_t> obs;
  obs.reserve(ep.length() * f0.size());
  for (const Frame& f : ep.frames) obs.insert(obs.end(), f.pixels.begin(), f.pixels.end());
  write_file(dir / "obs.bin", obs.data(), obs.size());

  std::vector<float> acts;
  acts.reserve(ep.length() * static_cast<std::size_t>(a_max));
  for (const ActionVec& a : ep.actions) acts.insert(acts.end(), a.values.begin(), a.values.end());
  write_file(dir / "actions.bin", acts.data(), acts.size() * sizeof(float));

  if (ep.rewards) write_file(dir / "rewards.bin", ep.rewards->data(), ep.rewards->size() * sizeof(float));
  return dir;
}

Episode load_episode(const fs::path& dir) {
  const std::string name = dir.string();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "meta.json", dir));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("episode " + name + ": corrupt meta.json (" + e.what() + ")");
  }

  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!meta.contains(key)) throw ValidationError("episode " + name + ": meta.json missing '" + key + "'");
    return meta.at(key);
  };
  Episode ep;
  std::size_t t = 0;
  int h = 0, w = 0, c = 0, native = 0, padded = 0;
  bool has_rewards = false;
  try {
    if (field("format_version").get<int>() != kFormatVersion) {
      throw ValidationError("episode " + name + ": unsupported format_version");
    }
    ep.domain_id = field("domain_id").get<std::string>();
    t = field("length").get<std::size_t>();
    h = field("height").get<int>();
    w = field("width").get<int>();
    c = field("channels").get<int>();
    native = field("action_dim_native").get<int>();
    padded = field("action_dim_padded").get<int>();
    has_rewards = field("has_rewards").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("episode " + name + ": bad meta.json field (" + e.what() + ")");
  }
  if (h <= 0 || w <= 0 || c <= 0 || padded <= 0 || native < 0 || native > padded) {
    throw ValidationError("episode " + name + ": meta.json dimensions out of range");
  }

  const std::size_t frame_bytes = static_cast<std::size_t>(h) * w * c;
  const std::string obs = read_file(dir / "obs.bin", dir);
  if (obs.size() != t * frame_bytes) {
    throw ValidationError("episode " + name + ": obs.bin has " + std::to_string(obs.size()) + " bytes, meta implies " +
                          std::to_string(t * frame_bytes));
  }
  const std::string acts = read_file(dir / "actions.bin", dir);
  if (acts.size() != t * static_cast<std::size_t>(padded) * sizeof(float)) {
    throw ValidationError("episode " + name + ": actions.bin length does not match meta.json");
  }

  ep.frames.reserve(t);
  ep.actions.reserve(t);
  for (std::size_t i = 0; i < t; ++i) {
    Frame f(h, w, c);
    std::memcpy(f.pixels.data(), obs.data() + i * frame_bytes, frame_bytes);
    ep.frames.push_back(std::move(f));
    ActionVec a;
    a.native_dim = native;
    a.values.resize(static_cast<std::size_t>(padded));
    std::memcpy(a.values.data(), acts.data() + i * padded * sizeof(float), padded * sizeof(float));
    ep.actions.push_back(std::move(a));
  }
  if (has_rewards) {
    const std::string rew = read_file(dir / "rewards.bin", dir);
    if (rew.size() != t * sizeof(float)) {
      throw ValidationError("episode " + name + ": rewards.bin length does not match meta.json");
    }
    std::vector<float> r(t);
    std::memcpy(r.data(), rew.data(), rew.size());
    ep.rewards = std::move(r);
  }
  try {
    validate_episode(ep);
  } catch (const ValidationError& e) {
    throw ValidationError("episode " + name + ": " + e.what());
  }
  return ep;
}

std::vector<Episode> load_dataset(const fs::path& root, const std::string& domain_id) {
  const fs::path dir = root / domain_id;
  if (!fs::is_directory(dir)) throw ValidationError("dataset directory not found: " + dir.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  if (dirs.empty()) throw ValidationError("dataset " + dir.string() + " contains no episodes");
  std::sort(dirs.begin(), dirs.end());
  std::vector<Episode> out;
  out.reserve(dirs.size());
  for (const fs::path& d : dirs) {
    Episode ep = load_episode(d);
    if (ep.domain_id != domain_id) {
      throw ValidationError("episode " + d.string() + ": domain_id '" + ep.domain_id + "' does not match '" + domain_id + "'");
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<WindowRef> sample_windows(std::span<const std::size_t> lengths, int batch, int length, Rng& rng) {
  if (batch <= 0 || length <= 0) throw ConfigError("sample_sequences: batch and length must be positive");
  std::vector<std::uint64_t> cumulative(lengths.size());
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] >= static_cast<std::size_t>(length)) total += lengths[i] - static_cast<std::size_t>(length) + 1;
    cumulative[i] = total;
  }
  if (total == 0) {
    throw ValidationError("no episode has at least " + std::to_string(length) +
                          " steps; collect more data before sampling");
  }
  std::vector<WindowRef> refs;
  refs.reserve(static_cast<std::size_t>(batch));
  std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
  for (int b = 0; b < batch; ++b) {
    const std::uint64_t u = pick(rng);
    const std::size_t ei = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    const std::uint64_t before = ei == 0 ? 0 : cumulative[ei - 1];
    refs.push_back({ei, static_cast<std::size_t>(u - before)});
  }
  return refs;
}

namespace {

template <class GetEpisode>
SequenceBatch sample_impl(std::size_t count, GetEpisode get, int batch, int length, Rng& rng, std::vector<WindowRef>* refs) {
  std::vector<std::size_t> lengths(count);
  for (std::size_t i = 0; i < count; ++i) lengths[i] = get(i).length();
  const std::vector<WindowRef> windows = sample_windows(lengths, batch, length, rng);

  SequenceBatch out;
  out.batch = batch;
  out.length = length;
  out.observations.reserve(static_cast<std::size_t>(batch) * length);
  out.actions.reserve(static_cast<std::size_t>(batch) * length);
  bool all_rewards = true;
  std::vector<float> rewards;
  for (const WindowRef& w : windows) {
    const Episode& ep = get(w.episode);
    out.domain_ids.push_back(ep.domain_id);
    for (int t = 0; t < length; ++t) {
      out.observations.push_back(ep.frames[w.start + t]);
      out.actions.push_back(ep.actions[w.start + t]);
      if (ep.rewards) {
        rewards.push_back((*ep.rewards)[w.start + t]);
      } else {
        all_rewards = false;
      }
    }
  }
  if (all_rewards) out.rewards = std::move(rewards);
  if (refs) *refs = windows;
  return out;
}

}  // namespace

SequenceBatch sample_sequences(std::span<const std::shared_ptr<const Episode>> episodes, int batch, int length,
                               Rng& rng, std::vector<WindowRef>* refs) {
  return sample_impl(episodes.size(), [&](std::size_t i) -> const Episode& { return *episodes[i]; }, batch, length, rng, refs);
}

SequenceBatch sample_sequences(std::span<const Episode> episodes, int batch, int length, Rng& rng,
                               std::vector<WindowRef>* refs) {
  return sample_impl(episodes.size(), [&](std::size_t i) -> const Episode& { return episodes[i]; }, batch, length, rng, refs);
}

void ReplayBuffer::append(Episode episode) {
  if (!episode.has_rewards()) throw ValidationError("online episodes must carry rewards");
  validate_episode(episode);
  if (episode.length() > capacity_) throw ConfigError("episode longer than replay buffer capacity");
  auto ptr = std::make_shared<const Episode>(std::move(episode));
  std::lock_guard lock(mu_);
  steps_ += ptr->length();
  episodes_.push_back(std::move(ptr));
  ++appended_;
  while (steps_ > capacity_) {
    steps_ -= episodes_.front()->length();
    episodes_.pop_front();
  }
}

std::vector<std::shared_ptr<const Episode>> ReplayBuffer::snapshot() const {
  std::lock_guard lock(mu_);
  return {episodes_.begin(), episodes_.end()};
}

SequenceBatch ReplayBuffer::sample(int batch, int length, Rng& rng, std::vector<WindowRef>* refs) const {
  const auto snap = snapshot();
  return sample_sequences(std::span<const std::shared_ptr<const Episode>>(snap), batch, length, rng, refs);
}

std::size_t ReplayBuffer::steps() const {
  std::lock_guard lock(mu_);
  return steps_;
}

std::size_t ReplayBuffer::episodes() const {
  std::lock_guard lock(mu_);
  return episodes_.size();
}

std::size_t ReplayBuffer::total_appended() const {
  std::lock_guard lock(mu_);
  return appended_;
}

}  // namespace vid2act
