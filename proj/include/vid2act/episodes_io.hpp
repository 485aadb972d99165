#pragma once

// Episode storage: the on-disk dataset format, the online replay buffer and
// fixed-length window sampling.
//
// Time alignment used throughout the project: frames[t] is the observation at
// step t, actions[t] is the action that was applied *before* frames[t] was
// observed (actions[0] is all zeros), and rewards[t] is the reward of the
// state shown in frames[t].

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vid2act/seeding.hpp"

namespace vid2act {

struct Frame {
  int height = 64;
  int width = 64;
  int channels = 3;
  std::vector<std::uint8_t> pixels;  // H x W x C, row-major

  Frame() = default;
  Frame(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, 0) {}

  std::size_t size() const { return pixels.size(); }
  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  bool operator==(const Frame&) const = default;
};

struct ActionVec {
  std::vector<float> values;  // length A_max
  int native_dim = 0;

  int padded_dim() const { return static_cast<int>(values.size()); }
  bool operator==(const ActionVec&) const = default;
};

struct Episode {
  std::string domain_id;
  std::vector<Frame> frames;
  std::vector<ActionVec> actions;
  std::optional<std::vector<float>> rewards;

  std::size_t length() const { return frames.size(); }
  bool has_rewards() const { return rewards.has_value(); }
};

/// Zero-pads a native action to `a_max` entries.
ActionVec pad_action(std::span<const float> raw, int a_max);
ActionVec zero_action(int a_max, int native_dim);

void validate_frame(const Frame& f);
void validate_action(const ActionVec& a);
/// Throws ValidationError describing the first broken invariant.
void validate_episode(const Episode& ep);

/// Writes `<root>/<domain_id>/<uuid>/` and returns that directory. The uuid is
/// drawn from `rng` when given, from std::random_device otherwise.
std::filesystem::path save_episode(const Episode& episode, const std::filesystem::path& root, Rng* rng = nullptr);
Episode load_episode(const std::filesystem::path& dir);
/// All episodes under `<root>/<domain_id>/`, sorted by directory name.
std::vector<Episode> load_dataset(const std::filesystem::path& root, const std::string& domain_id);

struct SequenceBatch {
  int batch = 0;
  int length = 0;
  // Row-major over (b, t): index b * length + t.
  std::vector<Frame> observations;
  std::vector<ActionVec> actions;
  std::optional<std::vector<float>> rewards;
  std::vector<std::string> domain_ids;  // one per sequence

  const Frame& obs(int b, int t) const { return observations[static_cast<std::size_t>(b) * length + t]; }
  const ActionVec& action(int b, int t) const { return actions[static_cast<std::size_t>(b) * length + t]; }
  float reward(int b, int t) const { return (*rewards)[static_cast<std::size_t>(b) * length + t]; }
};

/// Where a sampled window came from; used by tests and diagnostics.
struct WindowRef {
  std::size_t episode = 0;
  std::size_t start = 0;
};

/// Window choice only: `lengths[i]` is the length of episode i. Consumes the
/// generator exactly as sample_sequences does.
std::vector<WindowRef> sample_windows(std::span<const std::size_t> lengths, int batch, int length, Rng& rng);

/// Samples `batch` windows of `length` steps. Every eligible (episode, start)
/// pair is equally likely, so episodes are weighted by their number of start
/// positions. Deterministic given the generator state.
SequenceBatch sample_sequences(std::span<const std::shared_ptr<const Episode>> episodes, int batch, int length,
                               Rng& rng, std::vector<WindowRef>* refs = nullptr);
SequenceBatch sample_sequences(std::span<const Episode> episodes, int batch, int length, Rng& rng,
                               std::vector<WindowRef>* refs = nullptr);

/// Online experience: bounded by total stored steps, evicting oldest episodes
/// first. Safe for one appending thread and one sampling thread; each sample
/// call sees a consistent snapshot.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity_steps = 1'000'000) : capacity_(capacity_steps) {}

  void append(Episode episode);
  SequenceBatch sample(int batch, int length, Rng& rng, std::vector<WindowRef>* refs = nullptr) const;
  std::vector<std::shared_ptr<const Episode>> snapshot() const;

  std::size_t capacity() const { return capacity_; }
  std::size_t steps() const;
  std::size_t episodes() const;
  std::size_t total_appended() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::deque<std::shared_ptr<const Episode>> episodes_;
  std::size_t steps_ = 0;
  std::size_t appended_ = 0;
};

}  // namespace vid2act
