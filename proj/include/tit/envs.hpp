#pragma once

// Desk-scale, fully seeded environments implemented in-repo: the classic
// pole-balancing cart (array observations) and a small partially observable
// catching game (binary image observations, velocity hidden in any single
// frame). Plus the fixed-capacity observation history used by the backbone.

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "tit/backbone.hpp"

namespace tit {

struct StepResult {
  std::vector<float> obs;
  float reward = 0.0f;
  bool terminated = false;
  bool truncated = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::vector<float> reset(std::uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
  virtual int obs_size() const = 0;
  virtual int n_actions() const = 0;
  virtual std::string id() const = 0;
  // Fills the observation fields of a TITConfig.
  virtual void describe_obs(TITConfig& cfg) const = 0;
};

// Classic cart-pole balancing, v1 constants: Euler-integrated dynamics,
// reward 1 per step, |angle| > 12 deg or |position| > 2.4 terminates,
// truncation at 500 steps (so the best possible return is 500).
class CartPole final : public Env {
 public:
  std::vector<float> reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  int obs_size() const override { return 4; }
  int n_actions() const override { return 2; }
  std::string id() const override { return "cartpole"; }
  void describe_obs(TITConfig& cfg) const override {
    cfg.obs_kind = ObsKind::Array;
    cfg.obs_dim = 4;
    cfg.obs_h = cfg.obs_w = cfg.obs_c = 0;
  }

  static constexpr int kHorizon = 500;

 private:
  double x_ = 0, x_dot_ = 0, theta_ = 0, theta_dot_ = 0;
  int steps_ = 0;
  bool done_ = true;
  Rng rng_{0};

  std::vector<float> observation() const;
};

// A ball falls one row per step and drifts one column per step (bouncing off
// the side walls); a three-pixel paddle on the bottom row moves left/stay/
// right. Catch: +1, miss: -1, episode is 8 balls. The frame shows only
// positions, so a single frame cannot reveal the drift direction.
class DotCatcher final : public Env {
 public:
  static constexpr int kSize = 24;
  static constexpr int kBalls = 8;
  static constexpr int kPaddleHalf = 1;

  std::vector<float> reset(std::uint64_t seed) override;
  StepResult step(int action) override;
  int obs_size() const override { return kSize * kSize; }
  int n_actions() const override { return 3; }
  std::string id() const override { return "dotcatcher"; }
  void describe_obs(TITConfig& cfg) const override {
    cfg.obs_kind = ObsKind::Image;
    cfg.obs_h = cfg.obs_w = kSize;
    cfg.obs_c = 1;
    cfg.obs_dim = 0;
  }

  // Data-generation helper: the action a landing-point tracker would take.
  // Reads the hidden state, so it is an oracle, not an agent.
  int oracle_action() const;

  // Test hook: place the ball/paddle directly.
  void set_state(int ball_row, int ball_col, int vx, int paddle_col);
  std::vector<float> render() const;

 private:
  int ball_row_ = 0, ball_col_ = 0, vx_ = 1;
  int paddle_col_ = kSize / 2;
  int balls_done_ = 0;
  bool done_ = true;
  Rng rng_{0};

  void spawn_ball();
  int landing_col() const;
};

std::unique_ptr<Env> make_env(const std::string& id);

// Ring buffer of the last K observations with a validity mask; the window is
// returned oldest-first, zero-filled in the invalid (pre-episode) slots.
class ObservationHistory {
 public:
  ObservationHistory(int capacity, int obs_size)
      : capacity_(capacity), obs_size_(obs_size) {}

  void push(const std::vector<float>& obs) {
    if (static_cast<int>(obs.size()) != obs_size_)
      throw ShapeError("history push: observation size " + std::to_string(obs.size()) +
                       " does not match " + std::to_string(obs_size_));
    if (static_cast<int>(slots_.size()) == capacity_) slots_.pop_front();
    slots_.push_back(obs);
  }

  void clear() { slots_.clear(); }
  int size() const { return static_cast<int>(slots_.size()); }
  int capacity() const { return capacity_; }

  // Flat [K, obs_size] window plus validity, oldest first.
  void window(std::vector<float>& obs_out, std::vector<std::uint8_t>& valid_out) const {
    obs_out.assign(static_cast<std::size_t>(capacity_) * obs_size_, 0.0f);
    valid_out.assign(static_cast<std::size_t>(capacity_), 0);
    int missing = capacity_ - static_cast<int>(slots_.size());
    for (int i = 0; i < static_cast<int>(slots_.size()); ++i) {
      std::copy(slots_[static_cast<std::size_t>(i)].begin(), slots_[static_cast<std::size_t>(i)].end(),
                obs_out.begin() + static_cast<std::size_t>(missing + i) * obs_size_);
      valid_out[static_cast<std::size_t>(missing + i)] = 1;
    }
  }

 private:
  int capacity_;
  int obs_size_;
  std::deque<std::vector<float>> slots_;
};

// ---------------------------------------------------------------------------
// Episode record files (offline training data)
// ---------------------------------------------------------------------------

struct EpisodeStep {
  std::vector<float> obs;
  int action = 0;
  float reward = 0.0f;
};

struct EpisodeRecord {
  std::vector<EpisodeStep> steps;
};

struct EpisodeFile {
  std::string env_id;
  std::vector<int> obs_shape;
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
};

void write_episode_file(const std::string& path, const EpisodeFile& data);
EpisodeFile read_episode_file(const std::string& path);

}  // namespace tit
