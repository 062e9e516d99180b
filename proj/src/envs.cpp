#include "tit/envs.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "tit/checkpoint.hpp"  // IoError, byte helpers

namespace tit {

// ---------------------------------------------------------------------------
// CartPole
// ---------------------------------------------------------------------------

namespace {
constexpr double kGravity = 9.8;
constexpr double kMassCart = 1.0;
constexpr double kMassPole = 0.1;
constexpr double kTotalMass = kMassCart + kMassPole;
constexpr double kPoleHalfLength = 0.5;
constexpr double kPoleMassLength = kMassPole * kPoleHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kTau = 0.02;
constexpr double kThetaThreshold = 12.0 * 2.0 * M_PI / 360.0;
constexpr double kXThreshold = 2.4;
}  // namespace

std::vector<float> CartPole::observation() const {
  return {static_cast<float>(x_), static_cast<float>(x_dot_), static_cast<float>(theta_),
          static_cast<float>(theta_dot_)};
}

std::vector<float> CartPole::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  x_ = rng_.uniform(-0.05, 0.05);
  x_dot_ = rng_.uniform(-0.05, 0.05);
  theta_ = rng_.uniform(-0.05, 0.05);
  theta_dot_ = rng_.uniform(-0.05, 0.05);
  steps_ = 0;
  done_ = false;
  return observation();
}

StepResult CartPole::step(int action) {
  if (action != 0 && action != 1)
    throw ConfigError("cartpole: invalid action " + std::to_string(action));
  if (done_) throw ConfigError("cartpole: step() after episode end; call reset()");

  double force = action == 1 ? kForceMag : -kForceMag;
  double cos_t = std::cos(theta_);
  double sin_t = std::sin(theta_);
  double temp = (force + kPoleMassLength * theta_dot_ * theta_dot_ * sin_t) / kTotalMass;
  double theta_acc = (kGravity * sin_t - cos_t * temp) /
                     (kPoleHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
  double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;

  x_ += kTau * x_dot_;
  x_dot_ += kTau * x_acc;
  theta_ += kTau * theta_dot_;
  theta_dot_ += kTau * theta_acc;
  ++steps_;

  StepResult r;
  r.obs = observation();
  r.reward = 1.0f;
  r.terminated = std::abs(x_) > kXThreshold || std::abs(theta_) > kThetaThreshold;
  r.truncated = !r.terminated && steps_ >= kHorizon;
  done_ = r.terminated || r.truncated;
  return r;
}

// ---------------------------------------------------------------------------
// DotCatcher
// ---------------------------------------------------------------------------

void DotCatcher::spawn_ball() {
  ball_row_ = 0;
  ball_col_ = rng_.randint(2, kSize - 3);
  vx_ = rng_.randint(0, 1) == 0 ? -1 : 1;
}

std::vector<float> DotCatcher::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  paddle_col_ = kSize / 2;
  balls_done_ = 0;
  done_ = false;
  spawn_ball();
  return render();
}

std::vector<float> DotCatcher::render() const {
  std::vector<float> frame(static_cast<std::size_t>(kSize) * kSize, 0.0f);
  frame[static_cast<std::size_t>(ball_row_) * kSize + ball_col_] = 255.0f;
  for (int dc = -kPaddleHalf; dc <= kPaddleHalf; ++dc) {
    int c = paddle_col_ + dc;
    if (c >= 0 && c < kSize) frame[static_cast<std::size_t>(kSize - 1) * kSize + c] = 255.0f;
  }
  return frame;
}

void DotCatcher::set_state(int ball_row, int ball_col, int vx, int paddle_col) {
  ball_row_ = ball_row;
  ball_col_ = ball_col;
  vx_ = vx;
  paddle_col_ = paddle_col;
  done_ = false;
}

int DotCatcher::landing_col() const {
  // Replay the drift with wall bounces until the ball reaches the paddle row.
  int col = ball_col_, v = vx_;
  for (int row = ball_row_; row < kSize - 1; ++row) {
    col += v;
    if (col < 0) {
      col = 1;
      v = 1;
    } else if (col >= kSize) {
      col = kSize - 2;
      v = -1;
    }
  }
  return col;
}

int DotCatcher::oracle_action() const {
  int target = landing_col();
  if (target < paddle_col_) return 0;
  if (target > paddle_col_) return 2;
  return 1;
}

StepResult DotCatcher::step(int action) {
  if (action < 0 || action > 2)
    throw ConfigError("dotcatcher: invalid action " + std::to_string(action));
  if (done_) throw ConfigError("dotcatcher: step() after episode end; call reset()");

  paddle_col_ += action - 1;
  if (paddle_col_ < kPaddleHalf) paddle_col_ = kPaddleHalf;
  if (paddle_col_ > kSize - 1 - kPaddleHalf) paddle_col_ = kSize - 1 - kPaddleHalf;

  ball_row_ += 1;
  ball_col_ += vx_;
  if (ball_col_ < 0) {
    ball_col_ = 1;
    vx_ = 1;
  } else if (ball_col_ >= kSize) {
    ball_col_ = kSize - 2;
    vx_ = -1;
  }

  StepResult r;
  if (ball_row_ == kSize - 1) {
    bool caught = std::abs(ball_col_ - paddle_col_) <= kPaddleHalf;
    r.reward = caught ? 1.0f : -1.0f;
    ++balls_done_;
    if (balls_done_ >= kBalls) {
      r.terminated = true;
      done_ = true;
    } else {
      spawn_ball();
    }
  }
  r.obs = render();
  return r;
}

std::unique_ptr<Env> make_env(const std::string& id) {
  if (id == "cartpole") return std::make_unique<CartPole>();
  if (id == "dotcatcher") return std::make_unique<DotCatcher>();
  throw ConfigError("unknown env: '" + id + "' (expected cartpole|dotcatcher)");
}

// ---------------------------------------------------------------------------
// Episode record files
// ---------------------------------------------------------------------------

namespace {
constexpr char kEpisodeMagic[4] = {'T', 'I', 'T', 'E'};
constexpr std::uint8_t kEpisodeVersion = 1;
}  // namespace

void write_episode_file(const std::string& path, const EpisodeFile& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open episode file for writing: " + path);
  os.write(kEpisodeMagic, 4);
  os.put(static_cast<char>(kEpisodeVersion));
  detail::write_u32(os, static_cast<std::uint32_t>(data.env_id.size()));
  os.write(data.env_id.data(), static_cast<std::streamsize>(data.env_id.size()));
  os.put(static_cast<char>(data.obs_shape.size()));
  std::size_t obs_size = 1;
  for (int d : data.obs_shape) {
    detail::write_u32(os, static_cast<std::uint32_t>(d));
    obs_size *= static_cast<std::size_t>(d);
  }
  std::uint64_t seed = data.seed;
  os.write(reinterpret_cast<const char*>(&seed), 8);
  detail::write_u32(os, static_cast<std::uint32_t>(data.episodes.size()));
  for (const auto& ep : data.episodes) {
    detail::write_u32(os, static_cast<std::uint32_t>(ep.steps.size()));
    for (const auto& s : ep.steps) {
      if (s.obs.size() != obs_size) throw IoError("episode step obs size mismatch");
      os.write(reinterpret_cast<const char*>(s.obs.data()),
               static_cast<std::streamsize>(obs_size * sizeof(float)));
      detail::write_u32(os, static_cast<std::uint32_t>(s.action));
      os.write(reinterpret_cast<const char*>(&s.reward), sizeof(float));
    }
  }
  if (!os) throw IoError("write failure on episode file: " + path);
}

EpisodeFile read_episode_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open episode file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kEpisodeMagic, 4) != 0)
    throw IoError("not an episode file (bad magic): " + path);
  if (is.get() != kEpisodeVersion) throw IoError("unsupported episode file version");
  EpisodeFile data;
  std::uint32_t id_len = detail::read_u32(is);
  data.env_id.resize(id_len);
  is.read(data.env_id.data(), id_len);
  int ndim = is.get();
  std::size_t obs_size = 1;
  for (int i = 0; i < ndim; ++i) {
    data.obs_shape.push_back(static_cast<int>(detail::read_u32(is)));
    obs_size *= static_cast<std::size_t>(data.obs_shape.back());
  }
  is.read(reinterpret_cast<char*>(&data.seed), 8);
  std::uint32_t n_eps = detail::read_u32(is);
  data.episodes.resize(n_eps);
  for (auto& ep : data.episodes) {
    std::uint32_t n_steps = detail::read_u32(is);
    ep.steps.resize(n_steps);
    for (auto& s : ep.steps) {
      s.obs.resize(obs_size);
      is.read(reinterpret_cast<char*>(s.obs.data()),
              static_cast<std::streamsize>(obs_size * sizeof(float)));
      std::uint32_t a = detail::read_u32(is);
      s.action = static_cast<int>(a);
      is.read(reinterpret_cast<char*>(&s.reward), sizeof(float));
    }
  }
  if (!is) throw IoError("truncated episode file: " + path);
  return data;
}

}  // namespace tit
