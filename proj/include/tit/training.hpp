#pragma once

// Online actor-critic training (clipped-surrogate policy gradient with GAE)
// and offline sequence-model training with return-to-go conditioning, plus
// the fixed 100-episode evaluation protocol.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tit/backbone.hpp"
#include "tit/envs.hpp"

namespace tit {

struct TrainConfig {
  long long total_timesteps = 100000;
  int rollout_len = 2048;
  int minibatch_size = 64;
  int epochs = 10;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double learning_rate = 3e-4;
  double ent_coef = 0.0;
  double vf_coef = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0,1]");
    if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0");
    if (rollout_len < 1) throw ConfigError("rollout_len must be >= 1");
    if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (total_timesteps < 1) throw ConfigError("total_timesteps must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  }
};

// Matches the cited PPO implementation's default global gradient clipping.
inline constexpr double kMaxGradNorm = 0.5;

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <class Real>
class Adam {
 public:
  Adam(std::vector<Tensor<Real>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i].value();
      auto& g = params_[i].grad();
      for (std::size_t j = 0; j < val.size(); ++j) {
        double gj = static_cast<double>(g[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        val[j] -= static_cast<Real>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  double lr() const { return lr_; }

 private:
  std::vector<Tensor<Real>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Scales gradients in place so their global L2 norm is at most max_norm.
template <class Real>
double clip_grad_norm(const std::vector<std::pair<std::string, Tensor<Real>>>& params,
                      double max_norm) {
  double sq = 0.0;
  for (auto& [n, p] : params) {
    if (!const_cast<Tensor<Real>&>(p).has_grad()) continue;
    for (Real g : const_cast<Tensor<Real>&>(p).grad()) sq += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    Real s = static_cast<Real>(max_norm / norm);
    for (auto& [n, p] : params)
      for (Real& g : const_cast<Tensor<Real>&>(p).grad()) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Advantage estimation and returns
// ---------------------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + g*v_{t+1}*(1-done_t) - v_t;  A_t = delta_t + g*l*(1-done_t)*A_{t+1}.
// `bootstrap` stands in for v_{T} past the last collected step.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<std::uint8_t>& dones, double bootstrap, double gamma,
                             double lambda) {
  if (rewards.size() != values.size() || rewards.size() != dones.size())
    throw ShapeError("compute_gae: rewards/values/dones lengths differ");
  std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    double not_done = dones[i] ? 0.0 : 1.0;
    double next_v = (i + 1 < n) ? values[i + 1] : bootstrap;
    double delta = rewards[i] + gamma * next_v * not_done - values[i];
    adv = delta + gamma * lambda * not_done * adv;
    out.advantages[i] = adv;
    out.returns[i] = adv + values[i];
  }
  return out;
}

// Suffix-recursive return-to-go: R_t = r_t + g*R_{t+1}, zero after terminal.
inline std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma) {
  if (rewards.empty()) throw ConfigError("returns_to_go: empty trajectory");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

inline double normalized_score(double score, double random_score, double expert_score) {
  if (!(expert_score > random_score))
    throw ConfigError("normalized_score: expert score must exceed random score");
  return 100.0 * (score - random_score) / (expert_score - random_score);
}

// ---------------------------------------------------------------------------
// Policy distributions
// ---------------------------------------------------------------------------

template <class Real>
struct ActionSample {
  std::vector<float> action;  // one entry for discrete, dim entries otherwise
  double log_prob = 0.0;
  double value = 0.0;
};

template <class Real>
int argmax_row(const Tensor<Real>& t, int row) {
  int n = t.dim(-1);
  const Real* p = t.value().data() + static_cast<std::size_t>(row) * n;
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

// Samples (or argmaxes) one action from a single-window forward output.
template <class Real>
ActionSample<Real> select_action(const Model<Real>& m, const PolicyOut<Real>& out, bool greedy,
                                 Rng* rng) {
  ActionSample<Real> s;
  s.value = static_cast<double>(out.value.value()[0]);
  if (m.cfg.action.discrete) {
    int n = m.cfg.action.n;
    std::vector<double> logp(n);
    double mx = -1e300;
    for (int j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(out.action_out.value()[j]));
    double z = 0;
    for (int j = 0; j < n; ++j) {
      logp[j] = static_cast<double>(out.action_out.value()[j]) - mx;
      z += std::exp(logp[j]);
    }
    double lz = std::log(z);
    int a;
    if (greedy) {
      a = argmax_row(out.action_out, 0);
    } else {
      double u = rng->uniform(0.0, 1.0);
      double c = 0.0;
      a = n - 1;
      for (int j = 0; j < n; ++j) {
        c += std::exp(logp[j] - lz);
        if (u < c) {
          a = j;
          break;
        }
      }
    }
    s.action = {static_cast<float>(a)};
    s.log_prob = logp[a] - lz;
  } else {
    int dim = m.cfg.action.n;
    s.action.resize(dim);
    s.log_prob = -0.5 * dim * std::log(2.0 * M_PI);
    for (int j = 0; j < dim; ++j) {
      double mu = static_cast<double>(out.action_out.value()[j]);
      double sigma = std::exp(static_cast<double>(m.log_std.value()[j]));
      double a = greedy ? mu : mu + sigma * rng->normal(0.0, 1.0);
      s.action[j] = static_cast<float>(a);
      double zscore = (a - mu) / sigma;
      s.log_prob += -0.5 * zscore * zscore - std::log(sigma);
    }
  }
  return s;
}

// Differentiable log-probability, entropy for a batch.
template <class Real>
struct PolicyEval {
  Tensor<Real> log_prob;  // [B]
  Tensor<Real> entropy;   // [1]
};

template <class Real>
PolicyEval<Real> evaluate_actions(const Model<Real>& m, const PolicyOut<Real>& out,
                                  const std::vector<float>& actions, int batch) {
  PolicyEval<Real> pe;
  if (m.cfg.action.discrete) {
    Tensor<Real> lp = log_softmax(out.action_out);
    std::vector<int> ids(batch);
    for (int b = 0; b < batch; ++b) ids[b] = static_cast<int>(actions[static_cast<std::size_t>(b)]);
    pe.log_prob = gather_last(lp, ids);
    // H = -sum_j p_j log p_j, averaged over the batch
    pe.entropy = neg(mean(sum_last(mul(exp(lp), lp))));
  } else {
    int dim = m.cfg.action.n;
    Tensor<Real> acts = Tensor<Real>::from({batch, dim},
                                           std::vector<Real>(actions.begin(), actions.end()));
    Tensor<Real> sigma = exp(m.log_std);
    Tensor<Real> z = divide(sub(acts, out.action_out), sigma);
    Tensor<Real> quad = scale(sum_last(mul(z, z)), Real(-0.5));
    Real log2pi = Real(0.5) * dim * std::log(Real(2) * Real(M_PI));
    Tensor<Real> logdet = sum(m.log_std);
    pe.log_prob = add_const(sub(quad, logdet), -log2pi);
    // H = sum log sigma + d/2 (1 + log 2 pi)
    pe.entropy = add_const(sum(m.log_std), Real(0.5) * dim * (Real(1) + std::log(Real(2) * Real(M_PI))));
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Rollout buffer and the PPO-style update
// ---------------------------------------------------------------------------

struct RolloutBuffer {
  int capacity = 0;
  int obs_window_size = 0;  // K * obs_size
  int context_len = 0;
  int action_width = 1;

  std::vector<float> obs;            // [capacity, K*obs_size]
  std::vector<std::uint8_t> valid;   // [capacity, K]
  std::vector<float> actions;        // [capacity, action_width]
  std::vector<double> log_probs;     // [capacity]
  std::vector<double> rewards;       // [capacity]
  std::vector<double> values;        // [capacity]
  std::vector<std::uint8_t> dones;   // [capacity]
  std::vector<double> advantages;    // filled by finalize()
  std::vector<double> returns;

  int size = 0;

  RolloutBuffer(int cap, int window, int k, int act_width)
      : capacity(cap), obs_window_size(window), context_len(k), action_width(act_width) {
    obs.reserve(static_cast<std::size_t>(cap) * window);
    valid.reserve(static_cast<std::size_t>(cap) * k);
    actions.reserve(static_cast<std::size_t>(cap) * act_width);
  }

  bool full() const { return size >= capacity; }

  void push(const std::vector<float>& window, const std::vector<std::uint8_t>& vmask,
            const std::vector<float>& action, double log_prob, double reward, double value,
            bool done) {
    obs.insert(obs.end(), window.begin(), window.end());
    valid.insert(valid.end(), vmask.begin(), vmask.end());
    actions.insert(actions.end(), action.begin(), action.end());
    log_probs.push_back(log_prob);
    rewards.push_back(reward);
    values.push_back(value);
    dones.push_back(done ? 1 : 0);
    ++size;
  }

  void finalize(double bootstrap, double gamma, double lambda) {
    GaeResult g = compute_gae(rewards, values, dones, bootstrap, gamma, lambda);
    advantages = std::move(g.advantages);
    returns = std::move(g.returns);
  }

  void clear() {
    obs.clear();
    valid.clear();
    actions.clear();
    log_probs.clear();
    rewards.clear();
    values.clear();
    dones.clear();
    advantages.clear();
    returns.clear();
    size = 0;
  }
};

struct LossStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  int minibatches = 0;
};

// One full update: advantages normalized once across the buffer, then
// `epochs` passes of shuffled minibatches through the clipped objective.
template <class Real>
LossStats ppo_update(const Model<Real>& model, RolloutBuffer& buf, const TrainConfig& cfg,
                     Adam<Real>& opt, Rng& rng, Rng& dropout_rng) {
  if (!buf.full()) throw ConfigError("ppo_update: buffer not full");
  auto params = model.named_params();

  // Normalize advantages over the whole update batch.
  double mean_a = 0, var_a = 0;
  for (double a : buf.advantages) mean_a += a;
  mean_a /= static_cast<double>(buf.size);
  for (double a : buf.advantages) var_a += (a - mean_a) * (a - mean_a);
  var_a /= static_cast<double>(buf.size);
  double inv_std = 1.0 / (std::sqrt(var_a) + 1e-8);
  std::vector<double> norm_adv(buf.advantages.size());
  for (std::size_t i = 0; i < norm_adv.size(); ++i)
    norm_adv[i] = (buf.advantages[i] - mean_a) * inv_std;

  std::vector<int> order(static_cast<std::size_t>(buf.size));
  std::iota(order.begin(), order.end(), 0);

  LossStats stats;
  const int k = buf.context_len;
  const int win = buf.obs_window_size;
  const int aw = buf.action_width;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int start = 0; start + cfg.minibatch_size <= buf.size; start += cfg.minibatch_size) {
      int bsz = cfg.minibatch_size;
      std::vector<float> mb_obs(static_cast<std::size_t>(bsz) * win);
      std::vector<std::uint8_t> mb_valid(static_cast<std::size_t>(bsz) * k);
      std::vector<float> mb_actions(static_cast<std::size_t>(bsz) * aw);
      std::vector<Real> mb_adv(bsz), mb_ret(bsz), mb_logp_old(bsz);
      for (int b = 0; b < bsz; ++b) {
        int idx = order[static_cast<std::size_t>(start + b)];
        std::copy_n(buf.obs.begin() + static_cast<std::size_t>(idx) * win, win,
                    mb_obs.begin() + static_cast<std::size_t>(b) * win);
        std::copy_n(buf.valid.begin() + static_cast<std::size_t>(idx) * k, k,
                    mb_valid.begin() + static_cast<std::size_t>(b) * k);
        std::copy_n(buf.actions.begin() + static_cast<std::size_t>(idx) * aw, aw,
                    mb_actions.begin() + static_cast<std::size_t>(b) * aw);
        mb_adv[b] = static_cast<Real>(norm_adv[static_cast<std::size_t>(idx)]);
        mb_ret[b] = static_cast<Real>(buf.returns[static_cast<std::size_t>(idx)]);
        mb_logp_old[b] = static_cast<Real>(buf.log_probs[static_cast<std::size_t>(idx)]);
      }

      Tape<Real> tape;
      TapeScope<Real> scope(tape);
      ForwardOptions opt_fwd;
      opt_fwd.training = true;
      opt_fwd.dropout_rng = &dropout_rng;
      PolicyOut<Real> out = forward_window(model, mb_obs, mb_valid, bsz, opt_fwd);
      PolicyEval<Real> pe = evaluate_actions(model, out, mb_actions, bsz);

      Tensor<Real> adv = Tensor<Real>::from({bsz}, std::vector<Real>(mb_adv.begin(), mb_adv.end()));
      Tensor<Real> logp_old =
          Tensor<Real>::from({bsz}, std::vector<Real>(mb_logp_old.begin(), mb_logp_old.end()));
      Tensor<Real> ret = Tensor<Real>::from({bsz}, std::vector<Real>(mb_ret.begin(), mb_ret.end()));

      Tensor<Real> ratio = exp(sub(pe.log_prob, logp_old));
      Tensor<Real> unclipped = mul(ratio, adv);
      Tensor<Real> clipped =
          mul(clamp(ratio, Real(1.0 - cfg.clip_eps), Real(1.0 + cfg.clip_eps)), adv);
      Tensor<Real> policy_loss = neg(mean(minimum(unclipped, clipped)));

      Tensor<Real> verr = sub(reshape(out.value, {bsz}), ret);
      Tensor<Real> value_loss = mean(mul(verr, verr));

      Tensor<Real> loss = add(policy_loss, scale(value_loss, Real(cfg.vf_coef)));
      if (cfg.ent_coef != 0.0) loss = sub(loss, scale(pe.entropy, Real(cfg.ent_coef)));

      if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("ppo_update: non-finite loss");

      model.zero_grad();
      tape.backward(loss);
      clip_grad_norm(params, kMaxGradNorm);
      opt.step();

      stats.policy_loss += static_cast<double>(policy_loss.item());
      stats.value_loss += static_cast<double>(value_loss.item());
      stats.entropy += static_cast<double>(pe.entropy.item());
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    stats.policy_loss /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
    stats.entropy /= stats.minibatches;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Rollout + evaluation
// ---------------------------------------------------------------------------

template <class Real>
ActionSample<Real> act(const Model<Real>& model, const std::vector<float>& window,
                       const std::vector<std::uint8_t>& valid, bool greedy, Rng* rng) {
  ForwardOptions opt;  // no tape: action selection never records gradients
  PolicyOut<Real> out = forward_window(model, window, valid, 1, opt);
  return select_action(model, out, greedy, rng);
}

struct EvalReport {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  std::vector<double> returns;
};

// Greedy evaluation over `episodes` seeded episodes; dropout stays off and
// parameters are never touched.
template <class Real>
EvalReport evaluate_policy(const Model<Real>& model, Env& env, int episodes, std::uint64_t seed) {
  EvalReport report;
  report.episodes = episodes;
  ObservationHistory history(model.cfg.context_len, env.obs_size());
  std::vector<float> window;
  std::vector<std::uint8_t> valid;
  for (int ep = 0; ep < episodes; ++ep) {
    history.clear();
    std::vector<float> obs = env.reset(seed + static_cast<std::uint64_t>(ep));
    history.push(obs);
    double ret = 0.0;
    while (true) {
      history.window(window, valid);
      ActionSample<Real> a = act(model, window, valid, /*greedy=*/true, nullptr);
      int action = model.cfg.action.discrete ? static_cast<int>(a.action[0]) : 0;
      StepResult r = env.step(action);
      ret += static_cast<double>(r.reward);
      if (r.terminated || r.truncated) break;
      history.push(r.obs);
    }
    report.returns.push_back(ret);
  }
  double m = 0;
  for (double r : report.returns) m += r;
  m /= static_cast<double>(episodes);
  double v = 0;
  for (double r : report.returns) v += (r - m) * (r - m);
  v /= static_cast<double>(episodes);  // population std over the evaluation set
  report.mean_return = m;
  report.std_return = std::sqrt(v);
  return report;
}

// One row per update, appended to the metrics CSV by the caller.
struct TrainMetricsRow {
  double wall_clock_s = 0.0;
  long long env_steps = 0;
  int updates = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

// Full PPO training loop. Returns one metrics row per update via `on_update`.
template <class Real>
void ppo_train(const Model<Real>& model, Env& env, const TrainConfig& cfg,
               const std::function<void(const TrainMetricsRow&)>& on_update,
               const std::function<double()>& clock) {
  cfg.validate();
  const TITConfig& mc = model.cfg;
  if (mc.action.discrete && mc.action.n != env.n_actions())
    throw ConfigError("model/env action count mismatch");

  Rng policy_rng(cfg.seed);
  Rng env_rng(cfg.seed ^ 0x7f4a7c15ULL);
  Rng shuffle_rng(cfg.seed ^ 0x2545f491ULL);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b9ULL);

  std::vector<Tensor<Real>> opt_params;
  for (auto& [n, p] : model.named_params()) opt_params.push_back(p);
  Adam<Real> opt(opt_params, cfg.learning_rate);

  const int k = mc.context_len;
  const int obs_size = env.obs_size();
  const int act_width = mc.action.discrete ? 1 : mc.action.n;
  RolloutBuffer buf(cfg.rollout_len, k * obs_size, k, act_width);

  ObservationHistory history(k, obs_size);
  std::vector<float> window;
  std::vector<std::uint8_t> valid;
  history.push(env.reset(env_rng.next_seed()));

  std::vector<double> recent_returns;  // rolling last-100 completed episodes
  double episode_return = 0.0;
  long long env_steps = 0;
  int updates = 0;

  while (env_steps < cfg.total_timesteps) {
    buf.clear();
    while (!buf.full()) {
      history.window(window, valid);
      ActionSample<Real> a = act(model, window, valid, /*greedy=*/false, &policy_rng);
      int action = mc.action.discrete ? static_cast<int>(a.action[0]) : 0;
      StepResult r = env.step(action);
      ++env_steps;
      episode_return += static_cast<double>(r.reward);
      bool done = r.terminated || r.truncated;
      buf.push(window, valid, a.action, a.log_prob, r.reward, a.value, done);
      if (done) {
        recent_returns.push_back(episode_return);
        if (recent_returns.size() > 100) recent_returns.erase(recent_returns.begin());
        episode_return = 0.0;
        history.clear();
        history.push(env.reset(env_rng.next_seed()));
      } else {
        history.push(r.obs);
      }
    }

    // Bootstrap from the value of the state the rollout stopped in.
    history.window(window, valid);
    ForwardOptions eval_opt;
    PolicyOut<Real> boot = forward_window(model, window, valid, 1, eval_opt);
    buf.finalize(static_cast<double>(boot.value.value()[0]), cfg.gamma, cfg.gae_lambda);

    LossStats stats = ppo_update(model, buf, cfg, opt, shuffle_rng, dropout_rng);
    ++updates;

    TrainMetricsRow row;
    row.wall_clock_s = clock ? clock() : 0.0;
    row.env_steps = env_steps;
    row.updates = updates;
    if (!recent_returns.empty()) {
      double m = 0;
      for (double x : recent_returns) m += x;
      m /= static_cast<double>(recent_returns.size());
      double v = 0;
      for (double x : recent_returns) v += (x - m) * (x - m);
      v /= static_cast<double>(recent_returns.size());
      row.mean_return = m;
      row.std_return = std::sqrt(v);
    }
    row.policy_loss = stats.policy_loss;
    row.value_loss = stats.value_loss;
    row.entropy = stats.entropy;
    if (on_update) on_update(row);
  }
}

// ---------------------------------------------------------------------------
// Offline sequence-model training
// ---------------------------------------------------------------------------

struct DTDataset {
  int obs_size = 0;
  int n_actions = 0;
  // per trajectory: observations [T, obs_size], actions [T], returns-to-go [T]
  struct Traj {
    std::vector<float> obs;
    std::vector<int> actions;
    std::vector<float> rtg;
    int length = 0;
  };
  std::vector<Traj> trajs;
};

// Returns-to-go use the plain suffix-sum convention (gamma = 1).
inline DTDataset make_dt_dataset(const EpisodeFile& file, double gamma = 1.0) {
  DTDataset ds;
  std::size_t obs_size = 1;
  for (int d : file.obs_shape) obs_size *= static_cast<std::size_t>(d);
  ds.obs_size = static_cast<int>(obs_size);
  for (const auto& ep : file.episodes) {
    DTDataset::Traj tr;
    tr.length = static_cast<int>(ep.steps.size());
    std::vector<double> rewards;
    for (const auto& s : ep.steps) {
      tr.obs.insert(tr.obs.end(), s.obs.begin(), s.obs.end());
      tr.actions.push_back(s.action);
      ds.n_actions = std::max(ds.n_actions, s.action + 1);
      rewards.push_back(static_cast<double>(s.reward));
    }
    std::vector<double> rtg = returns_to_go(rewards, gamma);
    for (double r : rtg) tr.rtg.push_back(static_cast<float>(r));
    ds.trajs.push_back(std::move(tr));
  }
  return ds;
}

// Samples `batch` windows of `steps` consecutive tuples.
inline DTBatch sample_dt_batch(const DTDataset& ds, int batch, int steps, Rng& rng) {
  DTBatch b;
  b.batch = batch;
  b.steps = steps;
  b.last_action_present = true;
  b.rtg.resize(static_cast<std::size_t>(batch) * steps);
  b.obs.resize(static_cast<std::size_t>(batch) * steps * ds.obs_size);
  b.actions.resize(static_cast<std::size_t>(batch) * steps);
  for (int i = 0; i < batch; ++i) {
    const auto& tr = ds.trajs[static_cast<std::size_t>(rng.randint(0, static_cast<int>(ds.trajs.size()) - 1))];
    int max_start = std::max(0, tr.length - steps);
    int start = rng.randint(0, max_start);
    for (int t = 0; t < steps; ++t) {
      int src = std::min(start + t, tr.length - 1);
      b.rtg[static_cast<std::size_t>(i) * steps + t] = tr.rtg[static_cast<std::size_t>(src)];
      b.actions[static_cast<std::size_t>(i) * steps + t] = tr.actions[static_cast<std::size_t>(src)];
      std::copy_n(tr.obs.begin() + static_cast<std::size_t>(src) * ds.obs_size, ds.obs_size,
                  b.obs.begin() + (static_cast<std::size_t>(i) * steps + t) * ds.obs_size);
    }
  }
  return b;
}

// Cross-entropy between predicted and logged actions at every observation
// position; applies one optimizer step. Returns the loss value.
template <class Real>
double dt_train_step(const Model<Real>& model, const DTBatch& batch, Adam<Real>& opt, Rng& dropout_rng) {
  Tape<Real> tape;
  TapeScope<Real> scope(tape);
  ForwardOptions opt_fwd;
  opt_fwd.training = true;
  opt_fwd.dropout_rng = &dropout_rng;
  Tensor<Real> logits = dt_sequence_forward(model, batch, opt_fwd);  // [B, T, n]
  Tensor<Real> lp = log_softmax(logits);
  std::vector<int> targets(batch.actions.begin(),
                           batch.actions.begin() + static_cast<std::size_t>(batch.batch) * batch.steps);
  Tensor<Real> picked = gather_last(lp, targets);  // [B, T]
  Tensor<Real> loss = neg(mean(picked));
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("dt_train_step: non-finite loss");
  model.zero_grad();
  tape.backward(loss);
  auto params = model.named_params();
  clip_grad_norm(params, kMaxGradNorm);
  opt.step();
  return static_cast<double>(loss.item());
}

// Fraction of dataset positions whose argmax prediction matches the logged
// action, using consecutive windows of `steps` tuples.
template <class Real>
double dt_action_accuracy(const Model<Real>& model, const DTDataset& ds, int steps) {
  long long correct = 0, total = 0;
  ForwardOptions opt;
  for (const auto& tr : ds.trajs) {
    for (int start = 0; start < tr.length; start += steps) {
      int t_count = std::min(steps, tr.length - start);
      DTBatch b;
      b.batch = 1;
      b.steps = t_count;
      b.last_action_present = true;
      b.rtg.assign(tr.rtg.begin() + start, tr.rtg.begin() + start + t_count);
      b.actions.assign(tr.actions.begin() + start, tr.actions.begin() + start + t_count);
      b.obs.assign(tr.obs.begin() + static_cast<std::size_t>(start) * ds.obs_size,
                   tr.obs.begin() + static_cast<std::size_t>(start + t_count) * ds.obs_size);
      Tensor<Real> logits = dt_sequence_forward(model, b, opt);
      for (int t = 0; t < t_count; ++t) {
        if (argmax_row(logits, t) == b.actions[static_cast<std::size_t>(t)]) ++correct;
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace tit
