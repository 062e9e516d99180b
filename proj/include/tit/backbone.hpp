#pragma once

// The two-transformer backbone: an inner encoder builds a per-observation
// representation from patch tokens, an outer causal decoder relates the last
// K of those across time. Variants wire the two stacks differently; the
// ablations drop one of the pieces.

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tit/blocks.hpp"
#include "tit/rng.hpp"
#include "tit/tensor.hpp"

namespace tit {

enum class ObsKind { Image, Array };
enum class Variant { Vanilla, Enhanced, WoDense, WoInner, WoOuter };

inline Variant variant_from_string(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "enhanced") return Variant::Enhanced;
  if (s == "wo_dense") return Variant::WoDense;
  if (s == "wo_inner") return Variant::WoInner;
  if (s == "wo_outer") return Variant::WoOuter;
  throw ConfigError("unknown variant: '" + s +
                    "' (expected vanilla|enhanced|wo_dense|wo_inner|wo_outer)");
}

inline const char* variant_to_string(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::Enhanced: return "enhanced";
    case Variant::WoDense: return "wo_dense";
    case Variant::WoInner: return "wo_inner";
    case Variant::WoOuter: return "wo_outer";
  }
  return "?";
}

struct ActionSpec {
  bool discrete = true;
  int n = 2;  // number of discrete actions, or continuous dimensions
};

struct TITConfig {
  ObsKind obs_kind = ObsKind::Array;
  int obs_h = 0, obs_w = 0, obs_c = 0;  // image
  int obs_dim = 0;                      // array
  int patch_size = 1;
  int embed_dim = 32;
  int num_blocks = 2;
  int context_len = 1;
  int inner_heads = 1;
  int outer_heads = 1;
  double inner_attn_dropout = 0.0;
  double inner_ffn_dropout = 0.0;
  double outer_attn_dropout = 0.0;
  double outer_ffn_dropout = 0.0;
  ActivationKind activation = ActivationKind::Gelu;
  Variant variant = Variant::Enhanced;
  bool outer_position_encoding = false;
  ActionSpec action;

  int obs_size() const {
    return obs_kind == ObsKind::Image ? obs_h * obs_w * obs_c : obs_dim;
  }

  // Channels seen by one inner pass; the outer-free ablation folds the K
  // history frames into the channel axis, DQN style.
  int effective_channels() const {
    int c = obs_kind == ObsKind::Image ? obs_c : 1;
    return variant == Variant::WoOuter ? c * context_len : c;
  }

  int num_patches() const {
    if (obs_kind == ObsKind::Image)
      return (obs_h / patch_size) * (obs_w / patch_size);
    return variant == Variant::WoOuter ? obs_dim * context_len : obs_dim;
  }

  int patch_dim() const {
    if (obs_kind == ObsKind::Image) return patch_size * patch_size * effective_channels();
    return 1;
  }

  void validate() const {
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (context_len < 1) throw ConfigError("context_len must be >= 1");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (inner_heads < 1 || embed_dim % inner_heads != 0)
      throw ConfigError("embed_dim must be divisible by inner_heads");
    if (outer_heads < 1 || embed_dim % outer_heads != 0)
      throw ConfigError("embed_dim must be divisible by outer_heads");
    if (obs_kind == ObsKind::Image) {
      if (obs_h < 1 || obs_w < 1 || obs_c < 1) throw ConfigError("image dims must be positive");
      if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
      if (obs_h % patch_size != 0 || obs_w % patch_size != 0)
        throw ConfigError("patch_size " + std::to_string(patch_size) +
                          " does not divide image " + std::to_string(obs_h) + "x" +
                          std::to_string(obs_w) + " (no silent padding)");
    } else if (obs_dim < 1) {
      throw ConfigError("array observation dim must be >= 1");
    }
    for (double r : {inner_attn_dropout, inner_ffn_dropout, outer_attn_dropout, outer_ffn_dropout})
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must be in [0,1)");
    if (action.n < 1) throw ConfigError("action spec must have >= 1 entries");
  }
};

// Horizontal (within-layer) and vertical (layer-to-layer) representation
// paths through the backbone, by type.
struct FlowCounts {
  long long spatial = 0, temporal = 0;
  long long ss = 0, tt = 0, st = 0, ts = 0;
};

inline FlowCounts count_information_flows(int num_blocks, int context_len, Variant variant) {
  if (num_blocks < 1 || context_len < 1)
    throw ConfigError("count_information_flows: num_blocks and context_len must be >= 1");
  long long L = num_blocks, K = context_len;
  FlowCounts f;
  f.spatial = L * K;
  f.temporal = L;
  f.ss = (L - 1) * K;
  f.ts = 0;
  switch (variant) {
    case Variant::Vanilla:
      f.tt = L - 1;
      f.st = K;
      break;
    case Variant::Enhanced:
      f.tt = L;
      f.st = L * K;
      break;
    default:
      throw ConfigError("count_information_flows: only vanilla and enhanced are tabulated");
  }
  return f;
}

// ---------------------------------------------------------------------------
// Patch generation (plain data; observations carry no gradient).
// ---------------------------------------------------------------------------

// One observation -> row-major [N x patch_dim] patch matrix. Image pixels are
// scaled into [0,1]; array entries become length-1 patches as-is.
template <class Real>
std::vector<Real> patchify_values(const float* obs, const TITConfig& cfg, int frames = 1) {
  const int P = cfg.patch_size;
  if (cfg.obs_kind == ObsKind::Array) {
    int n = cfg.obs_dim * frames;
    std::vector<Real> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[i] = static_cast<Real>(obs[i]);
    return out;
  }
  const int H = cfg.obs_h, W = cfg.obs_w, C = cfg.obs_c;
  const int gh = H / P, gw = W / P;
  const int cc = C * frames;  // stacked channels
  std::vector<Real> out(static_cast<std::size_t>(gh) * gw * P * P * cc);
  const Real inv255 = Real(1) / Real(255);
  std::size_t o = 0;
  for (int gr = 0; gr < gh; ++gr)
    for (int gc = 0; gc < gw; ++gc)
      for (int dr = 0; dr < P; ++dr)
        for (int dc = 0; dc < P; ++dc)
          for (int ch = 0; ch < cc; ++ch) {
            int frame = ch / C, c = ch % C;
            std::size_t idx = static_cast<std::size_t>(frame) * H * W * C +
                              (static_cast<std::size_t>(gr * P + dr) * W + (gc * P + dc)) * C + c;
            out[o++] = static_cast<Real>(obs[idx]) * inv255;
          }
  return out;
}

template <class Real>
Tensor<Real> patchify(const std::vector<float>& obs, const TITConfig& cfg) {
  if (static_cast<int>(obs.size()) != cfg.obs_size())
    throw ShapeError("patchify: observation size " + std::to_string(obs.size()) +
                     " does not match config " + std::to_string(cfg.obs_size()));
  std::vector<Real> v = patchify_values<Real>(obs.data(), cfg);
  return Tensor<Real>::from({cfg.num_patches(), cfg.patch_dim()}, std::move(v));
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

inline constexpr int kHeadHidden = 64;
inline constexpr double kTokenInitStd = 0.02;
inline constexpr double kPolicyHeadScale = 0.01;

template <class Real>
struct PolicyOut {
  Tensor<Real> action_out;  // [B, n] logits (discrete) or means (continuous)
  Tensor<Real> value;       // [B, 1]
};

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  AttentionSink* sink = nullptr;
};

template <class Real>
struct Model {
  TITConfig cfg;
  bool dt_mode = false;

  Tensor<Real> patch_embed;   // [patch_dim, D]
  Tensor<Real> class_token;   // [D]
  Tensor<Real> patch_pos;     // [N+1, D]
  Tensor<Real> obs_embed;     // wo_inner only: [obs_size, D]
  Tensor<Real> temporal_pos;  // optional [K, D]
  std::vector<BlockParams<Real>> inner_blocks;
  std::vector<BlockParams<Real>> outer_blocks;

  Tensor<Real> head_w1, head_b1, head_w2, head_b2;  // aggregate feature -> action
  Tensor<Real> value_w, value_b;                    // aggregate feature -> value
  Tensor<Real> log_std;                             // continuous action only

  Tensor<Real> rtg_embed_w, rtg_embed_b;  // dt mode: scalar return-to-go -> [D]
  Tensor<Real> action_embed;              // dt mode: [n_actions, D]

  bool has_inner() const { return cfg.variant != Variant::WoInner; }
  bool has_outer() const { return cfg.variant != Variant::WoOuter; }

  int aggregate_dim() const {
    // The dense head concatenates one feature per TIT block; every other
    // wiring (and dt mode) reads a single embed_dim feature.
    if (!dt_mode && cfg.variant == Variant::Enhanced) return cfg.num_blocks * cfg.embed_dim;
    return cfg.embed_dim;
  }
  int action_out_dim() const { return cfg.action.n; }

  static Model init(const TITConfig& cfg, std::uint64_t seed, bool dt_mode = false) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.dt_mode = dt_mode;
    Rng rng(seed);
    const int d = cfg.embed_dim;
    const int d_ff = 4 * d;

    if (m.has_inner()) {
      int pd = cfg.patch_dim();
      int n = cfg.num_patches();
      m.patch_embed = Tensor<Real>::param(
          {pd, d}, rng.template normal_vec<Real>(std::size_t(pd) * d, 0, 1.0 / std::sqrt(double(pd))));
      m.class_token =
          Tensor<Real>::param({d}, rng.template normal_vec<Real>(d, 0, kTokenInitStd));
      m.patch_pos = Tensor<Real>::param(
          {n + 1, d}, rng.template normal_vec<Real>(std::size_t(n + 1) * d, 0, kTokenInitStd));
      for (int l = 0; l < cfg.num_blocks; ++l)
        m.inner_blocks.push_back(BlockParams<Real>::init(d, d_ff, cfg.inner_heads, rng));
    } else {
      int s = cfg.obs_size();
      m.obs_embed = Tensor<Real>::param(
          {s, d}, rng.template normal_vec<Real>(std::size_t(s) * d, 0, 1.0 / std::sqrt(double(s))));
    }

    if (m.has_outer()) {
      for (int l = 0; l < cfg.num_blocks; ++l)
        m.outer_blocks.push_back(BlockParams<Real>::init(d, d_ff, cfg.outer_heads, rng));
      if (cfg.outer_position_encoding)
        m.temporal_pos = Tensor<Real>::param({cfg.context_len, d},
                                             rng.template normal_vec<Real>(
                                                 std::size_t(cfg.context_len) * d, 0, kTokenInitStd));
    }

    const int f = m.aggregate_dim();
    const int n_out = m.action_out_dim();
    m.head_w1 = Tensor<Real>::param(
        {f, kHeadHidden},
        rng.template normal_vec<Real>(std::size_t(f) * kHeadHidden, 0, 1.0 / std::sqrt(double(f))));
    m.head_b1 = Tensor<Real>::param({kHeadHidden}, std::vector<Real>(kHeadHidden, Real(0)));
    {
      auto w2 = rng.template normal_vec<Real>(std::size_t(kHeadHidden) * n_out, 0,
                                              1.0 / std::sqrt(double(kHeadHidden)));
      for (auto& x : w2) x *= Real(kPolicyHeadScale);
      m.head_w2 = Tensor<Real>::param({kHeadHidden, n_out}, std::move(w2));
    }
    m.head_b2 = Tensor<Real>::param({n_out}, std::vector<Real>(n_out, Real(0)));
    m.value_w = Tensor<Real>::param(
        {f, 1}, rng.template normal_vec<Real>(f, 0, 1.0 / std::sqrt(double(f))));
    m.value_b = Tensor<Real>::param({1}, {Real(0)});
    if (!cfg.action.discrete)
      m.log_std = Tensor<Real>::param({cfg.action.n}, std::vector<Real>(cfg.action.n, Real(0)));

    if (dt_mode) {
      if (!cfg.action.discrete) throw ConfigError("dt mode supports discrete actions only");
      if (!m.has_inner() || !m.has_outer())
        throw ConfigError("dt mode requires both inner and outer stacks");
      m.rtg_embed_w = Tensor<Real>::param({1, d}, rng.template normal_vec<Real>(d, 0, 1.0));
      m.rtg_embed_b = Tensor<Real>::param({d}, std::vector<Real>(d, Real(0)));
      m.action_embed = Tensor<Real>::param(
          {cfg.action.n, d},
          rng.template normal_vec<Real>(std::size_t(cfg.action.n) * d, 0, kTokenInitStd));
    }
    return m;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named_params() const {
    std::vector<std::pair<std::string, Tensor<Real>>> out;
    auto push = [&](const std::string& name, const Tensor<Real>& t) {
      if (t.defined()) out.emplace_back(name, t);
    };
    push("patch_embed", patch_embed);
    push("class_token", class_token);
    push("patch_pos", patch_pos);
    push("obs_embed", obs_embed);
    push("temporal_pos", temporal_pos);
    for (std::size_t l = 0; l < inner_blocks.size(); ++l)
      for (auto& [n, t] : inner_blocks[l].named("inner." + std::to_string(l))) out.emplace_back(n, t);
    for (std::size_t l = 0; l < outer_blocks.size(); ++l)
      for (auto& [n, t] : outer_blocks[l].named("outer." + std::to_string(l))) out.emplace_back(n, t);
    push("head_w1", head_w1);
    push("head_b1", head_b1);
    push("head_w2", head_w2);
    push("head_b2", head_b2);
    push("value_w", value_w);
    push("value_b", value_b);
    push("log_std", log_std);
    push("rtg_embed_w", rtg_embed_w);
    push("rtg_embed_b", rtg_embed_b);
    push("action_embed", action_embed);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_params()) n += t.numel();
    return n;
  }

  std::size_t inner_param_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_params())
      if (name.rfind("inner.", 0) == 0) n += t.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& [name, t] : named_params()) const_cast<Tensor<Real>&>(t).zero_grad();
  }

  // Deep copy (fresh parameter storage), e.g. for rollout replicas.
  Model clone() const {
    Model m = *this;
    auto copy = [](Tensor<Real>& t) {
      if (t.defined()) t = Tensor<Real>::param(t.shape(), t.value());
    };
    copy(m.patch_embed);
    copy(m.class_token);
    copy(m.patch_pos);
    copy(m.obs_embed);
    copy(m.temporal_pos);
    for (auto& b : m.inner_blocks)
      for (auto* t : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias, &b.q_proj, &b.k_proj,
                      &b.v_proj, &b.out_proj, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2})
        copy(*t);
    for (auto& b : m.outer_blocks)
      for (auto* t : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias, &b.q_proj, &b.k_proj,
                      &b.v_proj, &b.out_proj, &b.ffn_w1, &b.ffn_b1, &b.ffn_w2, &b.ffn_b2})
        copy(*t);
    copy(m.head_w1);
    copy(m.head_b1);
    copy(m.head_w2);
    copy(m.head_b2);
    copy(m.value_w);
    copy(m.value_b);
    copy(m.log_std);
    copy(m.rtg_embed_w);
    copy(m.rtg_embed_b);
    copy(m.action_embed);
    return m;
  }
};

// Factory honoring TITConfig::variant, so ablations build through one door.
template <class Real>
Model<Real> build_variant(const TITConfig& cfg, std::uint64_t seed) {
  return Model<Real>::init(cfg, seed);
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// patches [M, N, pd] -> class-token-prefixed, position-encoded [M, N+1, D].
template <class Real>
Tensor<Real> embed_and_tokenize(const Tensor<Real>& patches, const Model<Real>& m) {
  Tensor<Real> embedded = matmul(patches, m.patch_embed);
  Tensor<Real> with_class = prepend_row(embedded, m.class_token);
  return add(with_class, m.patch_pos);
}

// Sequential encoder stack over [start, end); returns the final token matrix.
template <class Real>
Tensor<Real> inner_forward(const Tensor<Real>& z0, const Model<Real>& m, int start, int end,
                           const ForwardOptions& opt) {
  BlockContext ctx;
  ctx.activation = m.cfg.activation;
  ctx.attn_dropout = m.cfg.inner_attn_dropout;
  ctx.ffn_dropout = m.cfg.inner_ffn_dropout;
  ctx.training = opt.training;
  ctx.dropout_rng = opt.dropout_rng;
  ctx.sink = opt.sink;
  Tensor<Real> z = z0;
  for (int l = start; l < end; ++l) {
    ctx.block_index = l;
    z = encoder_block(z, m.inner_blocks[static_cast<std::size_t>(l)], ctx);
  }
  return z;
}

// Class feature = row 0 of the token matrix: [M, N+1, D] -> [M, D].
template <class Real>
Tensor<Real> class_feature(const Tensor<Real>& z) {
  return take_row(z, 0);
}

// Stack per-timestep class features [B*K, D] (oldest first within each
// window) into the outer input [B, K, D], adding the temporal position table
// when configured. Invalid slots stay zero-filled; they are excluded from
// attention by the validity mask at the decoder.
template <class Real>
Tensor<Real> assemble_outer_input(const Tensor<Real>& features, const Model<Real>& m, int batch) {
  int k = m.cfg.context_len;
  int d = m.cfg.embed_dim;
  Tensor<Real> y = reshape(features, {batch, k, d});
  if (m.temporal_pos.defined()) y = add(y, m.temporal_pos);
  return y;
}

template <class Real>
Tensor<Real> outer_block_forward(const Tensor<Real>& y, const Model<Real>& m, int layer,
                                 const ForwardOptions& opt, const std::vector<std::uint8_t>* valid) {
  BlockContext ctx;
  ctx.activation = m.cfg.activation;
  ctx.attn_dropout = m.cfg.outer_attn_dropout;
  ctx.ffn_dropout = m.cfg.outer_ffn_dropout;
  ctx.training = opt.training;
  ctx.dropout_rng = opt.dropout_rng;
  ctx.sink = opt.sink;
  ctx.block_index = layer;
  return decoder_block(y, m.outer_blocks[static_cast<std::size_t>(layer)], ctx, valid);
}

template <class Real>
PolicyOut<Real> apply_head(const Tensor<Real>& feature, const Model<Real>& m,
                           const ForwardOptions& opt) {
  (void)opt;
  Tensor<Real> h = activation(add(matmul(feature, m.head_w1), m.head_b1), m.cfg.activation);
  PolicyOut<Real> out;
  out.action_out = add(matmul(h, m.head_w2), m.head_b2);
  out.value = add(matmul(feature, m.value_w), m.value_b);
  return out;
}

namespace detail {

// Flat observations -> patch tensor for every slot: [slots, N, pd].
template <class Real>
Tensor<Real> slot_patches(const Model<Real>& m, const float* obs, int slots) {
  const TITConfig& cfg = m.cfg;
  int n = cfg.num_patches();
  int pd = cfg.patch_dim();
  std::size_t per = static_cast<std::size_t>(n) * pd;
  std::vector<Real> all(static_cast<std::size_t>(slots) * per);
  std::size_t obs_size = static_cast<std::size_t>(cfg.obs_size());
  for (int i = 0; i < slots; ++i) {
    std::vector<Real> p = patchify_values<Real>(obs + i * obs_size, cfg);
    std::copy(p.begin(), p.end(), all.begin() + i * per);
  }
  return Tensor<Real>::from({slots, n, pd}, std::move(all));
}

template <class Real>
bool all_valid(const std::vector<std::uint8_t>& valid) {
  for (auto v : valid)
    if (!v) return false;
  return true;
}

}  // namespace detail

// obs: row-major [batch, K, obs_size] window batch, oldest slot first.
// valid: [batch, K]; the last slot of every window must be valid.
template <class Real>
PolicyOut<Real> forward_window(const Model<Real>& m, const std::vector<float>& obs,
                               const std::vector<std::uint8_t>& valid, int batch,
                               const ForwardOptions& opt) {
  const TITConfig& cfg = m.cfg;
  const int k = cfg.context_len;
  const int d = cfg.embed_dim;
  if (obs.size() != static_cast<std::size_t>(batch) * k * cfg.obs_size())
    throw ShapeError("forward_window: observation buffer size mismatch");
  if (valid.size() != static_cast<std::size_t>(batch) * k)
    throw ShapeError("forward_window: validity mask size mismatch");
  for (int b = 0; b < batch; ++b)
    if (!valid[static_cast<std::size_t>(b) * k + k - 1])
      throw ShapeError("forward_window: the current (last) slot must be valid");

  const std::vector<std::uint8_t>* vmask = detail::all_valid<Real>(valid) ? nullptr : &valid;

  switch (cfg.variant) {
    case Variant::Vanilla: {
      Tensor<Real> z = embed_and_tokenize(detail::slot_patches(m, obs.data(), batch * k), m);
      z = inner_forward(z, m, 0, cfg.num_blocks, opt);
      Tensor<Real> y = assemble_outer_input(class_feature(z), m, batch);
      for (int l = 0; l < cfg.num_blocks; ++l) y = outer_block_forward(y, m, l, opt, vmask);
      return apply_head(take_row(y, k - 1), m, opt);
    }
    case Variant::Enhanced:
    case Variant::WoDense: {
      Tensor<Real> z = embed_and_tokenize(detail::slot_patches(m, obs.data(), batch * k), m);
      std::vector<Tensor<Real>> dense;
      Tensor<Real> last;
      for (int l = 0; l < cfg.num_blocks; ++l) {
        z = inner_forward(z, m, l, l + 1, opt);
        Tensor<Real> y = assemble_outer_input(class_feature(z), m, batch);
        y = outer_block_forward(y, m, l, opt, vmask);
        last = take_row(y, k - 1);
        if (cfg.variant == Variant::Enhanced) dense.push_back(last);
      }
      Tensor<Real> feature =
          cfg.variant == Variant::Enhanced
              ? (dense.size() == 1 ? dense[0] : concat_last(dense))
              : last;
      return apply_head(feature, m, opt);
    }
    case Variant::WoInner: {
      // Observation embedding replaces the inner stack entirely.
      std::vector<Real> flat(obs.size());
      bool image = cfg.obs_kind == ObsKind::Image;
      const Real inv255 = Real(1) / Real(255);
      for (std::size_t i = 0; i < obs.size(); ++i)
        flat[i] = image ? static_cast<Real>(obs[i]) * inv255 : static_cast<Real>(obs[i]);
      Tensor<Real> o = Tensor<Real>::from({batch, k, cfg.obs_size()}, std::move(flat));
      Tensor<Real> y = matmul(o, m.obs_embed);
      if (m.temporal_pos.defined()) y = add(y, m.temporal_pos);
      for (int l = 0; l < cfg.num_blocks; ++l) y = outer_block_forward(y, m, l, opt, vmask);
      return apply_head(take_row(y, k - 1), m, opt);
    }
    case Variant::WoOuter: {
      // K frames fold into channels; one inner pass sees the whole history.
      int n = cfg.num_patches();
      int pd = cfg.patch_dim();
      std::size_t per = static_cast<std::size_t>(n) * pd;
      std::vector<Real> all(static_cast<std::size_t>(batch) * per);
      std::size_t win = static_cast<std::size_t>(k) * cfg.obs_size();
      for (int b = 0; b < batch; ++b) {
        std::vector<Real> p = patchify_values<Real>(obs.data() + b * win, cfg, k);
        std::copy(p.begin(), p.end(), all.begin() + b * per);
      }
      Tensor<Real> z =
          embed_and_tokenize(Tensor<Real>::from({batch, n, pd}, std::move(all)), m);
      z = inner_forward(z, m, 0, cfg.num_blocks, opt);
      return apply_head(class_feature(z), m, opt);
    }
  }
  throw ConfigError("forward_window: invalid variant");
}

// Convenience single-window entry points (batch == 1).
template <class Real>
PolicyOut<Real> vanilla_forward(const Model<Real>& m, const std::vector<float>& window,
                                const std::vector<std::uint8_t>& valid, const ForwardOptions& opt) {
  return forward_window(m, window, valid, 1, opt);
}

template <class Real>
PolicyOut<Real> enhanced_forward(const Model<Real>& m, const std::vector<float>& window,
                                 const std::vector<std::uint8_t>& valid, const ForwardOptions& opt) {
  return forward_window(m, window, valid, 1, opt);
}

// ---------------------------------------------------------------------------
// Decision-Transformer-style sequence forward
// ---------------------------------------------------------------------------

// A batch of fixed-length tuple windows. Actions are indices; the last
// action of each window may be absent (inference time).
struct DTBatch {
  int batch = 0;
  int steps = 0;                 // tuples per window
  std::vector<float> rtg;        // [batch, steps]
  std::vector<float> obs;        // [batch, steps, obs_size]
  std::vector<int> actions;      // [batch, steps]; last entries ignored if absent
  bool last_action_present = true;
};

// Interleaves (return-to-go, observation-feature, action) tokens, runs the
// causal outer stack, and reads an action prediction at every observation
// position: result [batch, steps, n_actions].
template <class Real>
Tensor<Real> dt_sequence_forward(const Model<Real>& m, const DTBatch& batch,
                                 const ForwardOptions& opt) {
  if (!m.dt_mode) throw ConfigError("dt_sequence_forward: model was not built in dt mode");
  if (batch.steps < 1) throw ConfigError("dt_sequence_forward: empty sequence");
  if (batch.steps > m.cfg.context_len)
    throw ConfigError("dt_sequence_forward: " + std::to_string(batch.steps) +
                      " tuples exceed context length " + std::to_string(m.cfg.context_len));
  const int B = batch.batch;
  const int T = batch.steps;
  const int d = m.cfg.embed_dim;

  // Observation features from the inner stack: [B*T, D] -> [B, T, D].
  Tensor<Real> z = embed_and_tokenize(detail::slot_patches(m, batch.obs.data(), B * T), m);
  z = inner_forward(z, m, 0, m.cfg.num_blocks, opt);
  Tensor<Real> obs_feat = reshape(class_feature(z), {B, T, d});

  // Return-to-go features: scalar -> [D].
  std::vector<Real> rtg_vals(batch.rtg.begin(), batch.rtg.end());
  Tensor<Real> rtg_in = Tensor<Real>::from({B * T, 1}, std::move(rtg_vals));
  Tensor<Real> rtg_feat = reshape(add(matmul(rtg_in, m.rtg_embed_w), m.rtg_embed_b), {B, T, d});

  // Action features via embedding lookup.
  int act_steps = batch.last_action_present ? T : T - 1;
  Tensor<Real> act_feat;
  if (act_steps > 0) {
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(B) * act_steps);
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < act_steps; ++t) ids.push_back(batch.actions[b * T + t]);
    act_feat = reshape(take_rows(m.action_embed, ids), {B, act_steps, d});
  }

  if (m.temporal_pos.defined()) {
    if (T > m.temporal_pos.dim(0))
      throw ConfigError("dt_sequence_forward: window exceeds temporal position table");
    std::vector<int> prefix(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) prefix[static_cast<std::size_t>(t)] = t;
    Tensor<Real> pos = take_rows(m.temporal_pos, prefix);
    rtg_feat = add(rtg_feat, pos);
    obs_feat = add(obs_feat, pos);
    if (act_steps > 0)
      act_feat = add(act_feat, take_rows(m.temporal_pos,
                                         std::vector<int>(prefix.begin(), prefix.begin() + act_steps)));
  }

  // Interleave R, o, a per timestep (final action absent at inference).
  std::vector<Tensor<Real>> tokens;
  tokens.reserve(static_cast<std::size_t>(3) * T);
  for (int t = 0; t < T; ++t) {
    tokens.push_back(take_row(rtg_feat, t));
    tokens.push_back(take_row(obs_feat, t));
    if (t < act_steps) tokens.push_back(take_row(act_feat, t));
  }
  Tensor<Real> seq = stack_rows(tokens);  // [B, n_tokens, D]

  for (int l = 0; l < m.cfg.num_blocks; ++l) seq = outer_block_forward(seq, m, l, opt, nullptr);

  // Predictions live at the observation positions 3t + 1.
  std::vector<Tensor<Real>> preds;
  preds.reserve(T);
  for (int t = 0; t < T; ++t) preds.push_back(take_row(seq, 3 * t + 1));
  Tensor<Real> feat = stack_rows(preds);  // [B, T, D]
  return apply_head(feat, m, opt).action_out;
}

}  // namespace tit
