#pragma once

// Encoder (unmasked) and decoder (causally masked) pre-norm transformer
// blocks, plus attention-weight capture for the visualization tooling.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tit/rng.hpp"
#include "tit/tensor.hpp"

namespace tit {

inline constexpr double kLayerNormEps = 1e-5;

// One head's attention weight matrix from one block, captured during a
// forward pass. Rows are queries and sum to 1; masked entries are exactly 0.
struct AttentionRecord {
  int block_index = 0;
  int head_index = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;  // row-major [rows x cols]
};

struct AttentionSink {
  std::vector<AttentionRecord> records;
};

template <class Real>
struct BlockParams {
  Tensor<Real> ln1_gain, ln1_bias;
  Tensor<Real> ln2_gain, ln2_bias;
  Tensor<Real> q_proj, k_proj, v_proj, out_proj;  // [d, d]
  Tensor<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;    // d -> d_ff -> d
  int heads = 1;

  static BlockParams init(int d, int d_ff, int heads, Rng& rng) {
    if (heads < 1 || d % heads != 0)
      throw ConfigError("block: heads (" + std::to_string(heads) + ") must divide embed dim (" +
                        std::to_string(d) + ")");
    BlockParams p;
    p.heads = heads;
    double ws = 1.0 / std::sqrt(static_cast<double>(d));
    double ws2 = 1.0 / std::sqrt(static_cast<double>(d_ff));
    p.ln1_gain = Tensor<Real>::param({d}, std::vector<Real>(d, Real(1)));
    p.ln1_bias = Tensor<Real>::param({d}, std::vector<Real>(d, Real(0)));
    p.ln2_gain = Tensor<Real>::param({d}, std::vector<Real>(d, Real(1)));
    p.ln2_bias = Tensor<Real>::param({d}, std::vector<Real>(d, Real(0)));
    p.q_proj = Tensor<Real>::param({d, d}, rng.template normal_vec<Real>(std::size_t(d) * d, 0, ws));
    p.k_proj = Tensor<Real>::param({d, d}, rng.template normal_vec<Real>(std::size_t(d) * d, 0, ws));
    p.v_proj = Tensor<Real>::param({d, d}, rng.template normal_vec<Real>(std::size_t(d) * d, 0, ws));
    p.out_proj = Tensor<Real>::param({d, d}, rng.template normal_vec<Real>(std::size_t(d) * d, 0, ws));
    p.ffn_w1 = Tensor<Real>::param({d, d_ff}, rng.template normal_vec<Real>(std::size_t(d) * d_ff, 0, ws));
    p.ffn_b1 = Tensor<Real>::param({d_ff}, std::vector<Real>(d_ff, Real(0)));
    p.ffn_w2 = Tensor<Real>::param({d_ff, d}, rng.template normal_vec<Real>(std::size_t(d_ff) * d, 0, ws2));
    p.ffn_b2 = Tensor<Real>::param({d}, std::vector<Real>(d, Real(0)));
    return p;
  }

  std::vector<std::pair<std::string, Tensor<Real>>> named(const std::string& prefix) const {
    return {{prefix + ".ln1_gain", ln1_gain}, {prefix + ".ln1_bias", ln1_bias},
            {prefix + ".ln2_gain", ln2_gain}, {prefix + ".ln2_bias", ln2_bias},
            {prefix + ".q_proj", q_proj},     {prefix + ".k_proj", k_proj},
            {prefix + ".v_proj", v_proj},     {prefix + ".out_proj", out_proj},
            {prefix + ".ffn_w1", ffn_w1},     {prefix + ".ffn_b1", ffn_b1},
            {prefix + ".ffn_w2", ffn_w2},     {prefix + ".ffn_b2", ffn_b2}};
  }
};

// Per-forward knobs that do not belong to the parameters.
struct BlockContext {
  ActivationKind activation = ActivationKind::Gelu;
  double attn_dropout = 0.0;
  double ffn_dropout = 0.0;
  bool training = false;
  Rng* dropout_rng = nullptr;   // consulted only when training with a nonzero rate
  AttentionSink* sink = nullptr;  // captures sample 0 when non-null
  int block_index = 0;

  std::uint64_t draw_seed() const { return dropout_rng ? dropout_rng->next_seed() : 0; }
};

// Entry (i, j) permitted iff j <= i.
inline Mask make_causal_mask(int n) {
  if (n < 1) throw ConfigError("make_causal_mask: n must be >= 1");
  Mask m;
  m.shape = {n, n};
  m.allow.assign(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m.allow[static_cast<std::size_t>(i) * n + j] = 1;
  return m;
}

// Causal mask with invalid (pre-episode) key slots excluded. The diagonal is
// always permitted so no query row ends up with an empty context; rows for
// invalid slots are discarded downstream anyway.
// `valid` is row-major [batch x n] (or length n for unbatched input).
inline Mask make_causal_valid_mask(int n, const std::vector<std::uint8_t>& valid) {
  if (valid.size() % static_cast<std::size_t>(n) != 0)
    throw ShapeError("make_causal_valid_mask: validity length not a multiple of n");
  int batch = static_cast<int>(valid.size() / static_cast<std::size_t>(n));
  Mask m;
  m.shape = batch > 1 ? Shape{batch, n, n} : Shape{n, n};
  m.allow.assign(static_cast<std::size_t>(batch) * n * n, 0);
  for (int b = 0; b < batch; ++b) {
    const std::uint8_t* v = valid.data() + static_cast<std::size_t>(b) * n;
    std::uint8_t* mb = m.allow.data() + static_cast<std::size_t>(b) * n * n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j)
        if (v[j] || j == i) mb[static_cast<std::size_t>(i) * n + j] = 1;
  }
  return m;
}

// Scaled dot-product self-attention over the second-to-last axis.
// x: [n, d] or [batch, n, d]. Scale uses the per-head dimension.
template <class Real>
Tensor<Real> multi_head_self_attention(const Tensor<Real>& x, const BlockParams<Real>& p,
                                       const Mask* mask, const BlockContext& ctx) {
  int d = x.dim(-1);
  if (p.q_proj.dim(0) != d)
    throw ShapeError("attention: input dim " + std::to_string(d) + " does not match params " +
                     shape_str(p.q_proj.shape()));
  int head_dim = d / p.heads;
  Real att_scale = Real(1) / std::sqrt(Real(head_dim));

  Tensor<Real> q = matmul(x, p.q_proj);
  Tensor<Real> k = matmul(x, p.k_proj);
  Tensor<Real> v = matmul(x, p.v_proj);

  std::vector<Tensor<Real>> head_ctx;
  head_ctx.reserve(p.heads);
  for (int h = 0; h < p.heads; ++h) {
    int lo = h * head_dim, hi = lo + head_dim;
    Tensor<Real> qh = slice_last(q, lo, hi);
    Tensor<Real> kh = slice_last(k, lo, hi);
    Tensor<Real> vh = slice_last(v, lo, hi);
    Tensor<Real> scores = scale(matmul_nt(qh, kh), att_scale);
    Tensor<Real> probs = masked_softmax(scores, mask);
    if (ctx.sink) {
      int n = probs.dim(-1);
      int rows = probs.dim(-2);
      AttentionRecord rec;
      rec.block_index = ctx.block_index;
      rec.head_index = h;
      rec.rows = rows;
      rec.cols = n;
      rec.weights.assign(probs.value().begin(),
                         probs.value().begin() + static_cast<std::size_t>(rows) * n);
      ctx.sink->records.push_back(std::move(rec));
    }
    if (ctx.training && ctx.attn_dropout > 0.0)
      probs = dropout(probs, ctx.attn_dropout, true, ctx.draw_seed());
    // Stable accumulation keeps the context value independent of key order.
    head_ctx.push_back(matmul(probs, vh, /*stable_acc=*/true));
  }
  Tensor<Real> merged = p.heads == 1 ? head_ctx[0] : concat_last(head_ctx);
  return matmul(merged, p.out_proj);
}

template <class Real>
Tensor<Real> feed_forward(const Tensor<Real>& x, const BlockParams<Real>& p, const BlockContext& ctx) {
  Tensor<Real> h = activation(add(matmul(x, p.ffn_w1), p.ffn_b1), ctx.activation);
  if (ctx.training && ctx.ffn_dropout > 0.0)
    h = dropout(h, ctx.ffn_dropout, true, ctx.draw_seed());
  return add(matmul(h, p.ffn_w2), p.ffn_b2);
}

// Pre-norm residual block: z~ = z + MSA(LN(z)); out = z~ + FFN(LN(z~)).
template <class Real>
Tensor<Real> transformer_block(const Tensor<Real>& z, const BlockParams<Real>& p, const Mask* mask,
                               const BlockContext& ctx) {
  Real eps = Real(kLayerNormEps);
  Tensor<Real> attended = add(z, multi_head_self_attention(layer_norm(z, p.ln1_gain, p.ln1_bias, eps),
                                                           p, mask, ctx));
  return add(attended, feed_forward(layer_norm(attended, p.ln2_gain, p.ln2_bias, eps), p, ctx));
}

// Inner (spatial) block: attends across all patch tokens, no mask.
template <class Real>
Tensor<Real> encoder_block(const Tensor<Real>& z, const BlockParams<Real>& p, const BlockContext& ctx) {
  return transformer_block(z, p, nullptr, ctx);
}

// Outer (temporal) block: causal mask over the history axis, optionally with
// invalid leading slots excluded.
template <class Real>
Tensor<Real> decoder_block(const Tensor<Real>& y, const BlockParams<Real>& p, const BlockContext& ctx,
                           const std::vector<std::uint8_t>* valid = nullptr) {
  int n = y.dim(-2);
  Mask m = valid ? make_causal_valid_mask(n, *valid) : make_causal_mask(n);
  return transformer_block(y, p, &m, ctx);
}

}  // namespace tit
