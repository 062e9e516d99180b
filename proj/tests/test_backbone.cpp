#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "tit/backbone.hpp"
#include "tit/checkpoint.hpp"
#include "tit/grad_check.hpp"

using tit::Model;
using tit::ObsKind;
using tit::Tensor;
using tit::TITConfig;
using tit::Variant;

namespace {

using Tf = Tensor<float>;

TITConfig tiny_array_cfg(int obs_dim = 4, int embed = 8, int blocks = 2, int context = 2,
                         Variant variant = Variant::Enhanced) {
  TITConfig cfg;
  cfg.obs_kind = ObsKind::Array;
  cfg.obs_dim = obs_dim;
  cfg.patch_size = 1;
  cfg.embed_dim = embed;
  cfg.num_blocks = blocks;
  cfg.context_len = context;
  cfg.inner_heads = 1;
  cfg.outer_heads = 1;
  cfg.variant = variant;
  cfg.action = tit::ActionSpec{true, 3};
  return cfg;
}

template <class Real>
void zero_sublayers(Model<Real>& m) {
  for (auto& [name, t] : m.named_params()) {
    if (name.find("inner.") == 0 || name.find("outer.") == 0) {
      bool is_gain = name.find("gain") != std::string::npos;
      auto& v = const_cast<Tensor<Real>&>(t).value();
      std::fill(v.begin(), v.end(), is_gain ? Real(1) : Real(0));
    }
  }
}

std::vector<float> random_window(const TITConfig& cfg, std::uint64_t seed) {
  tit::Rng rng(seed);
  std::size_t n = static_cast<std::size_t>(cfg.context_len) * cfg.obs_size();
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// ------------------------------------------------------------------
// Straight-line re-implementation of the enhanced wiring in plain loops
// (double precision), kept independent of the tensor graph on purpose.
// ------------------------------------------------------------------
struct Straightline {
  static std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                    int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
  }

  static void layer_norm_rows(std::vector<double>& x, int rows, int d,
                              const std::vector<double>& gain, const std::vector<double>& bias) {
    for (int r = 0; r < rows; ++r) {
      double mu = 0;
      for (int j = 0; j < d; ++j) mu += x[r * d + j];
      mu /= d;
      double var = 0;
      for (int j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
      var /= d;
      double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int j = 0; j < d; ++j) x[r * d + j] = gain[j] * ((x[r * d + j] - mu) * inv) + bias[j];
    }
  }

  static double gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

  template <class P>
  static std::vector<double> block(const std::vector<double>& z_in, int rows, int d, const P& p,
                                   bool causal) {
    auto get = [](const auto& t) {
      return std::vector<double>(t.value().begin(), t.value().end());
    };
    std::vector<double> z = z_in;
    // attention sublayer
    std::vector<double> ln = z;
    layer_norm_rows(ln, rows, d, get(p.ln1_gain), get(p.ln1_bias));
    auto q = matmul(ln, get(p.q_proj), rows, d, d);
    auto k = matmul(ln, get(p.k_proj), rows, d, d);
    auto v = matmul(ln, get(p.v_proj), rows, d, d);
    std::vector<double> ctx(static_cast<std::size_t>(rows) * d, 0.0);
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < rows; ++i) {
      int limit = causal ? i + 1 : rows;
      std::vector<double> row(limit);
      double mx = -1e300;
      for (int j = 0; j < limit; ++j) {
        double s = 0;
        for (int pdim = 0; pdim < d; ++pdim) s += q[i * d + pdim] * k[j * d + pdim];
        row[j] = s * scale;
        mx = std::max(mx, row[j]);
      }
      double zsum = 0;
      for (int j = 0; j < limit; ++j) {
        row[j] = std::exp(row[j] - mx);
        zsum += row[j];
      }
      for (int j = 0; j < limit; ++j)
        for (int pdim = 0; pdim < d; ++pdim) ctx[i * d + pdim] += (row[j] / zsum) * v[j * d + pdim];
    }
    auto att = matmul(ctx, get(p.out_proj), rows, d, d);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += att[i];
    // ffn sublayer
    std::vector<double> ln2 = z;
    layer_norm_rows(ln2, rows, d, get(p.ln2_gain), get(p.ln2_bias));
    int dff = p.ffn_w1.dim(1);
    auto h = matmul(ln2, get(p.ffn_w1), rows, d, dff);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < dff; ++j) h[r * dff + j] = gelu(h[r * dff + j] + p.ffn_b1.value()[j]);
    auto f = matmul(h, get(p.ffn_w2), rows, dff, d);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j) z[r * d + j] += f[r * d + j] + p.ffn_b2.value()[j];
    return z;
  }

  // Full enhanced forward for array observations, one window, K timesteps.
  static std::pair<std::vector<double>, double> enhanced(const Model<double>& m,
                                                         const std::vector<float>& window) {
    const TITConfig& cfg = m.cfg;
    const int K = cfg.context_len, D = cfg.embed_dim, N = cfg.obs_dim, L = cfg.num_blocks;
    auto get = [](const auto& t) {
      return std::vector<double>(t.value().begin(), t.value().end());
    };
    // per-timestep token matrices
    std::vector<std::vector<double>> z(K);
    for (int t = 0; t < K; ++t) {
      std::vector<double> patches(N);
      for (int i = 0; i < N; ++i) patches[i] = window[t * N + i];
      auto embedded = matmul(patches, get(m.patch_embed), N, 1, D);
      std::vector<double> tokens((N + 1) * D);
      for (int j = 0; j < D; ++j) tokens[j] = m.class_token.value()[j];
      std::copy(embedded.begin(), embedded.end(), tokens.begin() + D);
      for (int i = 0; i < (N + 1) * D; ++i) tokens[i] += m.patch_pos.value()[i];
      z[t] = tokens;
    }
    // TIT blocks: inner layer l on every timestep, then outer layer l on the
    // fresh class tokens of layer l
    std::vector<double> dense;
    for (int l = 0; l < L; ++l) {
      for (int t = 0; t < K; ++t) z[t] = block(z[t], N + 1, D, m.inner_blocks[l], false);
      std::vector<double> y(K * D);
      for (int t = 0; t < K; ++t)
        for (int j = 0; j < D; ++j) y[t * D + j] = z[t][j];
      y = block(y, K, D, m.outer_blocks[l], true);
      for (int j = 0; j < D; ++j) dense.push_back(y[(K - 1) * D + j]);
    }
    // head
    int F = L * D;
    auto h = matmul(dense, get(m.head_w1), 1, F, tit::kHeadHidden);
    for (int j = 0; j < tit::kHeadHidden; ++j) h[j] = gelu(h[j] + m.head_b1.value()[j]);
    auto logits = matmul(h, get(m.head_w2), 1, tit::kHeadHidden, cfg.action.n);
    for (int j = 0; j < cfg.action.n; ++j) logits[j] += m.head_b2.value()[j];
    double value = m.value_b.value()[0];
    for (int j = 0; j < F; ++j) value += dense[j] * m.value_w.value()[j];
    return {logits, value};
  }
};

}  // namespace

TEST_CASE("patchify: image tiling and array entries") {
  TITConfig cfg;
  cfg.obs_kind = ObsKind::Image;
  cfg.obs_h = cfg.obs_w = 84;
  cfg.obs_c = 1;
  cfg.patch_size = 12;
  cfg.embed_dim = 16;
  cfg.validate();
  CHECK(cfg.num_patches() == 49);
  CHECK(cfg.patch_dim() == 144);

  std::vector<float> img(84 * 84, 0.0f);
  img[0] = 255.0f;  // top-left pixel lands in patch 0, offset 0
  Tf ps = tit::patchify<float>(img, cfg);
  CHECK(ps.shape() == tit::Shape{49, 144});
  CHECK(ps.value()[0] == 1.0f);  // scaled into [0,1]

  cfg.patch_size = 84;
  CHECK(cfg.num_patches() == 1);
  CHECK(cfg.patch_dim() == 7056);

  TITConfig arr = tiny_array_cfg();
  std::vector<float> obs = {0.1f, -0.2f, 0.3f, -0.4f};
  Tf ap = tit::patchify<float>(obs, arr);
  CHECK(ap.shape() == tit::Shape{4, 1});
  CHECK(ap.value()[1] == -0.2f);  // array entries pass through unscaled
}

TEST_CASE("patchify rejects indivisible patch sizes") {
  TITConfig cfg;
  cfg.obs_kind = ObsKind::Image;
  cfg.obs_h = cfg.obs_w = 84;
  cfg.obs_c = 1;
  cfg.patch_size = 13;
  CHECK_THROWS_AS(cfg.validate(), tit::ConfigError);
}

TEST_CASE("embed_and_tokenize composes embedding, class token, and positions") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 1);
  Model<float> m = Model<float>::init(cfg, 3);

  // all-zero parameters -> all-zero tokens
  Model<float> mz = m.clone();
  for (auto* t : {&mz.patch_embed, &mz.class_token, &mz.patch_pos})
    std::fill(t->value().begin(), t->value().end(), 0.0f);
  Tf patches = Tf::from({1, 4, 1}, {1, 2, 3, 4});
  Tf z0 = tit::embed_and_tokenize(patches, mz);
  CHECK(z0.shape() == tit::Shape{1, 5, 8});
  for (float v : z0.value()) CHECK(v == 0.0f);

  // zero positions, duplicate patches -> duplicate rows
  Model<float> mp = m.clone();
  std::fill(mp.patch_pos.value().begin(), mp.patch_pos.value().end(), 0.0f);
  Tf dup = Tf::from({1, 4, 1}, {0.7f, 0.7f, 0.7f, 0.7f});
  Tf zd = tit::embed_and_tokenize(dup, mp);
  for (int i = 2; i <= 4; ++i)
    for (int j = 0; j < 8; ++j) CHECK(zd.value()[i * 8 + j] == zd.value()[1 * 8 + j]);

  // row 0 = class token + position row 0
  Tf z = tit::embed_and_tokenize(patches, m);
  for (int j = 0; j < 8; ++j)
    CHECK(z.value()[j] ==
          doctest::Approx(m.class_token.value()[j] + m.patch_pos.value()[j]).epsilon(1e-6));
}

TEST_CASE("inner_forward: residual identity and composition") {
  TITConfig cfg = tiny_array_cfg(4, 8, 2, 1);
  Model<float> m = Model<float>::init(cfg, 7);
  zero_sublayers(m);
  Tf patches = Tf::from({1, 4, 1}, {1, -1, 2, -2});
  Tf z0 = tit::embed_and_tokenize(patches, m);
  tit::ForwardOptions opt;
  Tf z = tit::inner_forward(z0, m, 0, 1, opt);
  // zero-weight block: class feature equals z0 row 0
  Tf cls = tit::class_feature(z);
  CHECK(cls.shape() == tit::Shape{1, 8});
  for (int j = 0; j < 8; ++j) CHECK(cls.value()[j] == z0.value()[j]);

  // L=2 equals manual two-call composition
  Model<float> mr = Model<float>::init(cfg, 8);
  Tf full = tit::inner_forward(tit::embed_and_tokenize(patches, mr), mr, 0, 2, opt);
  Tf step1 = tit::inner_forward(tit::embed_and_tokenize(patches, mr), mr, 0, 1, opt);
  Tf step2 = tit::inner_forward(step1, mr, 1, 2, opt);
  CHECK(full.value() == step2.value());
}

TEST_CASE("class feature shape is independent of patch count") {
  for (int n : {1, 4, 49}) {
    TITConfig cfg = tiny_array_cfg(n, 8, 1, 1);
    Model<float> m = Model<float>::init(cfg, 100 + n);
    std::vector<float> window(static_cast<std::size_t>(n), 0.5f);
    tit::ForwardOptions opt;
    Tf z = tit::inner_forward(
        tit::embed_and_tokenize(tit::detail::slot_patches(m, window.data(), 1), m), m, 0, 1, opt);
    CHECK(tit::class_feature(z).shape() == tit::Shape{1, 8});
  }
}

TEST_CASE("assemble_outer_input: K=1 passthrough and oldest-first ordering") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 1);
  Model<float> m = Model<float>::init(cfg, 11);
  Tf feats = Tf::from({1, 8}, tit::Rng(12).normal_vec<float>(8, 0, 1));
  Tf y = tit::assemble_outer_input(feats, m, 1);
  CHECK(y.shape() == tit::Shape{1, 1, 8});
  CHECK(y.value() == feats.value());

  TITConfig cfg4 = tiny_array_cfg(4, 8, 1, 4);
  Model<float> m4 = Model<float>::init(cfg4, 13);
  Tf f4 = Tf::from({4, 8}, tit::Rng(14).normal_vec<float>(32, 0, 1));
  Tf y4 = tit::assemble_outer_input(f4, m4, 1);
  CHECK(y4.shape() == tit::Shape{1, 4, 8});
  CHECK(y4.value() == f4.value());  // stacking preserves oldest-first order
}

TEST_CASE("invalid leading slots reproduce the shorter-context computation bitwise") {
  // model with K=4 vs the same parameters viewed at K=2
  TITConfig cfg = tiny_array_cfg(4, 8, 2, 4);
  Model<float> m = Model<float>::init(cfg, 21);
  std::vector<float> suffix = random_window(tiny_array_cfg(4, 8, 2, 2), 22);  // 2 obs
  std::vector<float> window(4 * 4, 0.0f);
  std::copy(suffix.begin(), suffix.end(), window.begin() + 2 * 4);
  std::vector<std::uint8_t> valid = {0, 0, 1, 1};

  tit::ForwardOptions opt;
  auto out4 = tit::forward_window(m, window, valid, 1, opt);

  Model<float> m2 = m;  // shares parameters
  m2.cfg.context_len = 2;
  auto out2 = tit::forward_window(m2, suffix, {1, 1}, 1, opt);

  CHECK(out4.action_out.value() == out2.action_out.value());
  CHECK(out4.value.value() == out2.value.value());
}

TEST_CASE("forward_window rejects an invalid current slot") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 2);
  Model<float> m = Model<float>::init(cfg, 31);
  std::vector<float> window(8, 0.0f);
  CHECK_THROWS_AS(tit::forward_window(m, window, {1, 0}, 1, tit::ForwardOptions{}),
                  tit::ShapeError);
}

TEST_CASE("zero-weight vanilla chain reduces to the head on the class row") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 1, Variant::Vanilla);
  Model<float> m = Model<float>::init(cfg, 41);
  zero_sublayers(m);
  std::vector<float> window = random_window(cfg, 42);
  tit::ForwardOptions opt;
  auto out = tit::forward_window(m, window, {1}, 1, opt);

  // head applied directly to class_token + position row 0
  std::vector<float> feat(8);
  for (int j = 0; j < 8; ++j) feat[j] = m.class_token.value()[j] + m.patch_pos.value()[j];
  auto manual = tit::apply_head(Tf::from({1, 8}, feat), m, opt);
  CHECK(out.action_out.value() == manual.action_out.value());
  CHECK(out.value.value() == manual.value.value());
}

TEST_CASE("parameter count is independent of the context length") {
  for (Variant v : {Variant::Vanilla, Variant::Enhanced}) {
    Model<float> m2 = Model<float>::init(tiny_array_cfg(4, 8, 2, 2, v), 51);
    Model<float> m8 = Model<float>::init(tiny_array_cfg(4, 8, 2, 8, v), 51);
    CHECK(m2.param_count() == m8.param_count());
    CHECK(m2.inner_param_count() == m8.inner_param_count());
    CHECK(m2.inner_param_count() > 0);
  }
}

TEST_CASE("enhanced with one block equals vanilla with one block, exactly") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 3, Variant::Enhanced);
  Model<float> m = Model<float>::init(cfg, 61);
  Model<float> mv = m;  // same parameter storage
  mv.cfg.variant = Variant::Vanilla;

  std::vector<float> window = random_window(cfg, 62);
  std::vector<std::uint8_t> valid = {1, 1, 1};
  tit::ForwardOptions opt;
  auto a = tit::forward_window(m, window, valid, 1, opt);
  auto b = tit::forward_window(mv, window, valid, 1, opt);
  CHECK(a.action_out.value() == b.action_out.value());
  CHECK(a.value.value() == b.value.value());
}

TEST_CASE("enhanced dense feature length is blocks times embed dim") {
  Model<float> m = Model<float>::init(tiny_array_cfg(4, 8, 3, 2, Variant::Enhanced), 71);
  CHECK(m.aggregate_dim() == 24);
  CHECK(m.head_w1.shape() == tit::Shape{24, tit::kHeadHidden});
  Model<float> wd = Model<float>::init(tiny_array_cfg(4, 8, 3, 2, Variant::WoDense), 72);
  CHECK(wd.aggregate_dim() == 8);
  CHECK(wd.head_w1.shape() == tit::Shape{8, tit::kHeadHidden});
}

TEST_CASE("enhanced forward matches the straight-line recomputation") {
  TITConfig cfg = tiny_array_cfg(4, 8, 2, 2, Variant::Enhanced);
  Model<double> m = Model<double>::init(cfg, 81);
  std::vector<float> window = random_window(cfg, 82);
  tit::ForwardOptions opt;
  auto out = tit::forward_window(m, window, {1, 1}, 1, opt);
  auto [logits, value] = Straightline::enhanced(m, window);
  REQUIRE(static_cast<int>(logits.size()) == cfg.action.n);
  for (int j = 0; j < cfg.action.n; ++j)
    CHECK(std::abs(out.action_out.value()[j] - logits[j]) < 1e-5);
  CHECK(std::abs(out.value.value()[0] - value) < 1e-5);
}

TEST_CASE("spatial permutation with zero positions leaves outputs bit-identical") {
  TITConfig cfg = tiny_array_cfg(4, 8, 2, 1, Variant::Enhanced);
  Model<float> m = Model<float>::init(cfg, 91);
  std::fill(m.patch_pos.value().begin(), m.patch_pos.value().end(), 0.0f);

  std::vector<float> window = {0.3f, -0.7f, 1.1f, 0.2f};
  std::vector<float> permuted = {1.1f, 0.3f, 0.2f, -0.7f};
  tit::ForwardOptions opt;
  auto a = tit::forward_window(m, window, {1}, 1, opt);
  auto b = tit::forward_window(m, permuted, {1}, 1, opt);
  CHECK(a.action_out.value() == b.action_out.value());
  CHECK(a.value.value() == b.value.value());
}

TEST_CASE("ablation variants: missing pieces really are missing") {
  Model<float> wi = tit::build_variant<float>(tiny_array_cfg(4, 8, 2, 3, Variant::WoInner), 95);
  CHECK(wi.inner_param_count() == 0);
  CHECK(wi.obs_embed.defined());
  CHECK(wi.obs_embed.shape() == tit::Shape{4, 8});
  CHECK(wi.inner_blocks.empty());

  TITConfig img;
  img.obs_kind = ObsKind::Image;
  img.obs_h = img.obs_w = 24;
  img.obs_c = 1;
  img.patch_size = 6;
  img.embed_dim = 8;
  img.num_blocks = 2;
  img.context_len = 4;
  img.variant = Variant::WoOuter;
  img.action = tit::ActionSpec{true, 3};
  Model<float> wo = tit::build_variant<float>(img, 96);
  CHECK(wo.outer_blocks.empty());
  CHECK(img.patch_dim() == 6 * 6 * 4);  // K frames fold into channels
  CHECK(wo.patch_embed.shape() == tit::Shape{6 * 6 * 4, 8});

  // both run end to end
  std::vector<float> window(static_cast<std::size_t>(3) * 4 * 1, 0.5f);
  tit::ForwardOptions opt;
  auto out = tit::forward_window(wi, window, {1, 1, 1}, 1, opt);
  CHECK(out.action_out.shape() == tit::Shape{1, 3});

  std::vector<float> iwin(static_cast<std::size_t>(4) * 24 * 24, 0.0f);
  auto out2 = tit::forward_window(wo, iwin, {1, 1, 1, 1}, 1, opt);
  CHECK(out2.action_out.shape() == tit::Shape{1, 3});
}

TEST_CASE("information flow counts reproduce the closed forms") {
  auto v = tit::count_information_flows(2, 4, Variant::Vanilla);
  CHECK(v.spatial == 8);
  CHECK(v.temporal == 2);
  CHECK(v.ss == 4);
  CHECK(v.tt == 1);
  CHECK(v.st == 4);
  CHECK(v.ts == 0);

  auto e = tit::count_information_flows(2, 4, Variant::Enhanced);
  CHECK(e.spatial == 8);
  CHECK(e.temporal == 2);
  CHECK(e.ss == 4);
  CHECK(e.tt == 2);
  CHECK(e.st == 8);
  CHECK(e.ts == 0);

  auto v1 = tit::count_information_flows(1, 5, Variant::Vanilla);
  CHECK(v1.ss == 0);
  CHECK(v1.tt == 0);
}

TEST_CASE("dt forward: all-zero embeddings leave only the head bias") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 4);
  Model<float> m = Model<float>::init(cfg, 101, /*dt_mode=*/true);
  zero_sublayers(m);
  for (auto* t : {&m.patch_embed, &m.class_token, &m.patch_pos, &m.rtg_embed_w, &m.rtg_embed_b,
                  &m.action_embed, &m.head_w1, &m.head_b1, &m.head_w2})
    std::fill(t->value().begin(), t->value().end(), 0.0f);
  for (int j = 0; j < 3; ++j) m.head_b2.value()[j] = static_cast<float>(j) - 1.0f;

  tit::DTBatch batch;
  batch.batch = 1;
  batch.steps = 1;
  batch.rtg = {5.0f};
  batch.obs = {0.1f, 0.2f, 0.3f, 0.4f};
  batch.actions = {0};
  batch.last_action_present = false;
  tit::ForwardOptions opt;
  Tf logits = tit::dt_sequence_forward(m, batch, opt);
  CHECK(logits.shape() == tit::Shape{1, 1, 3});
  for (int j = 0; j < 3; ++j) CHECK(logits.value()[j] == m.head_b2.value()[j]);
}

TEST_CASE("dt forward: outer stack sees 3T - 1 tokens when the last action is absent") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 4);
  Model<float> m = Model<float>::init(cfg, 111, /*dt_mode=*/true);
  tit::Rng rng(112);
  tit::DTBatch batch;
  batch.batch = 1;
  batch.steps = 3;
  for (int t = 0; t < 3; ++t) {
    batch.rtg.push_back(static_cast<float>(3 - t));
    for (int j = 0; j < 4; ++j) batch.obs.push_back(static_cast<float>(rng.uniform(-1, 1)));
    batch.actions.push_back(t % 3);
  }
  for (bool last_present : {true, false}) {
    batch.last_action_present = last_present;
    tit::AttentionSink sink;
    tit::ForwardOptions opt;
    opt.sink = &sink;
    tit::dt_sequence_forward(m, batch, opt);
    int expected_tokens = 3 * 3 - (last_present ? 0 : 1);
    bool saw_outer = false;
    for (auto& rec : sink.records) {
      if (rec.rows == expected_tokens) saw_outer = true;
      // every record is either the inner pass (5 patch tokens) or the outer pass
      CHECK((rec.rows == 5 || rec.rows == expected_tokens));
    }
    CHECK(saw_outer);
  }
}

TEST_CASE("dt forward: future tuples cannot reach earlier predictions") {
  TITConfig cfg = tiny_array_cfg(4, 8, 2, 4);
  Model<float> m = Model<float>::init(cfg, 121, /*dt_mode=*/true);
  tit::Rng rng(122);
  tit::DTBatch batch;
  batch.batch = 1;
  batch.steps = 4;
  batch.last_action_present = true;
  for (int t = 0; t < 4; ++t) {
    batch.rtg.push_back(static_cast<float>(rng.uniform(0, 4)));
    for (int j = 0; j < 4; ++j) batch.obs.push_back(static_cast<float>(rng.uniform(-1, 1)));
    batch.actions.push_back(rng.randint(0, 2));
  }
  tit::ForwardOptions opt;
  Tf base = tit::dt_sequence_forward(m, batch, opt);

  for (int t = 0; t + 1 < 4; ++t) {
    tit::DTBatch poked = batch;
    poked.rtg[static_cast<std::size_t>(t) + 1] += 2.5f;
    poked.actions[static_cast<std::size_t>(t) + 1] =
        (poked.actions[static_cast<std::size_t>(t) + 1] + 1) % 3;
    for (int j = 0; j < 4; ++j) poked.obs[static_cast<std::size_t>(t + 1) * 4 + j] *= -2.0f;
    Tf out = tit::dt_sequence_forward(m, poked, opt);
    for (int s = 0; s <= t; ++s)
      for (int j = 0; j < 3; ++j)
        CHECK(out.value()[s * 3 + j] == base.value()[s * 3 + j]);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly with their config") {
  TITConfig cfg = tiny_array_cfg(4, 8, 2, 3, Variant::Enhanced);
  cfg.inner_attn_dropout = 0.1;
  Model<float> m = Model<float>::init(cfg, 131);
  std::string path = "/tmp/tit_test_ckpt.titw";
  tit::save_checkpoint(m, path);
  Model<float> r = tit::load_checkpoint<float>(path);

  CHECK(r.cfg.variant == cfg.variant);
  CHECK(r.cfg.embed_dim == cfg.embed_dim);
  CHECK(r.cfg.inner_attn_dropout == cfg.inner_attn_dropout);
  auto pa = m.named_params();
  auto pb = r.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.value() == pb[i].second.value());
  }

  // forward results identical
  std::vector<float> window = random_window(cfg, 132);
  std::vector<std::uint8_t> valid = {1, 1, 1};
  tit::ForwardOptions opt;
  CHECK(tit::forward_window(m, window, valid, 1, opt).action_out.value() ==
        tit::forward_window(r, window, valid, 1, opt).action_out.value());
}

TEST_CASE("checkpoint loader rejects foreign files") {
  std::string path = "/tmp/tit_test_bad.titw";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTACKPT garbage";
  }
  CHECK_THROWS_AS(tit::load_checkpoint<float>(path), tit::IoError);
}

TEST_CASE("full enhanced backbone passes finite differences at tiny dims") {
  TITConfig cfg = tiny_array_cfg(4, 8, 1, 2, Variant::Enhanced);
  Model<double> m = Model<double>::init(cfg, 141);
  std::vector<float> window = random_window(cfg, 142);
  std::vector<std::uint8_t> valid = {1, 1};
  tit::Rng wrng(143);
  std::vector<double> w(3);
  for (auto& x : w) x = wrng.uniform(-1, 1);
  auto f = [&]() {
    tit::ForwardOptions opt;
    auto out = tit::forward_window(m, window, valid, 1, opt);
    Tensor<double> weights = Tensor<double>::from({1, 3}, std::vector<double>(w));
    return tit::add(tit::sum(tit::mul(out.action_out, weights)), tit::sum(out.value));
  };
  auto report = tit::finite_difference_check<double>(f, m.named_params(), 1e-5, 1e-6, 1e-7);
  CAPTURE(report.max_rel_err);
  CHECK(report.passed);
}
