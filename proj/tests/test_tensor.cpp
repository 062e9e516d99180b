#include <doctest.h>

#include <cmath>
#include <vector>

#include "tit/grad_check.hpp"
#include "tit/rng.hpp"
#include "tit/tensor.hpp"

using tit::Tensor;
using tit::Tape;
using tit::TapeScope;

namespace {

using Tf = Tensor<float>;
using Td = Tensor<double>;

template <class Real>
std::vector<Real> random_vec(std::size_t n, tit::Rng& rng, double scale = 1.0) {
  return rng.template normal_vec<Real>(n, 0.0, scale);
}

}  // namespace

TEST_CASE("matmul basic identities") {
  Tf a = Tf::from({2, 2}, {1, 2, 3, 4});
  Tf eye = Tf::from({2, 2}, {1, 0, 0, 1});
  Tf zero = Tf::zeros({2, 2});

  CHECK(tit::matmul(a, eye).value() == std::vector<float>{1, 2, 3, 4});
  CHECK(tit::matmul(a, zero).value() == std::vector<float>{0, 0, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tf a = Tf::zeros({2, 3});
  Tf b = Tf::zeros({4, 2});
  CHECK_THROWS_WITH_AS(tit::matmul(a, b), doctest::Contains("[2,3]"), tit::ShapeError);
}

TEST_CASE("matmul gradient vs central differences (float32, 3x4 * 4x2)") {
  tit::Rng rng(7);
  Tf a = Tf::param({3, 4}, random_vec<float>(12, rng));
  Tf b = Tf::param({4, 2}, random_vec<float>(8, rng));
  auto f = [&]() { return tit::sum(tit::matmul(a, b)); };
  // The loss is linear in every coordinate, so central differences carry no
  // truncation term; a wide step keeps float32 roundoff out of the quotient.
  auto report = tit::finite_difference_check<float>(f, {{"a", a}, {"b", b}}, 0.125f, 1e-3f, 1e-3f);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-3f);
}

TEST_CASE("batched matmul matches per-sample matmul") {
  tit::Rng rng(11);
  Tf a = Tf::from({2, 3, 4}, random_vec<float>(24, rng));
  Tf w = Tf::from({4, 5}, random_vec<float>(20, rng));
  Tf y = tit::matmul(a, w);
  for (int b = 0; b < 2; ++b) {
    std::vector<float> sample(a.value().begin() + b * 12, a.value().begin() + (b + 1) * 12);
    Tf yb = tit::matmul(Tf::from({3, 4}, sample), w);
    for (int i = 0; i < 15; ++i) CHECK(y.value()[b * 15 + i] == doctest::Approx(yb.value()[i]));
  }
}

TEST_CASE("matmul_nt equals matmul with explicit transpose") {
  tit::Rng rng(3);
  Tf a = Tf::from({3, 4}, random_vec<float>(12, rng));
  std::vector<float> bt(12);
  Tf b = Tf::from({5, 4}, random_vec<float>(20, rng));
  Tf y = tit::matmul_nt(a, b);
  // manual transpose of b
  std::vector<float> btv(20);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) btv[j * 5 + i] = b.value()[i * 4 + j];
  Tf y2 = tit::matmul(a, Tf::from({4, 5}, btv));
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.value()[i] == doctest::Approx(y2.value()[i]));
  (void)bt;
}

TEST_CASE("layer_norm collapses constant rows to bias") {
  Tf x = Tf::from({4}, {5, 5, 5, 5});
  Tf gain = Tf::from({4}, {1, 1, 1, 1});
  Tf bias = Tf::zeros({4});
  Tf y = tit::layer_norm(x, gain, bias, 1e-5f);
  for (float v : y.value()) CHECK(v == doctest::Approx(0.0f).epsilon(1e-4));
}

TEST_CASE("layer_norm unit-variance pair") {
  Tf x = Tf::from({2}, {1, -1});
  Tf gain = Tf::from({2}, {1, 1});
  Tf bias = Tf::zeros({2});
  Tf y = tit::layer_norm(x, gain, bias, 1e-8f);
  CHECK(y.value()[0] == doctest::Approx(1.0f).epsilon(1e-3));
  CHECK(y.value()[1] == doctest::Approx(-1.0f).epsilon(1e-3));
}

TEST_CASE("layer_norm standardizes before affine (recompute moments)") {
  tit::Rng rng(21);
  Td x = Td::from({8}, random_vec<double>(8, rng, 3.0));
  Td gain = Td::from({8}, std::vector<double>(8, 1.0));
  Td bias = Td::zeros({8});
  Td y = tit::layer_norm(x, gain, bias, 1e-12);
  double m = 0, v = 0;
  for (double e : y.value()) m += e;
  m /= 8;
  for (double e : y.value()) v += (e - m) * (e - m);
  v /= 8;
  CHECK(std::abs(m) < 1e-4);
  CHECK(std::abs(v - 1.0) < 1e-4);
}

TEST_CASE("layer_norm gradient composite passes finite differences") {
  tit::Rng rng(5);
  Tf x = Tf::param({3, 6}, random_vec<float>(18, rng));
  Tf gain = Tf::param({6}, random_vec<float>(6, rng, 0.5));
  Tf bias = Tf::param({6}, random_vec<float>(6, rng, 0.5));
  auto f = [&]() {
    Tf y = tit::layer_norm(x, gain, bias, 1e-5f);
    return tit::sum(tit::mul(y, y));
  };
  auto report = tit::finite_difference_check<float>(f, {{"x", x}, {"gain", gain}, {"bias", bias}},
                                                    1e-3f, 1e-2f, 1e-3f);
  CHECK(report.passed);
}

TEST_CASE("masked_softmax uniform and single-survivor rows") {
  Tf logits = Tf::from({3}, {0, 0, 0});
  Tf p = tit::masked_softmax<float>(logits, nullptr);
  for (float v : p.value()) CHECK(v == doctest::Approx(1.0f / 3));

  Tf nine = Tf::from({3}, {9, 9, 9});
  tit::Mask m{{3}, {1, 0, 0}};
  Tf q = tit::masked_softmax(nine, &m);
  CHECK(q.value()[0] == doctest::Approx(1.0f));
  CHECK(q.value()[1] == 0.0f);
  CHECK(q.value()[2] == 0.0f);
}

TEST_CASE("masked_softmax is stable for extreme logits") {
  Tf logits = Tf::from({2}, {1000, 0});
  Tf p = tit::masked_softmax<float>(logits, nullptr);
  // exact softmax at high precision: e^1000/(e^1000 + 1) == 1/(1 + e^-1000)
  long double exact0 = 1.0L / (1.0L + std::exp(-1000.0L));
  CHECK(p.value()[0] == doctest::Approx(static_cast<double>(exact0)));
  CHECK(p.value()[1] == doctest::Approx(static_cast<double>(1.0L - exact0)));
  CHECK(std::isfinite(p.value()[0]));
}

TEST_CASE("masked_softmax rejects fully masked rows") {
  Tf logits = Tf::from({3}, {1, 2, 3});
  tit::Mask m{{3}, {0, 0, 0}};
  CHECK_THROWS_AS(tit::masked_softmax(logits, &m), tit::ShapeError);
}

TEST_CASE("softmax rows are probability distributions (randomized)") {
  tit::Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    int n = rng.randint(2, 9);
    int rows = rng.randint(1, 4);
    Tf logits = Tf::from({rows, n}, random_vec<float>(static_cast<std::size_t>(rows) * n, rng, 4.0));
    tit::Mask m;
    m.shape = {rows, n};
    m.allow.resize(static_cast<std::size_t>(rows) * n);
    for (int r = 0; r < rows; ++r) {
      bool any = false;
      for (int j = 0; j < n; ++j) {
        m.allow[r * n + j] = rng.uniform(0, 1) < 0.7 ? 1 : 0;
        any = any || m.allow[r * n + j];
      }
      if (!any) m.allow[r * n + rng.randint(0, n - 1)] = 1;
    }
    Tf p = tit::masked_softmax(logits, &m);
    for (int r = 0; r < rows; ++r) {
      double s = 0;
      for (int j = 0; j < n; ++j) {
        float v = p.value()[r * n + j];
        CHECK(v >= 0.0f);
        if (!m.allow[r * n + j]) CHECK(v == 0.0f);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("masked_softmax gradient vs finite differences") {
  tit::Rng rng(9);
  Td logits = Td::param({2, 5}, random_vec<double>(10, rng));
  tit::Mask m{{5}, {1, 1, 0, 1, 1}};
  Td weights = Td::from({2, 5}, random_vec<double>(10, rng));
  auto f = [&]() { return tit::sum(tit::mul(tit::masked_softmax(logits, &m), weights)); };
  auto report = tit::finite_difference_check<double>(f, {{"logits", logits}}, 1e-6, 1e-6, 1e-8);
  CHECK(report.passed);
}

TEST_CASE("activations hit their landmark points") {
  Tf x = Tf::from({4}, {0, -3, 3, 10});
  Tf g = tit::activation(x, tit::ActivationKind::Gelu);
  CHECK(g.value()[0] == 0.0f);
  // gelu(10) from the Gaussian-CDF definition at high precision
  long double cdf10 = 0.5L * (1.0L + std::erf(10.0L / std::sqrt(2.0L)));
  CHECK(std::abs(g.value()[3] - static_cast<float>(10.0L * cdf10)) < 1e-4f);

  Tf r = tit::activation(x, tit::ActivationKind::Relu);
  CHECK(r.value()[1] == 0.0f);
  CHECK(r.value()[2] == 3.0f);

  CHECK_THROWS_AS(tit::activation_from_string("swish"), tit::ConfigError);
}

TEST_CASE("activation gradients pass finite differences (double)") {
  tit::Rng rng(17);
  for (auto kind : {tit::ActivationKind::Gelu, tit::ActivationKind::Relu, tit::ActivationKind::Tanh}) {
    Td x = Td::param({9}, random_vec<double>(9, rng, 0.8));
    // keep relu away from the kink
    for (auto& v : x.value())
      if (std::abs(v) < 1e-3) v += 0.01;
    auto f = [&]() { return tit::sum(tit::mul(tit::activation(x, kind), x)); };
    auto report = tit::finite_difference_check<double>(f, {{"x", x}}, 1e-6, 1e-6, 1e-8);
    CHECK(report.passed);
  }
}

TEST_CASE("dropout identities") {
  tit::Rng rng(31);
  Tf x = Tf::from({100}, random_vec<float>(100, rng));
  Tf y0 = tit::dropout(x, 0.0, true, 42);
  CHECK(y0.value() == x.value());
  Tf y1 = tit::dropout(x, 0.1, false, 42);
  CHECK(y1.value() == x.value());
}

TEST_CASE("dropout survivor scaling keeps the mean (law of large numbers)") {
  Tf x = Tf::full({10000}, 1.0f);
  Tf y = tit::dropout(x, 0.5, true, 9001);
  double s = 0;
  for (float v : y.value()) s += v;
  double mean = s / 10000.0;
  CHECK(mean > 0.95);
  CHECK(mean < 1.05);
}

TEST_CASE("dropout is deterministic under a fixed seed") {
  tit::Rng rng(77);
  Tf x = Tf::from({64}, random_vec<float>(64, rng));
  Tf a = tit::dropout(x, 0.3, true, 555);
  Tf b = tit::dropout(x, 0.3, true, 555);
  CHECK(a.value() == b.value());
}

TEST_CASE("backward: quadratic rule and constant loss") {
  Tf x = Tf::param({3}, {1, 2, 3});
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    Tf loss = tit::sum(tit::mul(x, x));
    tape.backward(loss);
  }
  CHECK(x.grad() == std::vector<float>{2, 4, 6});

  Tf y = Tf::param({3}, {1, 2, 3});
  Tape<float> tape2;
  {
    TapeScope<float> scope(tape2);
    Tf loss = Tf::scalar_of(5.0f);
    loss.set_requires_grad(true);
    tape2.backward(loss);
  }
  CHECK_FALSE(y.has_grad());
}

TEST_CASE("backward rejects non-scalar losses") {
  Tf x = Tf::param({2}, {1, 2});
  Tape<float> tape;
  TapeScope<float> scope(tape);
  Tf y = tit::mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), tit::ShapeError);
}

TEST_CASE("gradients accumulate across parameter reuse") {
  Tf x = Tf::param({2}, {3, 4});
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    Tf loss = tit::add(tit::sum(tit::mul(x, x)), tit::sum(x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(7.0f));  // 2*3 + 1
  CHECK(x.grad()[1] == doctest::Approx(9.0f));
}

TEST_CASE("finite_difference_check on the identity sum is exact") {
  // Small integers and a power-of-two step keep every float exact, so the
  // reported error is literally zero.
  Tf x = Tf::param({5}, {1, 2, 3, 4, 5});
  auto f = [&]() { return tit::sum(x); };
  auto report = tit::finite_difference_check<float>(f, {{"x", x}}, 0.5f, 1e-4f, 1e-3f);
  CHECK(report.passed);
  CHECK(report.max_rel_err == 0.0f);
}

TEST_CASE("overflow is an error, not a silent inf") {
  Tf x = Tf::from({1}, {1000.0f});
  CHECK_THROWS_AS(tit::exp(x), tit::NumericError);
}

TEST_CASE("elementwise helpers: minimum, clamp, gather, sum_last") {
  Td a = Td::param({4}, {1, 5, -2, 7});
  Td b = Td::param({4}, {2, 4, -3, 7});
  Td mn = tit::minimum(a, b);
  CHECK(mn.value() == std::vector<double>{1, 4, -3, 7});

  Td c = tit::clamp(a, -1.0, 5.0);
  CHECK(c.value() == std::vector<double>{1, 5, -1, 5});

  Td m = Td::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Td g = tit::gather_last(m, {2, 0});
  CHECK(g.value() == std::vector<double>{3, 4});
  Td s = tit::sum_last(m);
  CHECK(s.value() == std::vector<double>{6, 15});
}

TEST_CASE("minimum/clamp gradients route to the active branch") {
  tit::Rng rng(41);
  Td a = Td::param({6}, random_vec<double>(6, rng));
  Td b = Td::param({6}, random_vec<double>(6, rng));
  auto f = [&]() { return tit::sum(tit::minimum(a, b)); };
  auto report = tit::finite_difference_check<double>(f, {{"a", a}, {"b", b}}, 1e-6, 1e-6, 1e-8);
  CHECK(report.passed);
}

TEST_CASE("log_softmax gradient vs finite differences") {
  tit::Rng rng(43);
  Td x = Td::param({3, 4}, random_vec<double>(12, rng));
  Td w = Td::from({3, 4}, random_vec<double>(12, rng));
  auto f = [&]() { return tit::sum(tit::mul(tit::log_softmax(x), w)); };
  auto report = tit::finite_difference_check<double>(f, {{"x", x}}, 1e-6, 1e-6, 1e-8);
  CHECK(report.passed);
}

TEST_CASE("structural ops gradients: slice/concat/take/stack/reshape") {
  tit::Rng rng(47);
  Td x = Td::param({2, 3, 4}, random_vec<double>(24, rng));
  Td w = Td::from({2, 3, 2}, random_vec<double>(12, rng));
  auto f = [&]() {
    Td a = tit::slice_last(x, 0, 2);
    Td b = tit::slice_last(x, 2, 4);
    Td cat = tit::concat_last<double>({a, b});
    Td row = tit::take_row(cat, 1);                      // [2, 4]
    Td st = tit::stack_rows<double>({row, row});          // [2, 2, 4]
    Td rs = tit::reshape(st, {4, 4});
    return tit::add(tit::sum(tit::mul(a, w)), tit::sum(rs));
  };
  auto report = tit::finite_difference_check<double>(f, {{"x", x}}, 1e-6, 1e-6, 1e-8);
  CHECK(report.passed);
}

TEST_CASE("determinism: identical seeds give bit-identical forward results") {
  auto run = [](std::uint64_t seed) {
    tit::Rng rng(seed);
    Tf x = Tf::from({4, 4}, rng.normal_vec<float>(16, 0, 1));
    Tf w = Tf::from({4, 4}, rng.normal_vec<float>(16, 0, 1));
    Tf y = tit::dropout(tit::activation(tit::matmul(x, w), tit::ActivationKind::Gelu), 0.25, true,
                        seed ^ 0x9e3779b9);
    return y.value();
  };
  CHECK(run(2024) == run(2024));
}
