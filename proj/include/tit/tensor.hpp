#pragma once

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// Scalar type is a template parameter: float for training, double for the
// finite-difference oracles in the test suite.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tit {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Overflow / NaN surfaced as an error instead of propagating silently.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class Real>
struct TensorData {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated on first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Shared handle to one tensor node. Copies alias the same storage.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s) {
    return make(std::move(s), {}, false);
  }
  static Tensor full(Shape s, Real v) {
    std::size_t n = shape_numel(s);
    Tensor t = make(std::move(s), std::vector<Real>(n, v), false);
    return t;
  }
  static Tensor from(Shape s, std::vector<Real> v) {
    return make(std::move(s), std::move(v), false);
  }
  static Tensor param(Shape s, std::vector<Real> v) {
    return make(std::move(s), std::move(v), true);
  }
  static Tensor scalar_of(Real v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const {
    if (i < 0) i += ndim();
    return d_->shape[static_cast<std::size_t>(i)];
  }
  std::size_t numel() const { return d_->value.size(); }

  std::vector<Real>& value() { return d_->value; }
  const std::vector<Real>& value() const { return d_->value; }
  std::vector<Real>& grad() {
    d_->ensure_grad();
    return d_->grad;
  }
  bool has_grad() const { return !d_->grad.empty(); }
  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), Real(0));
  }

  Real item() const {
    if (numel() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return d_->value[0];
  }

  TensorData<Real>* node() const { return d_.get(); }
  std::shared_ptr<TensorData<Real>> ptr() const { return d_; }

 private:
  static Tensor make(Shape s, std::vector<Real> v, bool rg) {
    std::size_t n = shape_numel(s);
    if (v.empty()) v.assign(n, Real(0));
    if (v.size() != n)
      throw ShapeError("tensor data length " + std::to_string(v.size()) +
                       " does not match shape " + shape_str(s));
    Tensor t;
    t.d_ = std::make_shared<TensorData<Real>>();
    t.d_->shape = std::move(s);
    t.d_->value = std::move(v);
    t.d_->requires_grad = rg;
    return t;
  }

  std::shared_ptr<TensorData<Real>> d_;
};

// Execution-ordered record of backward closures. Ops append themselves while
// an active tape is in scope; backward() replays in reverse, so every node is
// visited exactly once and inputs are always recorded before consumers.
template <class Real>
class Tape {
 public:
  static Tape*& active() {
    thread_local Tape* t = nullptr;
    return t;
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void backward(Tensor<Real> loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.grad()[0] += Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

template <class Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& t) : prev_(Tape<Real>::active()) { Tape<Real>::active() = &t; }
  ~TapeScope() { Tape<Real>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* prev_;
};

namespace detail {

template <class Real>
inline void check_finite(const char* op, const std::vector<Real>& v) {
  for (Real x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + ": non-finite value produced (overflow or NaN)");
  }
}

template <class Real>
inline bool track(const Tensor<Real>& a) {
  return Tape<Real>::active() != nullptr && a.requires_grad();
}

template <class Real>
inline Tensor<Real> result(Shape s, std::vector<Real> v, bool rg, const char* op) {
  check_finite(op, v);
  Tensor<Real> t = Tensor<Real>::from(std::move(s), std::move(v));
  t.set_requires_grad(rg && Tape<Real>::active() != nullptr);
  return t;
}

// C[m,n] (+)= A[m,k] * B[k,n]
template <class Real>
inline void gemm_nn(int m, int n, int k, const Real* A, const Real* B, Real* C, bool acc) {
  if (!acc) std::fill(C, C + static_cast<std::size_t>(m) * n, Real(0));
  for (int i = 0; i < m; ++i) {
    Real* c = C + static_cast<std::size_t>(i) * n;
    const Real* a = A + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      Real av = a[p];
      if (av == Real(0)) continue;
      const Real* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// As gemm_nn but with a double accumulator, so the result is insensitive to
// summand order at float32 output precision (needed for the exact
// permutation-equivariance guarantees on attention).
template <class Real>
inline void gemm_nn_acc64(int m, int n, int k, const Real* A, const Real* B, Real* C) {
  std::vector<double> acc(static_cast<std::size_t>(n));
  for (int i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const Real* a = A + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = static_cast<double>(a[p]);
      const Real* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) acc[j] += av * static_cast<double>(b[j]);
    }
    Real* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) c[j] = static_cast<Real>(acc[j]);
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <class Real>
inline void gemm_nt(int m, int n, int k, const Real* A, const Real* B, Real* C, bool acc) {
  for (int i = 0; i < m; ++i) {
    const Real* a = A + static_cast<std::size_t>(i) * k;
    Real* c = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const Real* b = B + static_cast<std::size_t>(j) * k;
      Real s = 0;
      for (int p = 0; p < k; ++p) s += a[p] * b[p];
      c[j] = acc ? c[j] + s : s;
    }
  }
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
template <class Real>
inline void gemm_tn(int m, int n, int k, const Real* A, const Real* B, Real* C, bool acc) {
  if (!acc) std::fill(C, C + static_cast<std::size_t>(k) * n, Real(0));
  for (int i = 0; i < m; ++i) {
    const Real* a = A + static_cast<std::size_t>(i) * k;
    const Real* b = B + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      Real av = a[p];
      if (av == Real(0)) continue;
      Real* c = C + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// Suffix-broadcast: b's shape must equal the trailing dims of a's shape
// (or be scalar). Returns how many times b tiles over a.
template <class Real>
inline std::size_t suffix_repeats(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (b.numel() == 1) return a.numel();
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size())
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " over " + shape_str(sa));
  std::size_t off = sa.size() - sb.size();
  for (std::size_t i = 0; i < sb.size(); ++i)
    if (sa[off + i] != sb[i])
      throw ShapeError(std::string(op) + ": shape " + shape_str(sb) + " is not a suffix of " + shape_str(sa));
  return a.numel() / b.numel();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops. Each returns a fresh tensor; when an active tape exists and any
// input requires grad, a backward closure is recorded.
// ---------------------------------------------------------------------------

// a [m,k] x b [k,n]; batched forms [B,m,k]x[k,n] (shared weight, grads summed
// over the batch) and [B,m,k]x[B,k,n]. With stable_acc the forward contraction
// accumulates in double, making the value independent of summand order.
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool stable_acc = false) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  int batch = 1;
  int m, k, n;
  bool a_batched = false, b_batched = false;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0]; k = sa[1]; n = sb[1];
    if (sb[0] != k)
      throw ShapeError("matmul: inner dimensions disagree: " + shape_str(sa) + " vs " + shape_str(sb));
  } else if (sa.size() == 3 && sb.size() == 2) {
    batch = sa[0]; m = sa[1]; k = sa[2]; n = sb[1];
    a_batched = true;
    if (sb[0] != k)
      throw ShapeError("matmul: inner dimensions disagree: " + shape_str(sa) + " vs " + shape_str(sb));
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0]; m = sa[1]; k = sa[2]; n = sb[2];
    a_batched = b_batched = true;
    if (sb[0] != batch || sb[1] != k)
      throw ShapeError("matmul: inner dimensions disagree: " + shape_str(sa) + " vs " + shape_str(sb));
  } else {
    throw ShapeError("matmul: unsupported ranks " + shape_str(sa) + " vs " + shape_str(sb));
  }

  Shape so = a_batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<Real> out(static_cast<std::size_t>(batch) * m * n);
  const std::size_t a_str = static_cast<std::size_t>(m) * k;
  const std::size_t b_str = b_batched ? static_cast<std::size_t>(k) * n : 0;
  const std::size_t o_str = static_cast<std::size_t>(m) * n;
  for (int bi = 0; bi < batch; ++bi) {
    if (stable_acc)
      detail::gemm_nn_acc64(m, n, k, a.value().data() + bi * a_str, b.value().data() + bi * b_str,
                            out.data() + bi * o_str);
    else
      detail::gemm_nn(m, n, k, a.value().data() + bi * a_str, b.value().data() + bi * b_str,
                      out.data() + bi * o_str, false);
  }

  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), rg, "matmul");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py, batch, m, k, n, a_str, b_str, o_str]() {
      py->ensure_grad();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int bi = 0; bi < batch; ++bi)
          detail::gemm_nt(m, k, n, py->grad.data() + bi * o_str, pb->value.data() + bi * b_str,
                          pa->grad.data() + bi * a_str, true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int bi = 0; bi < batch; ++bi)
          detail::gemm_tn(m, n, k, pa->value.data() + bi * a_str, py->grad.data() + bi * o_str,
                          pb->grad.data() + bi * b_str, true);
      }
    });
  }
  return y;
}

// a [.., m, k] x b [.., n, k]^T -> [.., m, n]; both 2-d, or both batched 3-d.
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  int batch = 1, m, k, n;
  bool batched = false;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0]; k = sa[1]; n = sb[0];
    if (sb[1] != k)
      throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(sa) + " vs " + shape_str(sb));
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0]; m = sa[1]; k = sa[2]; n = sb[1];
    batched = true;
    if (sb[0] != batch || sb[2] != k)
      throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(sa) + " vs " + shape_str(sb));
  } else {
    throw ShapeError("matmul_nt: unsupported ranks " + shape_str(sa) + " vs " + shape_str(sb));
  }

  Shape so = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<Real> out(static_cast<std::size_t>(batch) * m * n);
  const std::size_t a_str = static_cast<std::size_t>(m) * k;
  const std::size_t b_str = static_cast<std::size_t>(n) * k;
  const std::size_t o_str = static_cast<std::size_t>(m) * n;
  for (int bi = 0; bi < batch; ++bi)
    detail::gemm_nt(m, n, k, a.value().data() + bi * a_str, b.value().data() + bi * b_str,
                    out.data() + bi * o_str, false);

  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), rg, "matmul_nt");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py, batch, m, k, n, a_str, b_str, o_str]() {
      py->ensure_grad();
      // y = a b^T:  da = dy b,  db = dy^T a
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int bi = 0; bi < batch; ++bi)
          detail::gemm_nn(m, k, n, py->grad.data() + bi * o_str, pb->value.data() + bi * b_str,
                          pa->grad.data() + bi * a_str, true);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        // db[n,k] = dy^T a: contract over the m rows
        for (int bi = 0; bi < batch; ++bi)
          detail::gemm_tn(m, k, n, py->grad.data() + bi * o_str, pa->value.data() + bi * a_str,
                          pb->grad.data() + bi * b_str, true);
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  std::size_t reps = detail::suffix_repeats(a, b, "add");
  std::size_t nb = b.numel();
  std::vector<Real> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  if (nb == 1) {
    Real c = bv[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  } else {
    for (std::size_t r = 0, i = 0; r < reps; ++r)
      for (std::size_t j = 0; j < nb; ++j, ++i) out[i] = av[i] + bv[j];
  }
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), rg, "add");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py, reps, nb]() {
      py->ensure_grad();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        if (nb == 1) {
          Real s = 0;
          for (Real g : py->grad) s += g;
          pb->grad[0] += s;
        } else {
          for (std::size_t r = 0, i = 0; r < reps; ++r)
            for (std::size_t j = 0; j < nb; ++j, ++i) pb->grad[j] += py->grad[i];
        }
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  std::size_t reps = detail::suffix_repeats(a, b, "sub");
  std::size_t nb = b.numel();
  std::vector<Real> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t r = 0, i = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j, ++i) out[i] = av[i] - bv[j];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), rg, "sub");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py, reps, nb]() {
      py->ensure_grad();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        if (nb == 1) {
          Real s = 0;
          for (Real g : py->grad) s += g;
          pb->grad[0] -= s;
        } else {
          for (std::size_t r = 0, i = 0; r < reps; ++r)
            for (std::size_t j = 0; j < nb; ++j, ++i) pb->grad[j] -= py->grad[i];
        }
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  std::size_t reps = detail::suffix_repeats(a, b, "mul");
  std::size_t nb = b.numel();
  std::vector<Real> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  if (nb == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[0];
  } else {
    for (std::size_t r = 0, i = 0; r < reps; ++r)
      for (std::size_t j = 0; j < nb; ++j, ++i) out[i] = av[i] * bv[j];
  }
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), rg, "mul");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py, reps, nb]() {
      py->ensure_grad();
      if (pa->requires_grad) {
        pa->ensure_grad();
        if (nb == 1) {
          for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i] * pb->value[0];
        } else {
          for (std::size_t r = 0, i = 0; r < reps; ++r)
            for (std::size_t j = 0; j < nb; ++j, ++i) pa->grad[i] += py->grad[i] * pb->value[j];
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        if (nb == 1) {
          Real s = 0;
          for (std::size_t i = 0; i < py->grad.size(); ++i) s += py->grad[i] * pa->value[i];
          pb->grad[0] += s;
        } else {
          for (std::size_t r = 0, i = 0; r < reps; ++r)
            for (std::size_t j = 0; j < nb; ++j, ++i) pb->grad[j] += py->grad[i] * pa->value[i];
        }
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> divide(const Tensor<Real>& a, const Tensor<Real>& b) {
  std::size_t reps = detail::suffix_repeats(a, b, "divide");
  std::size_t nb = b.numel();
  std::vector<Real> out(a.numel());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t r = 0, i = 0; r < reps; ++r)
    for (std::size_t j = 0; j < nb; ++j, ++i) out[i] = av[i] / bv[nb == 1 ? 0 : j];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), rg, "divide");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py, reps, nb]() {
      py->ensure_grad();
      for (std::size_t r = 0, i = 0; r < reps; ++r)
        for (std::size_t j = 0; j < nb; ++j, ++i) {
          Real bj = pb->value[nb == 1 ? 0 : j];
          if (pa->requires_grad) {
            pa->ensure_grad();
            pa->grad[i] += py->grad[i] / bj;
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad[nb == 1 ? 0 : j] -= py->grad[i] * pa->value[i] / (bj * bj);
          }
        }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), a.requires_grad(), "scale");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, py, c]() {
      py->ensure_grad();
      pa->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i] * c;
    });
  }
  return y;
}

template <class Real>
Tensor<Real> add_const(const Tensor<Real>& a, Real c) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), a.requires_grad(), "add_const");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, py]() {
      py->ensure_grad();
      pa->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  return scale(a, Real(-1));
}

template <class Real>
Tensor<Real> exp(const Tensor<Real>& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.value()[i]);
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), a.requires_grad(), "exp");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, py]() {
      py->ensure_grad();
      pa->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i] * py->value[i];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> log(const Tensor<Real>& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), a.requires_grad(), "log");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, py]() {
      py->ensure_grad();
      pa->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) pa->grad[i] += py->grad[i] / pa->value[i];
    });
  }
  return y;
}

enum class ActivationKind { Gelu, Relu, Tanh };

inline ActivationKind activation_from_string(const std::string& s) {
  if (s == "gelu") return ActivationKind::Gelu;
  if (s == "relu") return ActivationKind::Relu;
  if (s == "tanh") return ActivationKind::Tanh;
  throw ConfigError("unknown activation kind: '" + s + "' (expected gelu|relu|tanh)");
}

inline const char* activation_to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Gelu: return "gelu";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Tanh: return "tanh";
  }
  return "?";
}

// gelu uses the exact Gaussian-CDF form.
template <class Real>
Tensor<Real> activation(const Tensor<Real>& a, ActivationKind kind) {
  constexpr Real inv_sqrt2 = Real(0.70710678118654752440L);
  constexpr Real inv_sqrt2pi = Real(0.39894228040143267794L);
  std::vector<Real> out(a.numel());
  const auto& av = a.value();
  switch (kind) {
    case ActivationKind::Gelu:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = av[i] * Real(0.5) * (Real(1) + std::erf(av[i] * inv_sqrt2));
      break;
    case ActivationKind::Relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > Real(0) ? av[i] : Real(0);
      break;
    case ActivationKind::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
      break;
  }
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), a.requires_grad(), "activation");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, py, kind, inv_sqrt2, inv_sqrt2pi]() {
      py->ensure_grad();
      pa->ensure_grad();
      switch (kind) {
        case ActivationKind::Gelu:
          for (std::size_t i = 0; i < py->grad.size(); ++i) {
            Real x = pa->value[i];
            Real cdf = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2));
            Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
            pa->grad[i] += py->grad[i] * (cdf + x * pdf);
          }
          break;
        case ActivationKind::Relu:
          for (std::size_t i = 0; i < py->grad.size(); ++i)
            if (pa->value[i] > Real(0)) pa->grad[i] += py->grad[i];
          break;
        case ActivationKind::Tanh:
          for (std::size_t i = 0; i < py->grad.size(); ++i)
            pa->grad[i] += py->grad[i] * (Real(1) - py->value[i] * py->value[i]);
          break;
      }
    });
  }
  return y;
}

// Standardize over the last axis, then affine gain/bias (both shape [d]).
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
  int d = x.dim(-1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw ShapeError("layer_norm: gain/bias must be [d]=" + std::to_string(d) + ", got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  if (!(eps > Real(0))) throw ConfigError("layer_norm: eps must be positive");
  std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  std::vector<Real> out(x.numel());
  std::vector<Real> inv_std(rows), mean(rows);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data() + r * d;
    Real mu = 0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= Real(d);
    Real var = 0;
    for (int j = 0; j < d; ++j) {
      Real c = row[j] - mu;
      var += c * c;
    }
    var /= Real(d);
    Real is = Real(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    Real* o = out.data() + r * d;
    for (int j = 0; j < d; ++j) o[j] = gv[j] * ((row[j] - mu) * is) + bv[j];
  }
  bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor<Real> y = detail::result<Real>(x.shape(), std::move(out), rg, "layer_norm");
  if (detail::track(y)) {
    auto px = x.ptr(); auto pg = gain.ptr(); auto pb = bias.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, pg, pb, py, d, rows, mean, inv_std]() {
      py->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* xr = px->value.data() + r * d;
        const Real* dy = py->grad.data() + r * d;
        Real mu = mean[r], is = inv_std[r];
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (int j = 0; j < d; ++j) pg->grad[j] += dy[j] * (xr[j] - mu) * is;
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int j = 0; j < d; ++j) pb->grad[j] += dy[j];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          // dx = is * (g.dy - mean(g.dy) - xhat * mean(g.dy.xhat))
          Real s1 = 0, s2 = 0;
          for (int j = 0; j < d; ++j) {
            Real gdy = pg->value[j] * dy[j];
            Real xh = (xr[j] - mu) * is;
            s1 += gdy;
            s2 += gdy * xh;
          }
          s1 /= Real(d);
          s2 /= Real(d);
          Real* dx = px->grad.data() + r * d;
          for (int j = 0; j < d; ++j) {
            Real gdy = pg->value[j] * dy[j];
            Real xh = (xr[j] - mu) * is;
            dx[j] += is * (gdy - s1 - xh * s2);
          }
        }
      }
    });
  }
  return y;
}

// Boolean mask with the same suffix-broadcast rule as add(); true = permitted.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> allow;

  static Mask ones(Shape s) {
    std::size_t n = shape_numel(s);
    return Mask{std::move(s), std::vector<std::uint8_t>(n, 1)};
  }
};

// Row-wise softmax over the last axis; masked entries get exactly zero
// probability. A row with no permitted entry is an error.
template <class Real>
Tensor<Real> masked_softmax(const Tensor<Real>& logits, const Mask* mask) {
  int n = logits.dim(-1);
  std::size_t rows = logits.numel() / static_cast<std::size_t>(n);
  std::size_t mask_n = 0;
  if (mask) {
    if (mask->shape.empty() || mask->shape.back() != n)
      throw ShapeError("masked_softmax: mask last dim must be " + std::to_string(n) + ", got " +
                       shape_str(mask->shape));
    mask_n = mask->allow.size();
    if (logits.numel() % mask_n != 0)
      throw ShapeError("masked_softmax: mask shape " + shape_str(mask->shape) +
                       " does not tile logits " + shape_str(logits.shape()));
  }
  std::vector<Real> out(logits.numel());
  const auto& lv = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = lv.data() + r * n;
    const std::uint8_t* mrow = mask ? mask->allow.data() + (r * n) % mask_n : nullptr;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (int j = 0; j < n; ++j)
      if (!mrow || mrow[j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<Real>::infinity())
      throw ShapeError("masked_softmax: fully masked row (empty attention context)");
    Real* o = out.data() + r * n;
    double s = 0;  // double accumulator: row sums must not depend on key order
    for (int j = 0; j < n; ++j) {
      if (!mrow || mrow[j]) {
        o[j] = std::exp(row[j] - mx);
        s += static_cast<double>(o[j]);
      } else {
        o[j] = Real(0);
      }
    }
    Real inv = static_cast<Real>(1.0 / s);
    for (int j = 0; j < n; ++j) o[j] *= inv;
  }
  Tensor<Real> y = detail::result<Real>(logits.shape(), std::move(out), logits.requires_grad(),
                                        "masked_softmax");
  if (detail::track(y)) {
    auto pl = logits.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pl, py, n, rows]() {
      py->ensure_grad();
      pl->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* p = py->value.data() + r * n;
        const Real* dy = py->grad.data() + r * n;
        Real dot = 0;
        for (int j = 0; j < n; ++j) dot += dy[j] * p[j];
        Real* dx = pl->grad.data() + r * n;
        for (int j = 0; j < n; ++j) dx[j] += p[j] * (dy[j] - dot);
      }
    });
  }
  return y;
}

// Numerically stable log-softmax over the last axis (no mask).
template <class Real>
Tensor<Real> log_softmax(const Tensor<Real>& logits) {
  int n = logits.dim(-1);
  std::size_t rows = logits.numel() / static_cast<std::size_t>(n);
  std::vector<Real> out(logits.numel());
  const auto& lv = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = lv.data() + r * n;
    Real mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    Real s = 0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    Real lse = mx + std::log(s);
    Real* o = out.data() + r * n;
    for (int j = 0; j < n; ++j) o[j] = row[j] - lse;
  }
  Tensor<Real> y = detail::result<Real>(logits.shape(), std::move(out), logits.requires_grad(),
                                        "log_softmax");
  if (detail::track(y)) {
    auto pl = logits.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pl, py, n, rows]() {
      py->ensure_grad();
      pl->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* lp = py->value.data() + r * n;
        const Real* dy = py->grad.data() + r * n;
        Real s = 0;
        for (int j = 0; j < n; ++j) s += dy[j];
        Real* dx = pl->grad.data() + r * n;
        for (int j = 0; j < n; ++j) dx[j] += dy[j] - std::exp(lp[j]) * s;
      }
    });
  }
  return y;
}

// Inverted dropout; identity when not training or rate == 0. Deterministic
// for a given seed.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Real keep_scale = Real(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.numel());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = unif(rng) < rate ? Real(0) : keep_scale;
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  Tensor<Real> y = detail::result<Real>(x.shape(), std::move(out), x.requires_grad(), "dropout");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    auto pm = std::make_shared<std::vector<Real>>(std::move(mask));
    Tape<Real>::active()->record([px, py, pm]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) px->grad[i] += py->grad[i] * (*pm)[i];
    });
  }
  return y;
}

// y[..., j] = x[..., from + j], j in [0, to-from)
template <class Real>
Tensor<Real> slice_last(const Tensor<Real>& x, int from, int to) {
  int n = x.dim(-1);
  if (from < 0 || to > n || from >= to)
    throw ShapeError("slice_last: invalid range [" + std::to_string(from) + "," + std::to_string(to) +
                     ") for last dim " + std::to_string(n));
  int w = to - from;
  std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  Shape so = x.shape();
  so.back() = w;
  std::vector<Real> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().data() + r * n + from, w, out.data() + r * w);
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), x.requires_grad(), "slice_last");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py, rows, n, w, from]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < w; ++j) px->grad[r * n + from + j] += py->grad[r * w + j];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> concat_last(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no parts");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    Shape l = p.shape();
    int w = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_last: leading dims disagree");
    total += w;
    rg = rg || p.requires_grad();
  }
  std::size_t rows = 1;
  for (int d : lead) rows *= static_cast<std::size_t>(d);
  Shape so = lead;
  so.push_back(total);
  std::vector<Real> out(rows * total);
  int off = 0;
  for (const auto& p : parts) {
    int w = p.dim(-1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.value().data() + r * w, w, out.data() + r * total + off);
    off += w;
  }
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), rg, "concat_last");
  if (detail::track(y)) {
    std::vector<std::shared_ptr<TensorData<Real>>> ps;
    for (const auto& p : parts) ps.push_back(p.ptr());
    auto py = y.ptr();
    Tape<Real>::active()->record([ps, py, rows, total]() {
      py->ensure_grad();
      int off = 0;
      for (auto& p : ps) {
        int w = p->shape.back();
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j) p->grad[r * w + j] += py->grad[r * total + off + j];
        }
        off += w;
      }
    });
  }
  return y;
}

// Select index along the second-to-last axis: [.., n, d] -> [.., d].
template <class Real>
Tensor<Real> take_row(const Tensor<Real>& x, int index) {
  if (x.ndim() < 2) throw ShapeError("take_row: needs rank >= 2, got " + shape_str(x.shape()));
  int n = x.dim(-2);
  int d = x.dim(-1);
  if (index < 0 || index >= n)
    throw ShapeError("take_row: index " + std::to_string(index) + " out of range for dim " +
                     std::to_string(n));
  std::size_t groups = x.numel() / (static_cast<std::size_t>(n) * d);
  Shape so(x.shape().begin(), x.shape().end() - 2);
  so.push_back(d);
  std::vector<Real> out(groups * d);
  for (std::size_t g = 0; g < groups; ++g)
    std::copy_n(x.value().data() + (g * n + index) * d, d, out.data() + g * d);
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), x.requires_grad(), "take_row");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py, groups, n, d, index]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t g = 0; g < groups; ++g)
        for (int j = 0; j < d; ++j) px->grad[(g * n + index) * d + j] += py->grad[g * d + j];
    });
  }
  return y;
}

// Stack P same-shape tensors [.., d] into [.., P, d].
template <class Real>
Tensor<Real> stack_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no parts");
  const Shape& s0 = parts[0].shape();
  bool rg = false;
  for (const auto& p : parts) {
    if (p.shape() != s0) throw ShapeError("stack_rows: shapes disagree");
    rg = rg || p.requires_grad();
  }
  int d = s0.back();
  std::size_t groups = parts[0].numel() / static_cast<std::size_t>(d);
  int P = static_cast<int>(parts.size());
  Shape so(s0.begin(), s0.end() - 1);
  so.push_back(P);
  so.push_back(d);
  std::vector<Real> out(parts[0].numel() * P);
  for (std::size_t g = 0; g < groups; ++g)
    for (int p = 0; p < P; ++p)
      std::copy_n(parts[p].value().data() + g * d, d, out.data() + (g * P + p) * d);
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), rg, "stack_rows");
  if (detail::track(y)) {
    std::vector<std::shared_ptr<TensorData<Real>>> ps;
    for (const auto& p : parts) ps.push_back(p.ptr());
    auto py = y.ptr();
    Tape<Real>::active()->record([ps, py, groups, d]() {
      py->ensure_grad();
      int P = static_cast<int>(ps.size());
      for (int p = 0; p < P; ++p) {
        if (!ps[p]->requires_grad) continue;
        ps[p]->ensure_grad();
        for (std::size_t g = 0; g < groups; ++g)
          for (int j = 0; j < d; ++j) ps[p]->grad[g * d + j] += py->grad[(g * P + p) * d + j];
      }
    });
  }
  return y;
}

// Prepend one shared row along the second-to-last axis:
// [.., n, d] + row [d] -> [.., n+1, d]. The row's gradient sums over groups.
template <class Real>
Tensor<Real> prepend_row(const Tensor<Real>& x, const Tensor<Real>& row) {
  if (x.ndim() < 2) throw ShapeError("prepend_row: needs rank >= 2, got " + shape_str(x.shape()));
  int n = x.dim(-2);
  int d = x.dim(-1);
  if (row.ndim() != 1 || row.dim(0) != d)
    throw ShapeError("prepend_row: row must be [d]=" + std::to_string(d) + ", got " +
                     shape_str(row.shape()));
  std::size_t groups = x.numel() / (static_cast<std::size_t>(n) * d);
  Shape so = x.shape();
  so[so.size() - 2] = n + 1;
  std::vector<Real> out(groups * (n + 1) * d);
  for (std::size_t g = 0; g < groups; ++g) {
    Real* dst = out.data() + g * (n + 1) * d;
    std::copy_n(row.value().data(), d, dst);
    std::copy_n(x.value().data() + g * n * d, static_cast<std::size_t>(n) * d, dst + d);
  }
  bool rg = x.requires_grad() || row.requires_grad();
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), rg, "prepend_row");
  if (detail::track(y)) {
    auto px = x.ptr(); auto pr = row.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, pr, py, groups, n, d]() {
      py->ensure_grad();
      for (std::size_t g = 0; g < groups; ++g) {
        const Real* dy = py->grad.data() + g * (n + 1) * d;
        if (pr->requires_grad) {
          pr->ensure_grad();
          for (int j = 0; j < d; ++j) pr->grad[j] += dy[j];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          Real* dx = px->grad.data() + g * n * d;
          for (std::size_t i = 0; i < static_cast<std::size_t>(n) * d; ++i) dx[i] += dy[d + i];
        }
      }
    });
  }
  return y;
}

// Embedding lookup: rows of table [v, d] selected by ids -> [M, d].
template <class Real>
Tensor<Real> take_rows(const Tensor<Real>& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw ShapeError("take_rows: table must be rank 2");
  int v = table.dim(0);
  int d = table.dim(1);
  std::vector<Real> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw ShapeError("take_rows: id " + std::to_string(ids[i]) + " out of range " + std::to_string(v));
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Tensor<Real> y = detail::result<Real>({static_cast<int>(ids.size()), d}, std::move(out),
                                        table.requires_grad(), "take_rows");
  if (detail::track(y)) {
    auto pt = table.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pt, py, ids, d]() {
      py->ensure_grad();
      pt->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          pt->grad[static_cast<std::size_t>(ids[i]) * d + j] += py->grad[i * d + j];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape s) {
  if (shape_numel(s) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
  Tensor<Real> y = detail::result<Real>(std::move(s), x.value(), x.requires_grad(), "reshape");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) px->grad[i] += py->grad[i];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real s = 0;
  for (Real v : x.value()) s += v;
  Tensor<Real> y = detail::result<Real>({1}, {s}, x.requires_grad(), "sum");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py]() {
      py->ensure_grad();
      px->ensure_grad();
      Real g = py->grad[0];
      for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
    });
  }
  return y;
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / Real(x.numel()));
}

// Reduce the last axis: [.., n] -> [..] (scalar tensors become shape [1]).
template <class Real>
Tensor<Real> sum_last(const Tensor<Real>& x) {
  int n = x.dim(-1);
  std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  Shape so(x.shape().begin(), x.shape().end() - 1);
  if (so.empty()) so.push_back(1);
  std::vector<Real> out(rows, Real(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = x.value().data() + r * n;
    Real s = 0;
    for (int j = 0; j < n; ++j) s += row[j];
    out[r] = s;
  }
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), x.requires_grad(), "sum_last");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py, rows, n]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < n; ++j) px->grad[r * n + j] += py->grad[r];
    });
  }
  return y;
}

// Pick one entry per row of the last axis: x [.., n], idx length = rows.
template <class Real>
Tensor<Real> gather_last(const Tensor<Real>& x, const std::vector<int>& idx) {
  int n = x.dim(-1);
  std::size_t rows = x.numel() / static_cast<std::size_t>(n);
  if (idx.size() != rows)
    throw ShapeError("gather_last: got " + std::to_string(idx.size()) + " indices for " +
                     std::to_string(rows) + " rows");
  Shape so(x.shape().begin(), x.shape().end() - 1);
  if (so.empty()) so.push_back(1);
  std::vector<Real> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] < 0 || idx[r] >= n)
      throw ShapeError("gather_last: index " + std::to_string(idx[r]) + " out of range " +
                       std::to_string(n));
    out[r] = x.value()[r * n + idx[r]];
  }
  Tensor<Real> y = detail::result<Real>(std::move(so), std::move(out), x.requires_grad(), "gather_last");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py, idx, rows, n]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) px->grad[r * n + idx[r]] += py->grad[r];
    });
  }
  return y;
}

// Elementwise min; gradient follows the smaller operand (ties go to a).
template <class Real>
Tensor<Real> minimum(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("minimum: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(a.value()[i], b.value()[i]);
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Real> y = detail::result<Real>(a.shape(), std::move(out), rg, "minimum");
  if (detail::track(y)) {
    auto pa = a.ptr(); auto pb = b.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([pa, pb, py]() {
      py->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i) {
        bool a_min = pa->value[i] <= pb->value[i];
        if (a_min && pa->requires_grad) {
          pa->ensure_grad();
          pa->grad[i] += py->grad[i];
        } else if (!a_min && pb->requires_grad) {
          pb->ensure_grad();
          pb->grad[i] += py->grad[i];
        }
      }
    });
  }
  return y;
}

// Clamp to [lo, hi]; zero gradient outside the interval.
template <class Real>
Tensor<Real> clamp(const Tensor<Real>& x, Real lo, Real hi) {
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.value()[i], lo, hi);
  Tensor<Real> y = detail::result<Real>(x.shape(), std::move(out), x.requires_grad(), "clamp");
  if (detail::track(y)) {
    auto px = x.ptr(); auto py = y.ptr();
    Tape<Real>::active()->record([px, py, lo, hi]() {
      py->ensure_grad();
      px->ensure_grad();
      for (std::size_t i = 0; i < py->grad.size(); ++i)
        if (px->value[i] >= lo && px->value[i] <= hi) px->grad[i] += py->grad[i];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real c) { return scale(a, c); }
template <class Real>
Tensor<Real> operator*(Real c, const Tensor<Real>& a) { return scale(a, c); }

}  // namespace tit
