#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mrg/errors.hpp"

namespace mrg {

template <typename S>
using MatrixOf = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <typename S>
class Tape;

namespace detail {

template <typename S>
struct TensorStorage {
  MatrixOf<S> value;
  MatrixOf<S> grad;  // empty until first accumulation
  bool requires_grad = false;

  void accumulate(const MatrixOf<S>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

// Dense 2-D tensor handle with value semantics over shared storage. Vectors
// are [1, n] rows, scalars are [1, 1]. Gradients live on the storage and are
// filled in by Tape<S>::backward.
template <typename S>
class Tensor {
 public:
  using Matrix = MatrixOf<S>;

  Tensor() : storage_(std::make_shared<detail::TensorStorage<S>>()) {}

  explicit Tensor(Matrix value, bool requires_grad = false)
      : storage_(std::make_shared<detail::TensorStorage<S>>()) {
    storage_->value = std::move(value);
    storage_->requires_grad = requires_grad;
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
  }
  static Tensor ones(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix::Ones(rows, cols), requires_grad);
  }
  static Tensor scalar(S v, bool requires_grad = false) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }

  Index rows() const { return storage_->value.rows(); }
  Index cols() const { return storage_->value.cols(); }
  Index size() const { return storage_->value.size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  S item() const {
    if (!is_scalar()) throw ContractError("item() requires a 1x1 tensor, got " + shape_str());
    return storage_->value(0, 0);
  }

  const Matrix& value() const { return storage_->value; }
  Matrix& value() { return storage_->value; }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool b) { storage_->requires_grad = b; }

  bool has_grad() const { return storage_->grad.size() > 0; }
  const Matrix& grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
    return storage_->grad;
  }
  void zero_grad() { storage_->grad.resize(0, 0); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[" << rows() << ", " << cols() << "]";
    return os.str();
  }

  // Identity of the underlying storage; two handles alias iff these compare equal.
  const void* id() const { return storage_.get(); }

  std::shared_ptr<detail::TensorStorage<S>> storage() const { return storage_; }

 private:
  std::shared_ptr<detail::TensorStorage<S>> storage_;
};

// Ordered record of forward operations. Each entry is a backward rule closing
// over the storages it needs; entries are recorded in construction order, so
// reverse iteration is a valid topological order for reverse-mode sweeps.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Makes a tape the recording target for all ops on the current thread.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(current_ptr()) { current_ptr() = &t; }
    ~Scope() { current_ptr() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current() { return current_ptr(); }

  void record(std::shared_ptr<detail::TensorStorage<S>> output, std::function<void()> backward) {
    ops_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const { return ops_.size(); }

  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
  // Grads of intermediate results are transient per sweep; leaf grads persist,
  // so repeated calls accumulate one contribution each.
  void backward(const Tensor<S>& loss) {
    if (!loss.is_scalar())
      throw ContractError("backward() requires a scalar loss, got " + loss.shape_str());
    if (!loss.requires_grad())
      throw ContractError("backward() loss is not connected to the tape");
    for (auto& op : ops_) op.output->grad.resize(0, 0);
    loss.storage()->accumulate(MatrixOf<S>::Ones(1, 1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
  }

 private:
  struct OpRecord {
    std::shared_ptr<detail::TensorStorage<S>> output;
    std::function<void()> backward;
  };
  static Tape*& current_ptr() {
    thread_local Tape* cur = nullptr;
    return cur;
  }
  std::vector<OpRecord> ops_;
};

namespace detail {

template <typename S>
inline bool tracing(std::initializer_list<const Tensor<S>*> inputs) {
  if (Tape<S>::current() == nullptr) return false;
  for (const Tensor<S>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
inline void record(std::shared_ptr<TensorStorage<S>> output, std::function<void()> fn) {
  Tape<S>::current()->record(std::move(output), std::move(fn));
}

template <typename S>
inline const MatrixOf<S>* out_grad(const std::shared_ptr<TensorStorage<S>>& out) {
  return out->grad.size() > 0 ? &out->grad : nullptr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " + b.shape_str());
  Tensor<S> out(a.value() * b.value());
  if (detail::tracing<S>({&a, &b})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    detail::record<S>(so, [sa, sb, so] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      if (sa->requires_grad) sa->accumulate((*g) * sb->value.transpose());
      if (sb->requires_grad) sb->accumulate(sa->value.transpose() * (*g));
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  Tensor<S> out(a.value().transpose());
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so] {
      const auto* g = detail::out_grad<S>(so);
      if (g && sa->requires_grad) sa->accumulate(g->transpose());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <typename S>
inline Broadcast broadcast_mode(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (a.is_scalar()) return Broadcast::kLeftScalar;
  if (b.is_scalar()) return Broadcast::kRightScalar;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                   b.shape_str() + " (only same-shape or scalar broadcast)");
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const auto mode = detail::broadcast_mode(a, b, "add");
  MatrixOf<S> v;
  switch (mode) {
    case detail::Broadcast::kNone: v = a.value() + b.value(); break;
    case detail::Broadcast::kLeftScalar: v = b.value().array() + a.value()(0, 0); break;
    case detail::Broadcast::kRightScalar: v = a.value().array() + b.value()(0, 0); break;
  }
  Tensor<S> out(std::move(v));
  if (detail::tracing<S>({&a, &b})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    detail::record<S>(so, [sa, sb, so, mode] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      if (sa->requires_grad) {
        if (mode == detail::Broadcast::kLeftScalar)
          sa->accumulate(MatrixOf<S>::Constant(1, 1, g->sum()));
        else
          sa->accumulate(*g);
      }
      if (sb->requires_grad) {
        if (mode == detail::Broadcast::kRightScalar)
          sb->accumulate(MatrixOf<S>::Constant(1, 1, g->sum()));
        else
          sb->accumulate(*g);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  const auto mode = detail::broadcast_mode(a, b, "mul");
  MatrixOf<S> v;
  switch (mode) {
    case detail::Broadcast::kNone: v = a.value().cwiseProduct(b.value()); break;
    case detail::Broadcast::kLeftScalar: v = b.value() * a.value()(0, 0); break;
    case detail::Broadcast::kRightScalar: v = a.value() * b.value()(0, 0); break;
  }
  Tensor<S> out(std::move(v));
  if (detail::tracing<S>({&a, &b})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    detail::record<S>(so, [sa, sb, so, mode] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      if (sa->requires_grad) {
        if (mode == detail::Broadcast::kLeftScalar)
          sa->accumulate(MatrixOf<S>::Constant(1, 1, g->cwiseProduct(sb->value).sum()));
        else if (mode == detail::Broadcast::kRightScalar)
          sa->accumulate(*g * sb->value(0, 0));
        else
          sa->accumulate(g->cwiseProduct(sb->value));
      }
      if (sb->requires_grad) {
        if (mode == detail::Broadcast::kRightScalar)
          sb->accumulate(MatrixOf<S>::Constant(1, 1, g->cwiseProduct(sa->value).sum()));
        else if (mode == detail::Broadcast::kLeftScalar)
          sb->accumulate(*g * sa->value(0, 0));
        else
          sb->accumulate(g->cwiseProduct(sa->value));
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  Tensor<S> out(MatrixOf<S>(a.value() * k));
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so, k] {
      const auto* g = detail::out_grad<S>(so);
      if (g && sa->requires_grad) sa->accumulate(*g * k);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, scale(b, S(-1)));
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& a, S c) {
  Tensor<S> out(MatrixOf<S>(a.value().array() + c));
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so] {
      const auto* g = detail::out_grad<S>(so);
      if (g && sa->requires_grad) sa->accumulate(*g);
    });
  }
  return out;
}

namespace detail {

// Shared scaffolding for unary elementwise maps with value-dependent slopes.
template <typename S, typename Fwd, typename Slope>
Tensor<S> unary_op(const Tensor<S>& a, Fwd fwd, Slope slope) {
  Tensor<S> out(MatrixOf<S>(a.value().unaryExpr(fwd)));
  if (tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    MatrixOf<S> d = a.value().binaryExpr(out.value(), slope);
    record<S>(so, [sa, so, d = std::move(d)] {
      const auto* g = out_grad<S>(so);
      if (g && sa->requires_grad) sa->accumulate(g->cwiseProduct(d));
    });
  }
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  // exact form: 0.5 x (1 + erf(x / sqrt(2)))
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
  return detail::unary_op<S>(
      a, [=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
      [=](S x, S) {
        const S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
        const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  if ((a.value().array() <= S(0)).any())
    throw NumericalError("log: input has non-positive entries");
  return detail::unary_op<S>(a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op<S>(
      a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> reciprocal(const Tensor<S>& a) {
  return detail::unary_op<S>(
      a, [](S x) { return S(1) / x; }, [](S, S y) { return -y * y; });
}

// Gradient passes only where lo < x < hi; clipped entries get slope zero.
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return detail::unary_op<S>(
      a, [=](S x) { return x < lo ? lo : (x > hi ? hi : x); },
      [=](S x, S) { return (x > lo && x < hi) ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::scalar(a.value().sum());
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so] {
      const auto* g = detail::out_grad<S>(so);
      if (g && sa->requires_grad)
        sa->accumulate(MatrixOf<S>::Constant(sa->value.rows(), sa->value.cols(), (*g)(0, 0)));
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  return scale(sum(a), S(1) / S(a.size()));
}

// Row-wise softmax, stabilized by row-max subtraction.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  if (a.value().hasNaN()) throw NumericalError("softmax_rows: input contains NaN");
  MatrixOf<S> y(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const S m = a.value().row(r).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (a.value().row(r).array() - m).exp();
    y.row(r) = e / e.sum();
  }
  Tensor<S> out(std::move(y));
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sa->requires_grad) return;
      MatrixOf<S> dx(g->rows(), g->cols());
      for (Index r = 0; r < g->rows(); ++r) {
        const auto y_r = so->value.row(r);
        const S dot = g->row(r).cwiseProduct(y_r).sum();
        dx.row(r) = (y_r.array() * (g->row(r).array() - dot)).matrix();
      }
      sa->accumulate(dx);
    });
  }
  return out;
}

// Normalizes the last axis to zero mean / unit variance, then applies the
// learned gain and bias rows.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = S(1e-5)) {
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw ShapeError("layer_norm: gain/bias must be [1, " + std::to_string(d) + "], got " +
                     gain.shape_str() + " and " + bias.shape_str());
  MatrixOf<S> xhat(x.rows(), d);
  Eigen::Array<S, Eigen::Dynamic, 1> invstd(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const S m = x.value().row(r).mean();
    Eigen::Array<S, 1, Eigen::Dynamic> c = x.value().row(r).array() - m;
    const S var = c.square().mean();
    invstd(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = c * invstd(r);
  }
  MatrixOf<S> y = ((xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                   bias.value().row(0).array())
                      .matrix();
  Tensor<S> out(std::move(y));
  if (detail::tracing<S>({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), sg = gain.storage(), sb = bias.storage(), so = out.storage();
    detail::record<S>(so, [sx, sg, sb, so, xhat = std::move(xhat), invstd = std::move(invstd), d] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      if (sg->requires_grad) sg->accumulate(g->cwiseProduct(xhat).colwise().sum());
      if (sb->requires_grad) sb->accumulate(g->colwise().sum());
      if (sx->requires_grad) {
        MatrixOf<S> dx(g->rows(), d);
        for (Index r = 0; r < g->rows(); ++r) {
          Eigen::Array<S, 1, Eigen::Dynamic> dxhat =
              g->row(r).array() * sg->value.row(0).array();
          const S mean_dxhat = dxhat.mean();
          const S mean_dxhat_xhat = (dxhat * xhat.row(r).array()).mean();
          dx.row(r) = (invstd(r) *
                       (dxhat - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat))
                          .matrix();
        }
        sx->accumulate(dx);
      }
    });
  }
  return out;
}

// Scales each row to unit L2 norm (eps-regularized for the zero row).
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x, S eps = S(1e-12)) {
  MatrixOf<S> y(x.rows(), x.cols());
  Eigen::Array<S, Eigen::Dynamic, 1> inv_norm(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    inv_norm(r) = S(1) / std::sqrt(x.value().row(r).squaredNorm() + eps);
    y.row(r) = x.value().row(r) * inv_norm(r);
  }
  Tensor<S> out(std::move(y));
  if (detail::tracing<S>({&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    detail::record<S>(so, [sx, so, inv_norm = std::move(inv_norm)] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sx->requires_grad) return;
      MatrixOf<S> dx(g->rows(), g->cols());
      for (Index r = 0; r < g->rows(); ++r) {
        const auto y_r = so->value.row(r);
        const S dot = g->row(r).cwiseProduct(y_r).sum();
        dx.row(r) = (g->row(r) - dot * y_r) * inv_norm(r);
      }
      sx->accumulate(dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure: slicing, concatenation, reshape, lookup
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> take_rows(const Tensor<S>& a, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > a.rows())
    throw ShapeError("take_rows: range [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of " + a.shape_str());
  Tensor<S> out(MatrixOf<S>(a.value().middleRows(first, count)));
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so, first, count] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sa->requires_grad) return;
      MatrixOf<S> dx = MatrixOf<S>::Zero(sa->value.rows(), sa->value.cols());
      dx.middleRows(first, count) = *g;
      sa->accumulate(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> take_cols(const Tensor<S>& a, Index first, Index count) {
  if (first < 0 || count < 0 || first + count > a.cols())
    throw ShapeError("take_cols: range [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of " + a.shape_str());
  Tensor<S> out(MatrixOf<S>(a.value().middleCols(first, count)));
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so, first, count] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sa->requires_grad) return;
      MatrixOf<S> dx = MatrixOf<S>::Zero(sa->value.rows(), sa->value.cols());
      dx.middleCols(first, count) = *g;
      sa->accumulate(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input");
  const Index c = parts[0].cols();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " + p.shape_str() + " vs [*, " +
                       std::to_string(c) + "]");
    total += p.rows();
  }
  MatrixOf<S> v(total, c);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Tensor<S> out(std::move(v));
  bool any = false;
  for (const auto& p : parts)
    if (p.requires_grad()) any = true;
  if (Tape<S>::current() != nullptr && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorStorage<S>>> srcs;
    srcs.reserve(parts.size());
    for (const auto& p : parts) srcs.push_back(p.storage());
    auto so = out.storage();
    detail::record<S>(so, [srcs, so] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      Index at = 0;
      for (const auto& s : srcs) {
        if (s->requires_grad) s->accumulate(g->middleRows(at, s->value.rows()));
        at += s->value.rows();
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input");
  const Index r = parts[0].rows();
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw ShapeError("concat_cols: row mismatch " + p.shape_str() + " vs [" + std::to_string(r) +
                       ", *]");
    total += p.cols();
  }
  MatrixOf<S> v(r, total);
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Tensor<S> out(std::move(v));
  bool any = false;
  for (const auto& p : parts)
    if (p.requires_grad()) any = true;
  if (Tape<S>::current() != nullptr && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<detail::TensorStorage<S>>> srcs;
    srcs.reserve(parts.size());
    for (const auto& p : parts) srcs.push_back(p.storage());
    auto so = out.storage();
    detail::record<S>(so, [srcs, so] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      Index at = 0;
      for (const auto& s : srcs) {
        if (s->requires_grad) s->accumulate(g->middleCols(at, s->value.cols()));
        at += s->value.cols();
      }
    });
  }
  return out;
}

// Row-major reshape; element order is preserved.
template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Index rows, Index cols) {
  if (rows * cols != a.size())
    throw ShapeError("reshape: cannot view " + a.shape_str() + " as [" + std::to_string(rows) +
                     ", " + std::to_string(cols) + "]");
  MatrixOf<S> v = Eigen::Map<const MatrixOf<S>>(a.value().data(), rows, cols);
  Tensor<S> out(std::move(v));
  if (detail::tracing<S>({&a})) {
    out.set_requires_grad(true);
    auto sa = a.storage(), so = out.storage();
    detail::record<S>(so, [sa, so] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sa->requires_grad) return;
      sa->accumulate(Eigen::Map<const MatrixOf<S>>(g->data(), sa->value.rows(), sa->value.cols()));
    });
  }
  return out;
}

// Gathers table rows by id; gradients scatter-add back into the table.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids) {
  MatrixOf<S> v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw ContractError("embedding_lookup: id " + std::to_string(ids[i]) + " out of table " +
                          table.shape_str());
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  Tensor<S> out(std::move(v));
  if (detail::tracing<S>({&table})) {
    out.set_requires_grad(true);
    auto st = table.storage(), so = out.storage();
    detail::record<S>(so, [st, so, ids] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !st->requires_grad) return;
      MatrixOf<S> dt = MatrixOf<S>::Zero(st->value.rows(), st->value.cols());
      for (std::size_t i = 0; i < ids.size(); ++i)
        dt.row(ids[i]) += g->row(static_cast<Index>(i));
      st->accumulate(dt);
    });
  }
  return out;
}

// Mean over rows with target >= 0 of -log softmax(logits_r)[target_r].
// Rows with target -1 are excluded from the average.
template <typename S>
Tensor<S> row_cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets) {
  if (static_cast<Index>(targets.size()) != logits.rows())
    throw ShapeError("row_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     logits.shape_str());
  Index active = 0;
  for (int t : targets) {
    if (t >= logits.cols())
      throw ContractError("row_cross_entropy: target " + std::to_string(t) + " out of " +
                          logits.shape_str());
    if (t >= 0) ++active;
  }
  if (active == 0) throw ContractError("row_cross_entropy: every row is excluded");
  MatrixOf<S> probs(logits.rows(), logits.cols());
  S total = S(0);
  for (Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.value().row(r).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (logits.value().row(r).array() - m).exp();
    const S z = e.sum();
    probs.row(r) = e / z;
    if (targets[r] >= 0)
      total -= (logits.value()(r, targets[r]) - m) - std::log(z);
  }
  Tensor<S> out = Tensor<S>::scalar(total / S(active));
  if (detail::tracing<S>({&logits})) {
    out.set_requires_grad(true);
    auto sl = logits.storage(), so = out.storage();
    detail::record<S>(so, [sl, so, targets, probs = std::move(probs), active] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sl->requires_grad) return;
      const S w = (*g)(0, 0) / S(active);
      MatrixOf<S> dx = MatrixOf<S>::Zero(probs.rows(), probs.cols());
      for (Index r = 0; r < probs.rows(); ++r) {
        if (targets[r] < 0) continue;
        dx.row(r) = probs.row(r) * w;
        dx(r, targets[r]) -= w;
      }
      sl->accumulate(dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial ops for the convolutional classifier. Feature maps are stored as
// [channels, height*width] with row-major pixel order.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
MatrixOf<S> im2col(const MatrixOf<S>& x, Index h, Index w, Index k, Index stride, Index pad,
                   Index ho, Index wo) {
  const Index cin = x.rows();
  MatrixOf<S> col = MatrixOf<S>::Zero(cin * k * k, ho * wo);
  for (Index ci = 0; ci < cin; ++ci)
    for (Index kr = 0; kr < k; ++kr)
      for (Index kc = 0; kc < k; ++kc) {
        const Index row = (ci * k + kr) * k + kc;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + kr - pad;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kc - pad;
            if (ix < 0 || ix >= w) continue;
            col(row, oy * wo + ox) = x(ci, iy * w + ix);
          }
        }
      }
  return col;
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Index h,
                 Index w, Index k, Index stride = 1, Index pad = 0) {
  const Index cin = x.rows();
  if (x.cols() != h * w)
    throw ShapeError("conv2d: input " + x.shape_str() + " does not match " + std::to_string(h) +
                     "x" + std::to_string(w));
  if (weight.cols() != cin * k * k)
    throw ShapeError("conv2d: weight " + weight.shape_str() + " does not match cin*k*k = " +
                     std::to_string(cin * k * k));
  const Index cout = weight.rows();
  if (bias.rows() != 1 || bias.cols() != cout)
    throw ShapeError("conv2d: bias must be [1, " + std::to_string(cout) + "], got " +
                     bias.shape_str());
  const Index ho = (h + 2 * pad - k) / stride + 1;
  const Index wo = (w + 2 * pad - k) / stride + 1;
  MatrixOf<S> col = detail::im2col<S>(x.value(), h, w, k, stride, pad, ho, wo);
  MatrixOf<S> y = weight.value() * col;
  for (Index co = 0; co < cout; ++co) y.row(co).array() += bias.value()(0, co);
  Tensor<S> out(std::move(y));
  if (detail::tracing<S>({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), sw = weight.storage(), sb = bias.storage(), so = out.storage();
    detail::record<S>(so, [sx, sw, sb, so, col = std::move(col), h, w, k, stride, pad, ho, wo] {
      const auto* g = detail::out_grad<S>(so);
      if (!g) return;
      if (sb->requires_grad) {
        MatrixOf<S> db(1, g->rows());
        for (Index co = 0; co < g->rows(); ++co) db(0, co) = g->row(co).sum();
        sb->accumulate(db);
      }
      if (sw->requires_grad) sw->accumulate((*g) * col.transpose());
      if (sx->requires_grad) {
        MatrixOf<S> dcol = sw->value.transpose() * (*g);
        MatrixOf<S> dx = MatrixOf<S>::Zero(sx->value.rows(), sx->value.cols());
        const Index cin = sx->value.rows();
        for (Index ci = 0; ci < cin; ++ci)
          for (Index kr = 0; kr < k; ++kr)
            for (Index kc = 0; kc < k; ++kc) {
              const Index row = (ci * k + kr) * k + kc;
              for (Index oy = 0; oy < ho; ++oy) {
                const Index iy = oy * stride + kr - pad;
                if (iy < 0 || iy >= h) continue;
                for (Index ox = 0; ox < wo; ++ox) {
                  const Index ix = ox * stride + kc - pad;
                  if (ix < 0 || ix >= w) continue;
                  dx(ci, iy * w + ix) += dcol(row, oy * wo + ox);
                }
              }
            }
        sx->accumulate(dx);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, Index h, Index w, Index window) {
  if (x.cols() != h * w)
    throw ShapeError("avg_pool2d: input " + x.shape_str() + " does not match " +
                     std::to_string(h) + "x" + std::to_string(w));
  if (h % window != 0 || w % window != 0)
    throw ShapeError("avg_pool2d: " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(window));
  const Index c = x.rows(), ho = h / window, wo = w / window;
  const S inv = S(1) / S(window * window);
  MatrixOf<S> y = MatrixOf<S>::Zero(c, ho * wo);
  for (Index ci = 0; ci < c; ++ci)
    for (Index oy = 0; oy < ho; ++oy)
      for (Index ox = 0; ox < wo; ++ox) {
        S acc = S(0);
        for (Index dy = 0; dy < window; ++dy)
          for (Index dx = 0; dx < window; ++dx)
            acc += x.value()(ci, (oy * window + dy) * w + ox * window + dx);
        y(ci, oy * wo + ox) = acc * inv;
      }
  Tensor<S> out(std::move(y));
  if (detail::tracing<S>({&x})) {
    out.set_requires_grad(true);
    auto sx = x.storage(), so = out.storage();
    detail::record<S>(so, [sx, so, h, w, window, ho, wo, inv] {
      const auto* g = detail::out_grad<S>(so);
      if (!g || !sx->requires_grad) return;
      MatrixOf<S> dx = MatrixOf<S>::Zero(sx->value.rows(), sx->value.cols());
      for (Index ci = 0; ci < dx.rows(); ++ci)
        for (Index oy = 0; oy < ho; ++oy)
          for (Index ox = 0; ox < wo; ++ox) {
            const S v = (*g)(ci, oy * wo + ox) * inv;
            for (Index dy = 0; dy < window; ++dy)
              for (Index dxp = 0; dxp < window; ++dxp)
                dx(ci, (oy * window + dy) * w + ox * window + dxp) += v;
          }
      sx->accumulate(dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Compares the taped gradient of a scalar-valued function against central
// finite differences. Returns max over elements of
// |analytic - numeric| / max(1, |analytic|, |numeric|). Reports, never throws.
template <typename S>
S grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> x, S eps) {
  x.set_requires_grad(true);
  x.zero_grad();
  MatrixOf<S> analytic = MatrixOf<S>::Zero(x.rows(), x.cols());
  {
    Tape<S> tape;
    typename Tape<S>::Scope scope(tape);
    Tensor<S> y = f(x);
    tape.backward(y);
    if (x.has_grad()) analytic = x.grad();
  }
  x.zero_grad();
  S worst = S(0);
  for (Index r = 0; r < x.rows(); ++r)
    for (Index c = 0; c < x.cols(); ++c) {
      const S orig = x.value()(r, c);
      x.value()(r, c) = orig + eps;
      const S up = f(x).item();
      x.value()(r, c) = orig - eps;
      const S down = f(x).item();
      x.value()(r, c) = orig;
      const S numeric = (up - down) / (S(2) * eps);
      const S a = analytic(r, c);
      const S denom = std::max(S(1), std::max(std::abs(a), std::abs(numeric)));
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  return worst;
}

}  // namespace mrg
