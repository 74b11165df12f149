#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation on an
// explicit gradient tape. The op set is exactly what a small sparsely-routed
// transformer encoder needs; every differentiable op is validated against
// central finite differences in the test suite.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skillnet/common.hpp"

namespace skillnet {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMatrix>;
using ECMap = Eigen::Map<const EMatrix>;

inline std::string shape_str(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct TensorData {
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::optional<std::vector<double>> grad;  // allocated lazily by backward()
  bool requires_grad = false;               // trainable leaf
  bool on_tape = false;                     // produced by a recorded op

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

// Shared-handle tensor: copies alias the same storage, so a parameter held
// by a store and referenced from a tape node accumulate into one grad slot.
class Tensor {
 public:
  Tensor() : p_(std::make_shared<TensorData>()) {}

  explicit Tensor(std::vector<int64_t> shape) : p_(std::make_shared<TensorData>()) {
    p_->shape = std::move(shape);
    p_->values.assign(static_cast<size_t>(p_->numel()), 0.0);
  }

  Tensor(std::vector<int64_t> shape, std::vector<double> values)
      : p_(std::make_shared<TensorData>()) {
    p_->shape = std::move(shape);
    p_->values = std::move(values);
    if (static_cast<int64_t>(p_->values.size()) != p_->numel())
      throw ShapeError("Tensor: " + std::to_string(p_->values.size()) +
                       " values do not fill shape " + shape_str(p_->shape));
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal() * stddev;
    return t;
  }

  const std::vector<int64_t>& shape() const { return p_->shape; }
  int64_t dim(size_t i) const { return p_->shape.at(i); }
  size_t rank() const { return p_->shape.size(); }
  int64_t numel() const { return p_->numel(); }

  std::vector<double>& data() { return p_->values; }
  const std::vector<double>& data() const { return p_->values; }
  double item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return p_->values[0];
  }

  bool requires_grad() const { return p_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    p_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return p_->grad.has_value(); }
  const std::vector<double>& grad() const {
    if (!p_->grad) throw ContractError("grad(): no gradient accumulated");
    return *p_->grad;
  }
  std::vector<double>& ensure_grad() {
    if (!p_->grad) p_->grad.emplace(p_->values.size(), 0.0);
    return *p_->grad;
  }
  void zero_grad() { p_->grad.reset(); }

  // Deep copy; the clone shares nothing with the source.
  Tensor clone() const {
    Tensor t(p_->shape, p_->values);
    t.p_->requires_grad = p_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }
  std::shared_ptr<TensorData> impl() const { return p_; }

  EMap mat(int64_t rows, int64_t cols) { return EMap(p_->values.data(), rows, cols); }
  ECMap cmat(int64_t rows, int64_t cols) const { return ECMap(p_->values.data(), rows, cols); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> p) : p_(std::move(p)) {}
  std::shared_ptr<TensorData> p_;
};

// ---------------------------------------------------------------------------
// Gradient tape. Ops executed while a tape is active append nodes in forward
// order, which is already a topological order; backward replays them once in
// reverse. A node's closure runs only if its output ever received gradient,
// so subgraphs unreachable from the loss contribute nothing -- this exactness
// is what the routing-isolation tests lean on.
// ---------------------------------------------------------------------------

class GradTape {
 public:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> backward;
  };

  void record(const char* op, std::vector<std::shared_ptr<TensorData>> inputs,
              const Tensor& output, std::function<void()> backward) {
    output.impl()->on_tape = true;
    nodes_.push_back(Node{op, std::move(inputs), output.impl(), std::move(backward)});
  }

  // Accumulates d(loss)/d(leaf) into every reachable leaf's grad slot.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.impl()->grad = std::vector<double>{1.0};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad) it->backward();
    }
  }

  size_t size() const { return nodes_.size(); }

  size_t op_count(const std::string& op) const {
    size_t n = 0;
    for (const auto& node : nodes_)
      if (op == node.op) ++n;
    return n;
  }

  void clear() { nodes_.clear(); }

  static GradTape* active() { return active_; }

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
  inline static thread_local GradTape* active_ = nullptr;
};

// RAII activation: ops record onto the innermost live scope's tape.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape) : prev_(GradTape::active_) { GradTape::active_ = &tape; }
  ~TapeScope() { GradTape::active_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

inline void backward(const Tensor& loss, GradTape& tape) { tape.backward(loss); }

namespace detail {

inline bool tracked(const Tensor& t) { return t.requires_grad() || t.impl()->on_tape; }

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (tracked(*t)) return true;
  return false;
}

inline void accumulate(const Tensor& t, const std::vector<double>& delta) {
  if (!tracked(t)) return;
  auto& g = const_cast<Tensor&>(t).ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  Tensor out(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::should_record({&a, &b})) {
    GradTape::active()->record("add", {a.impl(), b.impl()}, out, [a, b, out]() {
      const auto& g = *out.impl()->grad;
      detail::accumulate(a, g);
      detail::accumulate(b, g);
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  Tensor out(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::should_record({&a, &b})) {
    GradTape::active()->record("mul", {a.impl(), b.impl()}, out, [a, b, out]() {
      const auto& g = *out.impl()->grad;
      if (detail::tracked(a)) {
        std::vector<double> da(g.size());
        for (size_t i = 0; i < g.size(); ++i) da[i] = g[i] * b.data()[i];
        detail::accumulate(a, da);
      }
      if (detail::tracked(b)) {
        std::vector<double> db(g.size());
        for (size_t i = 0; i < g.size(); ++i) db[i] = g[i] * a.data()[i];
        detail::accumulate(b, db);
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (detail::should_record({&a})) {
    GradTape::active()->record("scale", {a.impl()}, out, [a, out, c]() {
      const auto& g = *out.impl()->grad;
      std::vector<double> da(g.size());
      for (size_t i = 0; i < g.size(); ++i) da[i] = g[i] * c;
      detail::accumulate(a, da);
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const auto& av = a.data();
  auto& ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (detail::should_record({&a})) {
    GradTape::active()->record("relu", {a.impl()}, out, [a, out]() {
      const auto& g = *out.impl()->grad;
      std::vector<double> da(g.size());
      for (size_t i = 0; i < g.size(); ++i) da[i] = a.data()[i] > 0.0 ? g[i] : 0.0;
      detail::accumulate(a, da);
    });
  }
  return out;
}

inline void require_2d(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  out.mat(m, n).noalias() = a.cmat(m, k) * b.cmat(k, n);
  if (detail::should_record({&a, &b})) {
    GradTape::active()->record("matmul", {a.impl(), b.impl()}, out, [a, b, out, m, k, n]() {
      ECMap g(out.impl()->grad->data(), m, n);
      if (detail::tracked(a)) {
        std::vector<double> da(static_cast<size_t>(m * k));
        EMap(da.data(), m, k).noalias() = g * b.cmat(k, n).transpose();
        detail::accumulate(a, da);
      }
      if (detail::tracked(b)) {
        std::vector<double> db(static_cast<size_t>(k * n));
        EMap(db.data(), k, n).noalias() = a.cmat(m, k).transpose() * g;
        detail::accumulate(b, db);
      }
    });
  }
  return out;
}

// y = x W + b, one fused node; b may be omitted.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b = nullptr) {
  require_2d("linear", x);
  require_2d("linear", w);
  if (x.dim(1) != w.dim(0))
    throw ShapeError("linear: inner dimensions differ, " + shape_str(x.shape()) + " x " +
                     shape_str(w.shape()));
  const int64_t n = x.dim(0), d = x.dim(1), m = w.dim(1);
  if (b != nullptr && (b->rank() != 1 || b->dim(0) != m))
    throw ShapeError("linear: bias shape " + shape_str(b->shape()) + " does not match output width " +
                     std::to_string(m));
  Tensor out({n, m});
  out.mat(n, m).noalias() = x.cmat(n, d) * w.cmat(d, m);
  if (b != nullptr) {
    auto& ov = out.data();
    const auto& bv = b->data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < m; ++j) ov[static_cast<size_t>(i * m + j)] += bv[static_cast<size_t>(j)];
  }
  bool rec = b != nullptr ? detail::should_record({&x, &w, b}) : detail::should_record({&x, &w});
  if (rec) {
    std::vector<std::shared_ptr<TensorData>> ins = {x.impl(), w.impl()};
    std::optional<Tensor> bias;
    if (b != nullptr) {
      ins.push_back(b->impl());
      bias = *b;
    }
    GradTape::active()->record("linear", std::move(ins), out, [x, w, bias, out, n, d, m]() {
      ECMap g(out.impl()->grad->data(), n, m);
      if (detail::tracked(x)) {
        std::vector<double> dx(static_cast<size_t>(n * d));
        EMap(dx.data(), n, d).noalias() = g * w.cmat(d, m).transpose();
        detail::accumulate(x, dx);
      }
      if (detail::tracked(w)) {
        std::vector<double> dw(static_cast<size_t>(d * m));
        EMap(dw.data(), d, m).noalias() = x.cmat(n, d).transpose() * g;
        detail::accumulate(w, dw);
      }
      if (bias && detail::tracked(*bias)) {
        std::vector<double> db(static_cast<size_t>(m), 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j)
            db[static_cast<size_t>(j)] += (*out.impl()->grad)[static_cast<size_t>(i * m + j)];
        detail::accumulate(*bias, db);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  out.mat(n, m) = a.cmat(m, n).transpose();
  if (detail::should_record({&a})) {
    GradTape::active()->record("transpose", {a.impl()}, out, [a, out, m, n]() {
      std::vector<double> da(static_cast<size_t>(m * n));
      EMap(da.data(), m, n) = ECMap(out.impl()->grad->data(), n, m).transpose();
      detail::accumulate(a, da);
    });
  }
  return out;
}

// Same data, new shape. Copies; backward is the identity.
inline Tensor reshape(const Tensor& a, std::vector<int64_t> new_shape) {
  Tensor out(std::move(new_shape), a.data());
  if (out.numel() != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(out.shape()));
  if (detail::should_record({&a})) {
    GradTape::active()->record("reshape", {a.impl()}, out,
                               [a, out]() { detail::accumulate(a, *out.impl()->grad); });
  }
  return out;
}

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() < 1 || x.shape().back() < 1)
    throw ShapeError("softmax_lastdim: need a nonempty last dimension, got " + shape_str(x.shape()));
  const int64_t n = x.shape().back();
  const int64_t rows = x.numel() / n;
  Tensor out(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xi = xv.data() + r * n;
    double* oi = ov.data() + r * n;
    double mx = xi[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (int64_t j = 0; j < n; ++j) oi[j] /= sum;
  }
  if (detail::should_record({&x})) {
    GradTape::active()->record("softmax", {x.impl()}, out, [x, out, rows, n]() {
      const auto& g = *out.impl()->grad;
      const auto& y = out.data();
      std::vector<double> dx(g.size());
      for (int64_t r = 0; r < rows; ++r) {
        const double* yi = y.data() + r * n;
        const double* gi = g.data() + r * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += yi[j] * gi[j];
        for (int64_t j = 0; j < n; ++j) dx[static_cast<size_t>(r * n + j)] = yi[j] * (gi[j] - dot);
      }
      detail::accumulate(x, dx);
    });
  }
  return out;
}

// Per-position normalization over the last dimension, then affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm: affine params must have length " + std::to_string(d));
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape());
  std::vector<double> mean(static_cast<size_t>(rows)), inv_std(static_cast<size_t>(rows));
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto& ov = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xi = xv.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    mean[static_cast<size_t>(r)] = mu;
    inv_std[static_cast<size_t>(r)] = is;
    double* oi = ov.data() + r * d;
    for (int64_t j = 0; j < d; ++j) oi[j] = gv[j] * (xi[j] - mu) * is + bv[j];
  }
  if (detail::should_record({&x, &gamma, &beta})) {
    GradTape::active()->record(
        "layer_norm", {x.impl(), gamma.impl(), beta.impl()}, out,
        [x, gamma, beta, out, rows, d, mean, inv_std]() {
          const auto& g = *out.impl()->grad;
          const auto& xv2 = x.data();
          const auto& gv2 = gamma.data();
          std::vector<double> dx(xv2.size(), 0.0);
          std::vector<double> dgamma(static_cast<size_t>(d), 0.0);
          std::vector<double> dbeta(static_cast<size_t>(d), 0.0);
          for (int64_t r = 0; r < rows; ++r) {
            const double* xi = xv2.data() + r * d;
            const double* gi = g.data() + r * d;
            const double mu = mean[static_cast<size_t>(r)];
            const double is = inv_std[static_cast<size_t>(r)];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              const double xhat = (xi[j] - mu) * is;
              const double dxhat = gi[j] * gv2[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
              dgamma[static_cast<size_t>(j)] += gi[j] * xhat;
              dbeta[static_cast<size_t>(j)] += gi[j];
            }
            for (int64_t j = 0; j < d; ++j) {
              const double xhat = (xi[j] - mu) * is;
              const double dxhat = gi[j] * gv2[j];
              dx[static_cast<size_t>(r * d + j)] =
                  is * (dxhat - sum_dxhat / static_cast<double>(d) -
                        xhat * sum_dxhat_xhat / static_cast<double>(d));
            }
          }
          detail::accumulate(x, dx);
          detail::accumulate(gamma, dgamma);
          detail::accumulate(beta, dbeta);
        });
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[target].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_2d("cross_entropy", logits);
  const int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  if (n == 0) throw ContractError("cross_entropy: empty batch");
  for (int64_t i = 0; i < n; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= c)
      throw LabelError("cross_entropy: target " + std::to_string(targets[static_cast<size_t>(i)]) +
                       " out of range [0," + std::to_string(c) + ") at batch index " +
                       std::to_string(i));
  }
  const auto& lv = logits.data();
  double total = 0.0;
  std::vector<double> lse(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* li = lv.data() + i * c;
    double mx = li[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, li[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(li[j] - mx);
    lse[static_cast<size_t>(i)] = mx + std::log(sum);
    total += lse[static_cast<size_t>(i)] - li[targets[static_cast<size_t>(i)]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  if (detail::should_record({&logits})) {
    GradTape::active()->record("cross_entropy", {logits.impl()}, out,
                               [logits, out, targets, lse, n, c]() {
      const double g = (*out.impl()->grad)[0];
      const auto& lv2 = logits.data();
      std::vector<double> dl(lv2.size());
      for (int64_t i = 0; i < n; ++i) {
        const double* li = lv2.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
          double p = std::exp(li[j] - lse[static_cast<size_t>(i)]);
          if (j == targets[static_cast<size_t>(i)]) p -= 1.0;
          dl[static_cast<size_t>(i * c + j)] = g * p / static_cast<double>(n);
        }
      }
      detail::accumulate(logits, dl);
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::should_record({&a})) {
    GradTape::active()->record("sum", {a.impl()}, out, [a, out]() {
      const double g = (*out.impl()->grad)[0];
      std::vector<double> da(a.numel(), g);
      detail::accumulate(a, da);
    });
  }
  return out;
}

// Rows of `table` selected by index; backward scatter-adds. Used both for
// embedding lookup and for picking labeled/classifier positions.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  require_2d("gather_rows", table);
  const int64_t v = table.dim(0), d = table.dim(1);
  for (size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= v)
      throw ContractError("gather_rows: row " + std::to_string(ids[i]) + " out of range [0," +
                          std::to_string(v) + ") at position " + std::to_string(i));
  const int64_t n = static_cast<int64_t>(ids.size());
  Tensor out({n, d});
  const auto& tv = table.data();
  auto& ov = out.data();
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(tv.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d, d,
                ov.data() + i * d);
  if (detail::should_record({&table})) {
    GradTape::active()->record("gather_rows", {table.impl()}, out, [table, out, ids, d]() {
      const auto& g = *out.impl()->grad;
      std::vector<double> dt(table.numel(), 0.0);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < d; ++j)
          dt[static_cast<size_t>(ids[i]) * static_cast<size_t>(d) + static_cast<size_t>(j)] +=
              g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
      detail::accumulate(table, dt);
    });
  }
  return out;
}

// out[i, 0] = x[i, cols0[i]], out[i, 1] = x[i, cols1[i]]; the top-2 gate path.
inline Tensor gather_pair_cols(const Tensor& x, const std::vector<int>& cols0,
                               const std::vector<int>& cols1) {
  require_2d("gather_pair_cols", x);
  const int64_t n = x.dim(0), c = x.dim(1);
  if (static_cast<int64_t>(cols0.size()) != n || static_cast<int64_t>(cols1.size()) != n)
    throw ShapeError("gather_pair_cols: index lists must match row count");
  Tensor out({n, 2});
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t i = 0; i < n; ++i) {
    ov[static_cast<size_t>(2 * i)] = xv[static_cast<size_t>(i * c + cols0[static_cast<size_t>(i)])];
    ov[static_cast<size_t>(2 * i + 1)] = xv[static_cast<size_t>(i * c + cols1[static_cast<size_t>(i)])];
  }
  if (detail::should_record({&x})) {
    GradTape::active()->record("gather_pair_cols", {x.impl()}, out, [x, out, cols0, cols1, n, c]() {
      const auto& g = *out.impl()->grad;
      std::vector<double> dx(x.numel(), 0.0);
      for (int64_t i = 0; i < n; ++i) {
        dx[static_cast<size_t>(i * c + cols0[static_cast<size_t>(i)])] += g[static_cast<size_t>(2 * i)];
        dx[static_cast<size_t>(i * c + cols1[static_cast<size_t>(i)])] += g[static_cast<size_t>(2 * i + 1)];
      }
      detail::accumulate(x, dx);
    });
  }
  return out;
}

// Scales row i of x by w[i]; w has shape [n, 1] or [n].
inline Tensor mul_rows(const Tensor& x, const Tensor& w) {
  require_2d("mul_rows", x);
  const int64_t n = x.dim(0), d = x.dim(1);
  if (w.numel() != n)
    throw ShapeError("mul_rows: weight count " + std::to_string(w.numel()) + " != rows " +
                     std::to_string(n));
  Tensor out(x.shape());
  const auto& xv = x.data();
  const auto& wv = w.data();
  auto& ov = out.data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      ov[static_cast<size_t>(i * d + j)] = xv[static_cast<size_t>(i * d + j)] * wv[static_cast<size_t>(i)];
  if (detail::should_record({&x, &w})) {
    GradTape::active()->record("mul_rows", {x.impl(), w.impl()}, out, [x, w, out, n, d]() {
      const auto& g = *out.impl()->grad;
      if (detail::tracked(x)) {
        std::vector<double> dx(x.numel());
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            dx[static_cast<size_t>(i * d + j)] =
                g[static_cast<size_t>(i * d + j)] * w.data()[static_cast<size_t>(i)];
        detail::accumulate(x, dx);
      }
      if (detail::tracked(w)) {
        std::vector<double> dw(static_cast<size_t>(n), 0.0);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j)
            dw[static_cast<size_t>(i)] +=
                g[static_cast<size_t>(i * d + j)] * x.data()[static_cast<size_t>(i * d + j)];
        detail::accumulate(w, dw);
      }
    });
  }
  return out;
}

// Elementwise mean of same-shaped tensors. Per element the addends are summed
// in sorted order, so permuting the input list leaves the result bitwise
// unchanged; this backs the mask-permutation equivariance of the skill FFN.
inline Tensor stable_mean(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("stable_mean: empty input list");
  for (const Tensor& t : xs) detail::check_same_shape("stable_mean", xs[0], t);
  const size_t k = xs.size();
  Tensor out(xs[0].shape());
  auto& ov = out.data();
  std::vector<double> buf(k);
  for (size_t i = 0; i < ov.size(); ++i) {
    for (size_t j = 0; j < k; ++j) buf[j] = xs[j].data()[i];
    std::sort(buf.begin(), buf.end());
    double s = 0.0;
    for (double v : buf) s += v;
    ov[i] = s / static_cast<double>(k);
  }
  bool rec = false;
  if (GradTape::active() != nullptr)
    for (const Tensor& t : xs)
      if (detail::tracked(t)) rec = true;
  if (rec) {
    std::vector<std::shared_ptr<TensorData>> ins;
    for (const Tensor& t : xs) ins.push_back(t.impl());
    GradTape::active()->record("stable_mean", std::move(ins), out, [xs, out, k]() {
      const auto& g = *out.impl()->grad;
      std::vector<double> dx(g.size());
      for (size_t i = 0; i < g.size(); ++i) dx[i] = g[i] / static_cast<double>(k);
      for (const Tensor& t : xs) detail::accumulate(t, dx);
    });
  }
  return out;
}

// Multi-head scaled dot-product self-attention core over a flattened batch.
// q, k, v: [batch*seq_len, d] already projected; key_mask: [batch*seq_len]
// with 1 for real tokens and 0 for padding. Padded keys receive exactly zero
// attention weight. Output is the concatenation of head contexts, pre-output-
// projection.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int64_t batch,
                             int64_t seq_len, int64_t heads, const std::vector<double>& key_mask) {
  require_2d("attention_core", q);
  detail::check_same_shape("attention_core", q, k);
  detail::check_same_shape("attention_core", q, v);
  const int64_t d = q.dim(1);
  if (q.dim(0) != batch * seq_len)
    throw ShapeError("attention_core: rows " + std::to_string(q.dim(0)) + " != batch*seq_len " +
                     std::to_string(batch * seq_len));
  if (d % heads != 0)
    throw ShapeError("attention_core: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  if (static_cast<int64_t>(key_mask.size()) != batch * seq_len)
    throw ShapeError("attention_core: key mask length mismatch");
  const int64_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out({batch * seq_len, d});
  // Attention weights saved per (batch, head) for the backward pass.
  auto attn = std::make_shared<std::vector<std::vector<double>>>(
      static_cast<size_t>(batch * heads));

  const auto& qv = q.data();
  const auto& kv = k.data();
  const auto& vv = v.data();
  auto& ov = out.data();
  for (int64_t b = 0; b < batch; ++b) {
    const double* mk = key_mask.data() + b * seq_len;
    for (int64_t h = 0; h < heads; ++h) {
      std::vector<double>& a = (*attn)[static_cast<size_t>(b * heads + h)];
      a.assign(static_cast<size_t>(seq_len * seq_len), 0.0);
      for (int64_t i = 0; i < seq_len; ++i) {
        const double* qi = qv.data() + (b * seq_len + i) * d + h * dh;
        double* ai = a.data() + i * seq_len;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < seq_len; ++j) {
          if (mk[j] == 0.0) {
            ai[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = kv.data() + (b * seq_len + j) * d + h * dh;
          double s = 0.0;
          for (int64_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          ai[j] = s * sc;
          mx = std::max(mx, ai[j]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < seq_len; ++j) {
          ai[j] = std::isinf(ai[j]) ? 0.0 : std::exp(ai[j] - mx);
          sum += ai[j];
        }
        double* oi = ov.data() + (b * seq_len + i) * d + h * dh;
        for (int64_t t = 0; t < dh; ++t) oi[t] = 0.0;
        for (int64_t j = 0; j < seq_len; ++j) {
          ai[j] /= sum;
          if (ai[j] == 0.0) continue;
          const double* vj = vv.data() + (b * seq_len + j) * d + h * dh;
          for (int64_t t = 0; t < dh; ++t) oi[t] += ai[j] * vj[t];
        }
      }
    }
  }
  if (detail::should_record({&q, &k, &v})) {
    GradTape::active()->record(
        "attention_core", {q.impl(), k.impl(), v.impl()}, out,
        [q, k, v, out, attn, batch, seq_len, heads, dh, d, sc]() {
          const auto& g = *out.impl()->grad;
          const auto& qv2 = q.data();
          const auto& kv2 = k.data();
          const auto& vv2 = v.data();
          std::vector<double> dq(qv2.size(), 0.0), dk(kv2.size(), 0.0), dv(vv2.size(), 0.0);
          std::vector<double> da(static_cast<size_t>(seq_len)), ds(static_cast<size_t>(seq_len));
          for (int64_t b = 0; b < batch; ++b) {
            for (int64_t h = 0; h < heads; ++h) {
              const std::vector<double>& a = (*attn)[static_cast<size_t>(b * heads + h)];
              for (int64_t i = 0; i < seq_len; ++i) {
                const double* gi = g.data() + (b * seq_len + i) * d + h * dh;
                const double* ai = a.data() + i * seq_len;
                // dA_ij = dO_i . V_j ; dV_j += A_ij dO_i
                for (int64_t j = 0; j < seq_len; ++j) {
                  const double* vj = vv2.data() + (b * seq_len + j) * d + h * dh;
                  double* dvj = dv.data() + (b * seq_len + j) * d + h * dh;
                  double dot = 0.0;
                  for (int64_t t = 0; t < dh; ++t) {
                    dot += gi[t] * vj[t];
                    dvj[t] += ai[j] * gi[t];
                  }
                  da[static_cast<size_t>(j)] = dot;
                }
                // softmax backward per row; A is exactly 0 at masked keys,
                // which kills their contribution.
                double row_dot = 0.0;
                for (int64_t j = 0; j < seq_len; ++j) row_dot += da[static_cast<size_t>(j)] * ai[j];
                for (int64_t j = 0; j < seq_len; ++j)
                  ds[static_cast<size_t>(j)] = ai[j] * (da[static_cast<size_t>(j)] - row_dot) * sc;
                const double* qi = qv2.data() + (b * seq_len + i) * d + h * dh;
                double* dqi = dq.data() + (b * seq_len + i) * d + h * dh;
                for (int64_t j = 0; j < seq_len; ++j) {
                  if (ds[static_cast<size_t>(j)] == 0.0) continue;
                  const double* kj = kv2.data() + (b * seq_len + j) * d + h * dh;
                  double* dkj = dk.data() + (b * seq_len + j) * d + h * dh;
                  for (int64_t t = 0; t < dh; ++t) {
                    dqi[t] += ds[static_cast<size_t>(j)] * kj[t];
                    dkj[t] += ds[static_cast<size_t>(j)] * qi[t];
                  }
                }
              }
            }
          }
          detail::accumulate(q, dq);
          detail::accumulate(k, dk);
          detail::accumulate(v, dv);
        });
  }
  return out;
}

// Inverted dropout. Identity when rate == 0 or training == false.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  Tensor keep(x.shape());
  const double inv = 1.0 / (1.0 - rate);
  for (double& v : keep.data()) v = rng.bernoulli(rate) ? 0.0 : inv;
  return mul(x, keep);
}

}  // namespace skillnet
