#pragma once

// Dense 64-bit tensors with dynamic reverse-mode autodiff.
//
// Ops executed while a Tape is in scope record backward closures onto the
// innermost tape. Tape::backward(loss) seeds d(loss)/d(loss) = 1 and replays
// the closures in reverse; fan-out accumulates additively. A tape is single
// use. Reductions run in fixed sequential order, so gradients for a given
// graph are bitwise reproducible.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ivat/error.hpp"

namespace ivat {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size())
      raise(ErrorKind::dimension, "from_data: shape " + shape_to_string(shape) + " does not hold " +
                                      std::to_string(data.size()) + " values");
    for (double v : data)
      if (!std::isfinite(v)) raise(ErrorKind::numeric, "from_data: non-finite input value");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double fill) {
    auto n = std::make_shared<TensorNode>();
    n->value.assign(shape_numel(shape), fill);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor scalar(double v) {
    if (!std::isfinite(v)) raise(ErrorKind::numeric, "scalar: non-finite value");
    return full({1}, v);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return check().shape; }
  std::size_t size() const { return check().value.size(); }
  std::size_t rank() const { return check().shape.size(); }

  std::vector<double>& value() { return check().value; }
  const std::vector<double>& value() const { return check().value; }

  double item() const {
    if (size() != 1) raise(ErrorKind::contract, "item: tensor has " + std::to_string(size()) + " elements");
    return check().value[0];
  }

  bool requires_grad() const { return check().requires_grad; }
  Tensor& set_requires_grad(bool b) {
    check().requires_grad = b;
    return *this;
  }

  bool grad_allocated() const { return !check().grad.empty(); }

  std::vector<double>& grad() {
    TensorNode& n = check();
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  void zero_grad() {
    TensorNode& n = check();
    if (!n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  }

  // Value copy detached from any graph.
  Tensor detach() const { return from_data(shape(), value()); }

  std::shared_ptr<TensorNode> node() const { return node_; }

  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

 private:
  TensorNode& check() const {
    if (!node_) raise(ErrorKind::contract, "operation on undefined tensor");
    return *node_;
  }

  std::shared_ptr<TensorNode> node_;
};

class Tape {
 public:
  Tape() { stack().push_back(this); }

  ~Tape() {
    auto& s = stack();
    if (!s.empty() && s.back() == this) s.pop_back();
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() {
    auto& s = stack();
    return s.empty() ? nullptr : s.back();
  }

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t recorded_ops() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor& loss) {
    if (consumed_) raise(ErrorKind::state, "backward: tape already consumed");
    if (!loss.defined() || loss.size() != 1)
      raise(ErrorKind::contract, "backward: loss must be a scalar tensor");
    consumed_ = true;
    TensorNode& n = *loss.node();
    if (n.grad.empty()) n.grad.assign(1, 0.0);
    n.grad[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

 private:
  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }

  friend class NoTape;

  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

// Makes Tape::active() return nullptr inside its scope. Used for value-only
// evaluation (finite differences, metric passes) under an outer tape.
class NoTape {
 public:
  NoTape() { Tape::stack().push_back(nullptr); }
  ~NoTape() { Tape::stack().pop_back(); }
  NoTape(const NoTape&) = delete;
  NoTape& operator=(const NoTape&) = delete;
};

namespace detail {

inline void check_finite_value(const char* op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) raise(ErrorKind::numeric, std::string(op) + ": non-finite output");
}

inline void check_finite_grad(const char* op, const TensorNode& n) {
  for (double x : n.grad)
    if (!std::isfinite(x)) raise(ErrorKind::numeric, std::string(op) + ": non-finite gradient");
}

inline void ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

inline Tensor make_result(const char* op, Shape shape, std::vector<double> data, bool requires_grad) {
  check_finite_value(op, data);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

struct BroadcastPlan {
  std::size_t repeat = 1;
  std::size_t block = 1;
  bool a_small = false;
  bool b_small = false;
};

// Shapes must be equal, or one operand must be a scalar or a suffix of the
// other's shape (broadcast over leading axes).
inline BroadcastPlan resolve_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  auto is_suffix = [](const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i)
      if (small[i] != big[off + i]) return false;
    return true;
  };
  if (a == b) {
    p.block = shape_numel(a);
    return p;
  }
  if (shape_numel(b) == 1 || is_suffix(b, a)) {
    p.block = shape_numel(b);
    p.repeat = shape_numel(a) / std::max<std::size_t>(p.block, 1);
    p.b_small = true;
    return p;
  }
  if (shape_numel(a) == 1 || is_suffix(a, b)) {
    p.block = shape_numel(a);
    p.repeat = shape_numel(b) / std::max<std::size_t>(p.block, 1);
    p.a_small = true;
    return p;
  }
  raise(ErrorKind::dimension, std::string(op) + ": shapes " + shape_to_string(a) + " and " +
                                  shape_to_string(b) + " do not broadcast");
}

enum class BinKind { add, sub, mul };

inline Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  BroadcastPlan p = resolve_broadcast(name, a.shape(), b.shape());
  const Shape& out_shape = p.a_small ? b.shape() : a.shape();
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(p.repeat * p.block);
  for (std::size_t r = 0; r < p.repeat; ++r) {
    for (std::size_t j = 0; j < p.block; ++j) {
      std::size_t idx = r * p.block + j;
      double x = av[p.a_small ? j : idx];
      double y = bv[p.b_small ? j : idx];
      out[idx] = kind == BinKind::add ? x + y : kind == BinKind::sub ? x - y : x * y;
    }
  }
  Tape* tape = Tape::active();
  bool rec = tape && (a.requires_grad() || b.requires_grad());
  Tensor result = make_result(name, out_shape, std::move(out), rec);
  if (rec) {
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    tape->record([name, kind, p, an, bn, on] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      bool need_a = an->requires_grad;
      bool need_b = bn->requires_grad;
      if (need_a) ensure_grad(*an);
      if (need_b) ensure_grad(*bn);
      for (std::size_t r = 0; r < p.repeat; ++r) {
        for (std::size_t j = 0; j < p.block; ++j) {
          std::size_t idx = r * p.block + j;
          double go = g[idx];
          if (need_a) {
            double da = kind == BinKind::mul ? go * bn->value[p.b_small ? j : idx] : go;
            an->grad[p.a_small ? j : idx] += da;
          }
          if (need_b) {
            double db = kind == BinKind::add ? go
                        : kind == BinKind::sub ? -go
                                               : go * an->value[p.a_small ? j : idx];
            bn->grad[p.b_small ? j : idx] += db;
          }
        }
      }
      if (need_a) check_finite_grad(name, *an);
      if (need_b) check_finite_grad(name, *bn);
    });
  }
  return result;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_op("add", detail::BinKind::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_op("sub", detail::BinKind::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_op("mul", detail::BinKind::mul, a, b); }

inline Tensor mul_scalar(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

// matmul supports [m,k]x[k,n], batched [*,m,k]x[*,k,n] with equal leading
// axes, and batched-left [*,m,k]x[k,n] where the right factor is shared.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2)
    raise(ErrorKind::dimension, "matmul: operands must have rank >= 2");
  std::size_t m = as[as.size() - 2];
  std::size_t k = as[as.size() - 1];
  std::size_t kb = bs[bs.size() - 2];
  std::size_t n = bs[bs.size() - 1];
  bool shared_b = bs.size() == 2;
  if (!shared_b && Shape(bs.begin(), bs.end() - 2) != Shape(as.begin(), as.end() - 2))
    raise(ErrorKind::dimension,
          "matmul: batch axes of " + shape_to_string(as) + " and " + shape_to_string(bs) + " differ");
  if (k != kb)
    raise(ErrorKind::dimension,
          "matmul: inner dimensions of " + shape_to_string(as) + " and " + shape_to_string(bs) + " differ");
  std::size_t slices = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) slices *= as[i];

  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(slices * m * n, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t s = 0; s < slices; ++s) {
    const double* A = av.data() + s * m * k;
    const double* B = bv.data() + (shared_b ? 0 : s * k * n);
    double* C = out.data() + s * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        double aik = A[i * k + kk];
        const double* brow = B + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  Tape* tape = Tape::active();
  bool rec = tape && (a.requires_grad() || b.requires_grad());
  Tensor result = detail::make_result("matmul", std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto an = a.node();
    auto bn = b.node();
    auto on = result.node();
    tape->record([an, bn, on, slices, m, k, n, shared_b] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      bool need_a = an->requires_grad;
      bool need_b = bn->requires_grad;
      if (need_a) detail::ensure_grad(*an);
      if (need_b) detail::ensure_grad(*bn);
      for (std::size_t s = 0; s < slices; ++s) {
        const double* G = g.data() + s * m * n;
        const double* A = an->value.data() + s * m * k;
        const double* B = bn->value.data() + (shared_b ? 0 : s * k * n);
        if (need_a) {
          double* dA = an->grad.data() + s * m * k;
          // dA[i,kk] = sum_j G[i,j] * B[kk,j]
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = G + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double* brow = B + kk * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              dA[i * k + kk] += acc;
            }
          }
        }
        if (need_b) {
          double* dB = bn->grad.data() + (shared_b ? 0 : s * k * n);
          // dB[kk,j] += sum_i A[i,kk] * G[i,j]
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = G + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
              double aik = A[i * k + kk];
              double* drow = dB + kk * n;
              for (std::size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
            }
          }
        }
      }
      if (need_a) detail::check_finite_grad("matmul", *an);
      if (need_b) detail::check_finite_grad("matmul", *bn);
    });
  }
  return result;
}

// Numerically stable softmax along `axis` (max subtraction before exp).
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) raise(ErrorKind::dimension, "softmax: axis out of range");
  if (s[axis] < 2) raise(ErrorKind::dimension, "softmax: axis must have at least 2 classes");
  for (double v : x.value())
    if (!std::isfinite(v)) raise(ErrorKind::numeric, "softmax: non-finite input");
  std::size_t outer = 1, inner = 1, c = s[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t base = o * c * inner + i;
      double mx = xv[base];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < c; ++j) out[base + j * inner] /= z;
    }
  }
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("softmax", s, std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on, outer, inner, c] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      const auto& y = on->value;
      const auto& gy = on->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          std::size_t base = o * c * inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gy[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < c; ++j) {
            std::size_t idx = base + j * inner;
            xn->grad[idx] += y[idx] * (gy[idx] - dot);
          }
        }
      }
      detail::check_finite_grad("softmax", *xn);
    });
  }
  return result;
}

inline Tensor log(const Tensor& x) {
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] <= 0.0) raise(ErrorKind::numeric, "log: non-positive input");
    out[i] = std::log(xv[i]);
  }
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("log", x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] / xn->value[i];
      detail::check_finite_grad("log", *xn);
    });
  }
  return result;
}

// GELU, tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3))).
inline Tensor gelu(const Tensor& x) {
  constexpr double kA = 0.044715;
  const double kB = std::sqrt(2.0 / 3.14159265358979323846);
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kB * (v + kA * v * v * v)));
  }
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("gelu", x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on, kB] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        double v = xn->value[i];
        double u = kB * (v + kA * v * v * v);
        double t = std::tanh(u);
        double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kB * (1.0 + 3.0 * kA * v * v);
        xn->grad[i] += on->grad[i] * d;
      }
      detail::check_finite_grad("gelu", *xn);
    });
  }
  return result;
}

// Per-lane normalization over the last axis, with learned gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) raise(ErrorKind::dimension, "layer_norm: empty last axis");
  if (eps <= 0.0) raise(ErrorKind::value, "layer_norm: eps must be positive");
  std::size_t d = s.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    raise(ErrorKind::dimension, "layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  std::size_t rows = shape_numel(s) / d;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = gv[j] * ((row[j] - mu) * inv) + bv[j];
  }
  Tape* tape = Tape::active();
  bool rec = tape && (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  Tensor result = detail::make_result("layer_norm", s, std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    auto on = result.node();
    tape->record([xn, gn, bn, on, rows, d, eps] {
      if (on->grad.empty()) return;
      bool need_x = xn->requires_grad;
      bool need_g = gn->requires_grad;
      bool need_b = bn->requires_grad;
      if (need_x) detail::ensure_grad(*xn);
      if (need_g) detail::ensure_grad(*gn);
      if (need_b) detail::ensure_grad(*bn);
      std::vector<double> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xn->value.data() + r * d;
        const double* gy = on->grad.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat[j] = (row[j] - mu) * inv;
        if (need_g || need_b) {
          for (std::size_t j = 0; j < d; ++j) {
            if (need_g) gn->grad[j] += gy[j] * xhat[j];
            if (need_b) bn->grad[j] += gy[j];
          }
        }
        if (need_x) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = gy[j] * gn->value[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            xn->grad[r * d + j] += inv * (dxhat[j] - m1 - xhat[j] * m2);
        }
      }
      if (need_x) detail::check_finite_grad("layer_norm", *xn);
      if (need_g) detail::check_finite_grad("layer_norm", *gn);
      if (need_b) detail::check_finite_grad("layer_norm", *bn);
    });
  }
  return result;
}

// Row gather from an embedding table. Backward scatter-adds in id order.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids, std::size_t batch,
                        std::size_t tokens) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) raise(ErrorKind::dimension, "embedding: table must be rank 2");
  if (ids.size() != batch * tokens)
    raise(ErrorKind::dimension, "embedding: id count does not match batch x tokens");
  std::size_t v = ts[0], d = ts[1];
  const auto& tv = table.value();
  std::vector<double> out(batch * tokens * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      raise(ErrorKind::index, "embedding: id " + std::to_string(id) + " out of range for table of " +
                                  std::to_string(v));
    const double* src = tv.data() + static_cast<std::size_t>(id) * d;
    std::copy(src, src + d, out.data() + i * d);
  }
  Tape* tape = Tape::active();
  bool rec = tape && table.requires_grad();
  Tensor result = detail::make_result("embedding", {batch, tokens, d}, std::move(out), rec);
  if (rec) {
    auto tn = table.node();
    auto on = result.node();
    tape->record([tn, on, ids, d] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*tn);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = on->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
      detail::check_finite_grad("embedding", *tn);
    });
  }
  return result;
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size())
    raise(ErrorKind::dimension, "reshape: " + shape_to_string(x.shape()) + " has different element count than " +
                                    shape_to_string(new_shape));
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("reshape", std::move(new_shape), x.value(), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return result;
}

inline Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  if (perm.size() != s.size()) raise(ErrorKind::dimension, "transpose: permutation rank mismatch");
  std::vector<bool> seen(s.size(), false);
  for (std::size_t p : perm) {
    if (p >= s.size() || seen[p]) raise(ErrorKind::dimension, "transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[perm[i]];
  std::vector<std::size_t> in_strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  // src[lin_out] for each output position, walked with a multi-index.
  std::size_t n = x.size();
  std::vector<std::size_t> src_index(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t lin = 0; lin < n; ++lin) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < s.size(); ++i) src += idx[i] * in_strides[perm[i]];
    src_index[lin] = src;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const auto& xv = x.value();
  std::vector<double> out(n);
  for (std::size_t lin = 0; lin < n; ++lin) out[lin] = xv[src_index[lin]];
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("transpose", std::move(out_shape), std::move(out), rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on, src_index] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      for (std::size_t lin = 0; lin < src_index.size(); ++lin)
        xn->grad[src_index[lin]] += on->grad[lin];
    });
  }
  return result;
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("sum", {1}, {acc}, rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      double g = on->grad[0];
      for (double& d : xn->grad) d += g;
    });
  }
  return result;
}

inline Tensor mean(const Tensor& x) {
  std::size_t n = x.size();
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  acc /= static_cast<double>(n);
  Tape* tape = Tape::active();
  bool rec = tape && x.requires_grad();
  Tensor result = detail::make_result("mean", {1}, {acc}, rec);
  if (rec) {
    auto xn = x.node();
    auto on = result.node();
    tape->record([xn, on, n] {
      if (on->grad.empty()) return;
      detail::ensure_grad(*xn);
      double g = on->grad[0] / static_cast<double>(n);
      for (double& d : xn->grad) d += g;
    });
  }
  return result;
}

}  // namespace ivat
