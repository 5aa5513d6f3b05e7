#pragma once

// Define-by-run reverse-mode differentiation.
//
// Every operation appends a node to a Tape. backward() walks the tape in
// reverse creation order and expresses each local gradient rule with tape
// operations, so the gradients it returns are ordinary nodes that can be
// combined into a new loss and differentiated again.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ltgan/tensor.hpp"

namespace ltgan {

using NodeId = std::uint32_t;

/// Negative-side slope of every leaky-ReLU in the library.
inline constexpr double kLeakySlope = 0.2;

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  matmul,
  scalar_mul,
  add_scalar,
  negate,
  exp,
  log,
  tanh,
  sigmoid,
  leaky_relu,
  square,
  sqrt,
  sum,
  mean,
  l2_norm_rows,
  concat_rows,
  broadcast,
  // Ops below exist mostly so gradient rules stay expressible on the tape.
  sum_to,
  transpose,
  slice_rows,
  pad_rows,
  slice_cols,
  pad_cols,
  clamp_min,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::matmul: return "matmul";
    case OpKind::scalar_mul: return "scalar-mul";
    case OpKind::add_scalar: return "add-scalar";
    case OpKind::negate: return "negate";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::leaky_relu: return "leaky-relu";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::l2_norm_rows: return "l2-norm-rows";
    case OpKind::concat_rows: return "concat-rows";
    case OpKind::broadcast: return "broadcast";
    case OpKind::sum_to: return "sum-to";
    case OpKind::transpose: return "transpose";
    case OpKind::slice_rows: return "slice-rows";
    case OpKind::pad_rows: return "pad-rows";
    case OpKind::slice_cols: return "slice-cols";
    case OpKind::pad_cols: return "pad-cols";
    case OpKind::clamp_min: return "clamp-min";
  }
  return "?";
}

/// Non-tensor operands: a scalar for scalar-mul/add-scalar/clamp-min, and
/// extents for slicing, padding and broadcasting.
struct OpAttrs {
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t count = 0;
  Shape target{};
};

struct TapeNode {
  OpKind kind = OpKind::leaf;
  std::array<NodeId, 2> inputs{};
  std::uint8_t arity = 0;
  OpAttrs attrs;
  Tensor value;
  bool requires_grad = false;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

class GradientMap;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives gradients.
  Var variable(Tensor value) { return leaf(std::move(value), true); }
  /// Leaf that never receives gradients.
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  NodeId forward_op(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs = {});

  Var apply(OpKind kind, std::initializer_list<Var> inputs, OpAttrs attrs = {}) {
    std::array<NodeId, 2> ids{};
    std::size_t n = 0;
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw std::invalid_argument(std::string(op_name(kind)) + ": operand from another tape");
      if (n == 2) throw std::invalid_argument(std::string(op_name(kind)) + ": too many operands");
      ids[n++] = v.id();
    }
    return Var(this, forward_op(kind, std::span<const NodeId>(ids.data(), n), std::move(attrs)));
  }

  /// Gradients of scalar `loss` w.r.t. every ancestor that requires grad.
  /// With `wrt` non-empty, only paths reaching those nodes are differentiated.
  GradientMap backward(Var loss, std::span<const Var> wrt = {});

  const TapeNode& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  Var leaf(Tensor value, bool requires_grad) {
    TapeNode n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<NodeId>(nodes_.size() - 1));
  }

  Var grad_rule_contribution(const TapeNode& node, NodeId self, std::size_t which, Var g);

  // deque keeps node references stable while backward() appends.
  std::deque<TapeNode> nodes_;
};

/// Gradients of one backward() call, keyed by node. Entries are tape nodes.
class GradientMap {
 public:
  GradientMap(Tape* tape, std::vector<std::optional<NodeId>> grads) : tape_(tape), grads_(std::move(grads)) {}

  bool contains(Var v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

  /// Gradient node for v; a zero constant when v does not influence the loss.
  Var operator[](Var v) const {
    if (contains(v)) return Var(tape_, *grads_[v.id()]);
    return tape_->constant(Tensor(v.shape(), 0.0));
  }

  const Tensor& value(Var v) const {
    if (!contains(v)) throw std::out_of_range("gradient map: node " + std::to_string(v.id()) + " has no gradient");
    return tape_->node(*grads_[v.id()]).value;
  }

  std::size_t size() const {
    return static_cast<std::size_t>(std::count_if(grads_.begin(), grads_.end(), [](const auto& g) { return g.has_value(); }));
  }

 private:
  Tape* tape_;
  std::vector<std::optional<NodeId>> grads_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }
inline bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

// ---------------------------------------------------------------------------
// Builders

inline Var add(Var a, Var b) { return a.tape().apply(OpKind::add, {a, b}); }
inline Var sub(Var a, Var b) { return a.tape().apply(OpKind::sub, {a, b}); }
inline Var mul(Var a, Var b) { return a.tape().apply(OpKind::mul, {a, b}); }
inline Var div(Var a, Var b) { return a.tape().apply(OpKind::div, {a, b}); }
inline Var matmul(Var a, Var b) { return a.tape().apply(OpKind::matmul, {a, b}); }
inline Var scalar_mul(Var a, double s) { return a.tape().apply(OpKind::scalar_mul, {a}, {.scalar = s}); }
inline Var add_scalar(Var a, double s) { return a.tape().apply(OpKind::add_scalar, {a}, {.scalar = s}); }
inline Var negate(Var a) { return a.tape().apply(OpKind::negate, {a}); }
inline Var exp(Var a) { return a.tape().apply(OpKind::exp, {a}); }
inline Var log(Var a) { return a.tape().apply(OpKind::log, {a}); }
inline Var tanh(Var a) { return a.tape().apply(OpKind::tanh, {a}); }
inline Var sigmoid(Var a) { return a.tape().apply(OpKind::sigmoid, {a}); }
inline Var leaky_relu(Var a) { return a.tape().apply(OpKind::leaky_relu, {a}); }
inline Var square(Var a) { return a.tape().apply(OpKind::square, {a}); }
inline Var sqrt(Var a) { return a.tape().apply(OpKind::sqrt, {a}); }
inline Var sum(Var a) { return a.tape().apply(OpKind::sum, {a}); }
inline Var mean(Var a) { return a.tape().apply(OpKind::mean, {a}); }
inline Var l2_norm_rows(Var a) { return a.tape().apply(OpKind::l2_norm_rows, {a}); }
inline Var concat_rows(Var a, Var b) { return a.tape().apply(OpKind::concat_rows, {a, b}); }
inline Var broadcast(Var a, std::size_t rows, std::size_t cols) {
  return a.tape().apply(OpKind::broadcast, {a}, {.target = {rows, cols}});
}
inline Var sum_to(Var a, Shape target) { return a.tape().apply(OpKind::sum_to, {a}, {.target = std::move(target)}); }
inline Var transpose(Var a) { return a.tape().apply(OpKind::transpose, {a}); }
inline Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  return a.tape().apply(OpKind::slice_rows, {a}, {.begin = begin, .count = count});
}
inline Var pad_rows(Var a, std::size_t begin, std::size_t total) {
  return a.tape().apply(OpKind::pad_rows, {a}, {.begin = begin, .count = total});
}
inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  return a.tape().apply(OpKind::slice_cols, {a}, {.begin = begin, .count = count});
}
inline Var pad_cols(Var a, std::size_t begin, std::size_t total) {
  return a.tape().apply(OpKind::pad_cols, {a}, {.begin = begin, .count = total});
}
inline Var clamp_min(Var a, double lo) { return a.tape().apply(OpKind::clamp_min, {a}, {.scalar = lo}); }

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return negate(a); }
inline Var operator*(double s, Var a) { return scalar_mul(a, s); }
inline Var operator*(Var a, double s) { return scalar_mul(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }

// ---------------------------------------------------------------------------
// Forward kernels

namespace detail {

[[noreturn]] inline void shape_mismatch(OpKind k, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(k)) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

inline void require_rank2(OpKind k, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op_name(k)) + ": expected rank-2 operand, got " + shape_string(t.shape()));
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip(OpKind k, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape()) shape_mismatch(k, a.shape(), b.shape());
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(OpKind::matmul, a);
  require_rank2(OpKind::matmul, b);
  if (a.cols() != b.rows()) shape_mismatch(OpKind::matmul, a.shape(), b.shape());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline bool broadcastable(const Shape& from, const Shape& to) {
  if (from.size() != 2 || to.size() != 2) return false;
  return (from[0] == to[0] || from[0] == 1) && (from[1] == to[1] || from[1] == 1);
}

inline Tensor broadcast(const Tensor& a, const Shape& to) {
  if (!broadcastable(a.shape(), to)) shape_mismatch(OpKind::broadcast, a.shape(), to);
  Tensor out(to);
  const bool rr = a.rows() == 1, rc = a.cols() == 1;
  for (std::size_t i = 0; i < to[0]; ++i)
    for (std::size_t j = 0; j < to[1]; ++j) out(i, j) = a(rr ? 0 : i, rc ? 0 : j);
  return out;
}

inline Tensor sum_to(const Tensor& a, const Shape& to) {
  if (!broadcastable(to, a.shape())) shape_mismatch(OpKind::sum_to, a.shape(), to);
  Tensor out(to);
  const bool rr = to[0] == 1, rc = to[1] == 1;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(rr ? 0 : i, rc ? 0 : j) += a(i, j);
  return out;
}

}  // namespace detail

inline NodeId Tape::forward_op(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs) {
  const std::size_t want = [&] {
    switch (kind) {
      case OpKind::add: case OpKind::sub: case OpKind::mul: case OpKind::div:
      case OpKind::matmul: case OpKind::concat_rows:
        return std::size_t{2};
      case OpKind::leaf:
        return std::size_t{0};
      default:
        return std::size_t{1};
    }
  }();
  if (kind == OpKind::leaf) throw std::invalid_argument("forward_op: leaves are created with variable()/constant()");
  if (inputs.size() != want) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(want) + " operands, got " +
                                std::to_string(inputs.size()));
  }
  for (NodeId id : inputs) {
    if (id >= nodes_.size()) throw std::invalid_argument(std::string(op_name(kind)) + ": unknown node " + std::to_string(id));
  }

  const Tensor& a = nodes_[inputs[0]].value;
  const Tensor* bp = want == 2 ? &nodes_[inputs[1]].value : nullptr;
  Tensor out;
  const double s = attrs.scalar;

  switch (kind) {
    case OpKind::add: {
      const Tensor& b = *bp;
      if (a.shape() == b.shape()) {
        out = detail::zip(kind, a, b, [](double x, double y) { return x + y; });
      } else if (a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
        // row-wise bias
        out = a;
        for (std::size_t i = 0; i < a.rows(); ++i) {
          auto r = out.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
        }
      } else {
        detail::shape_mismatch(kind, a.shape(), b.shape());
      }
      break;
    }
    case OpKind::sub: out = detail::zip(kind, a, *bp, [](double x, double y) { return x - y; }); break;
    case OpKind::mul: out = detail::zip(kind, a, *bp, [](double x, double y) { return x * y; }); break;
    case OpKind::div: out = detail::zip(kind, a, *bp, [](double x, double y) { return x / y; }); break;
    case OpKind::matmul: out = detail::matmul(a, *bp); break;
    case OpKind::scalar_mul: out = detail::map(a, [s](double x) { return s * x; }); break;
    case OpKind::add_scalar: out = detail::map(a, [s](double x) { return x + s; }); break;
    case OpKind::negate: out = detail::map(a, [](double x) { return -x; }); break;
    case OpKind::exp: out = detail::map(a, [](double x) { return std::exp(x); }); break;
    case OpKind::log: out = detail::map(a, [](double x) { return std::log(x); }); break;
    case OpKind::tanh: out = detail::map(a, [](double x) { return std::tanh(x); }); break;
    case OpKind::sigmoid:
      out = detail::map(a, [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
      break;
    case OpKind::leaky_relu: out = detail::map(a, [](double x) { return x > 0 ? x : kLeakySlope * x; }); break;
    case OpKind::square: out = detail::map(a, [](double x) { return x * x; }); break;
    case OpKind::sqrt: out = detail::map(a, [](double x) { return std::sqrt(x); }); break;
    case OpKind::clamp_min: out = detail::map(a, [s](double x) { return x < s ? s : x; }); break;
    case OpKind::sum:
    case OpKind::mean: {
      if (a.empty()) throw ShapeError(std::string(op_name(kind)) + ": empty operand " + shape_string(a.shape()));
      double acc = 0;
      for (double v : a.data()) acc += v;
      out = Tensor::scalar(kind == OpKind::sum ? acc : acc / static_cast<double>(a.size()));
      break;
    }
    case OpKind::l2_norm_rows: {
      detail::require_rank2(kind, a);
      out = Tensor::matrix(a.rows(), 1);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0;
        for (double v : a.row(i)) acc += v * v;
        out(i, 0) = std::sqrt(acc);
      }
      break;
    }
    case OpKind::concat_rows: {
      detail::require_rank2(kind, a);
      detail::require_rank2(kind, *bp);
      if (a.cols() != bp->cols()) detail::shape_mismatch(kind, a.shape(), bp->shape());
      std::vector<double> data(a.data().begin(), a.data().end());
      data.insert(data.end(), bp->data().begin(), bp->data().end());
      out = Tensor({a.rows() + bp->rows(), a.cols()}, std::move(data));
      break;
    }
    case OpKind::broadcast: out = detail::broadcast(a, attrs.target); break;
    case OpKind::sum_to: out = detail::sum_to(a, attrs.target); break;
    case OpKind::transpose: detail::require_rank2(kind, a); out = detail::transpose(a); break;
    case OpKind::slice_rows: {
      detail::require_rank2(kind, a);
      if (attrs.begin + attrs.count > a.rows()) {
        throw ShapeError("slice-rows: rows [" + std::to_string(attrs.begin) + ", " + std::to_string(attrs.begin + attrs.count) +
                         ") outside " + shape_string(a.shape()));
      }
      auto first = a.data().begin() + static_cast<std::ptrdiff_t>(attrs.begin * a.cols());
      out = Tensor({attrs.count, a.cols()}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(attrs.count * a.cols())));
      break;
    }
    case OpKind::pad_rows: {
      detail::require_rank2(kind, a);
      if (attrs.begin + a.rows() > attrs.count) throw ShapeError("pad-rows: operand " + shape_string(a.shape()) + " does not fit");
      out = Tensor::matrix(attrs.count, a.cols());
      std::copy(a.data().begin(), a.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(attrs.begin * a.cols()));
      break;
    }
    case OpKind::slice_cols: {
      detail::require_rank2(kind, a);
      if (attrs.begin + attrs.count > a.cols()) {
        throw ShapeError("slice-cols: cols [" + std::to_string(attrs.begin) + ", " + std::to_string(attrs.begin + attrs.count) +
                         ") outside " + shape_string(a.shape()));
      }
      out = Tensor::matrix(a.rows(), attrs.count);
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < attrs.count; ++j) out(i, j) = a(i, attrs.begin + j);
      break;
    }
    case OpKind::pad_cols: {
      detail::require_rank2(kind, a);
      if (attrs.begin + a.cols() > attrs.count) throw ShapeError("pad-cols: operand " + shape_string(a.shape()) + " does not fit");
      out = Tensor::matrix(a.rows(), attrs.count);
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, attrs.begin + j) = a(i, j);
      break;
    }
    case OpKind::leaf: break;
  }

  TapeNode n;
  n.kind = kind;
  n.arity = static_cast<std::uint8_t>(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    n.inputs[i] = inputs[i];
    n.requires_grad = n.requires_grad || nodes_[inputs[i]].requires_grad;
  }
  n.attrs = std::move(attrs);
  n.value = std::move(out);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

// Gradient of the loss w.r.t. input `which` of `node`, given upstream gradient g.
inline Var Tape::grad_rule_contribution(const TapeNode& node, NodeId self, std::size_t which, Var g) {
  const Var x(this, node.inputs[0]);
  const Var y(this, self);
  switch (node.kind) {
    case OpKind::add: {
      const Var in(this, node.inputs[which]);
      return in.shape() == g.shape() ? g : sum_to(g, in.shape());
    }
    case OpKind::sub: return which == 0 ? g : negate(g);
    case OpKind::mul: return mul(g, Var(this, node.inputs[1 - which]));
    case OpKind::div: {
      const Var b(this, node.inputs[1]);
      return which == 0 ? div(g, b) : negate(div(mul(g, y), b));
    }
    case OpKind::matmul: {
      const Var b(this, node.inputs[1]);
      return which == 0 ? matmul(g, transpose(b)) : matmul(transpose(x), g);
    }
    case OpKind::scalar_mul: return scalar_mul(g, node.attrs.scalar);
    case OpKind::add_scalar: return g;
    case OpKind::negate: return negate(g);
    case OpKind::exp: return mul(g, y);
    case OpKind::log: return div(g, x);
    case OpKind::tanh: return mul(g, add_scalar(negate(square(y)), 1.0));
    case OpKind::sigmoid: return mul(g, mul(y, add_scalar(negate(y), 1.0)));
    case OpKind::leaky_relu: {
      Tensor mask = detail::map(x.value(), [](double v) { return v > 0 ? 1.0 : kLeakySlope; });
      return mul(g, constant(std::move(mask)));
    }
    case OpKind::clamp_min: {
      const double lo = node.attrs.scalar;
      Tensor mask = detail::map(x.value(), [lo](double v) { return v < lo ? 0.0 : 1.0; });
      return mul(g, constant(std::move(mask)));
    }
    case OpKind::square: return mul(g, scalar_mul(x, 2.0));
    case OpKind::sqrt: return div(scalar_mul(g, 0.5), y);
    case OpKind::sum: return broadcast(g, x.rows(), x.cols());
    case OpKind::mean:
      return scalar_mul(broadcast(g, x.rows(), x.cols()), 1.0 / static_cast<double>(x.value().size()));
    case OpKind::l2_norm_rows: {
      // d|x_i| / dx_i = x_i / |x_i|; the clamp keeps zero rows finite.
      Var scale = div(g, clamp_min(y, 1e-300));
      return mul(x, broadcast(scale, x.rows(), x.cols()));
    }
    case OpKind::concat_rows: {
      const std::size_t ra = x.rows();
      const Var in(this, node.inputs[which]);
      return slice_rows(g, which == 0 ? 0 : ra, in.rows());
    }
    case OpKind::broadcast: return sum_to(g, x.shape());
    case OpKind::sum_to: return broadcast(g, x.rows(), x.cols());
    case OpKind::transpose: return transpose(g);
    case OpKind::slice_rows: return pad_rows(g, node.attrs.begin, x.rows());
    case OpKind::pad_rows: return slice_rows(g, node.attrs.begin, x.rows());
    case OpKind::slice_cols: return pad_cols(g, node.attrs.begin, x.cols());
    case OpKind::pad_cols: return slice_cols(g, node.attrs.begin, x.cols());
    case OpKind::leaf: break;
  }
  throw std::logic_error("no gradient rule for leaf");
}

inline GradientMap Tape::backward(Var loss, std::span<const Var> wrt) {
  if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));

  const NodeId top = loss.id();
  std::vector<char> reaches;
  if (!wrt.empty()) {
    reaches.assign(static_cast<std::size_t>(top) + 1, 0);
    for (const Var& v : wrt) {
      if (v.id() <= top) reaches[v.id()] = 1;
    }
    for (NodeId id = 0; id <= top; ++id) {
      const TapeNode& n = nodes_[id];
      for (std::size_t i = 0; i < n.arity && !reaches[id]; ++i) reaches[id] = reaches[n.inputs[i]];
    }
  }
  std::vector<std::optional<NodeId>> grads(static_cast<std::size_t>(top) + 1);
  grads[top] = constant(Tensor(loss.shape(), 1.0)).id();

  // Node ids increase in creation order, so a descending sweep is a
  // reverse topological order of the graph below `loss`.
  for (NodeId id = top + 1; id-- > 0;) {
    if (!grads[id]) continue;
    const TapeNode& node = nodes_[id];
    if (!node.requires_grad || node.kind == OpKind::leaf) continue;
    const Var g(this, *grads[id]);
    for (std::size_t i = 0; i < node.arity; ++i) {
      const NodeId in = node.inputs[i];
      if (!nodes_[in].requires_grad) continue;
      if (!reaches.empty() && !reaches[in]) continue;
      Var contrib = grad_rule_contribution(node, id, i, g);
      grads[in] = grads[in] ? add(Var(this, *grads[in]), contrib).id() : contrib.id();
    }
  }
  return GradientMap(this, std::move(grads));
}

}  // namespace ltgan
