#pragma once

// Define-by-run reverse-mode differentiation. Every primitive computes its
// forward value eagerly and appends a node to the Tape holding whatever its
// backward rule needs. A fresh Tape is built for each training step.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdass/errors.hpp"
#include "tdass/parameters.hpp"
#include "tdass/tensor.hpp"

namespace tdass {

enum class Op : std::uint8_t {
  Leaf,
  Parameter,
  Matmul,
  Add,
  Sub,
  Mul,
  Scale,
  Concat,
  Slice,
  Reshape,
  GatherRows,
  Tanh,
  Sigmoid,
  Relu,
  Log,
  ClampMin,
  Softmax,
  MeanAxis,
  Sum,
  Square,
  RowGradScale,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Parameter: return "parameter";
    case Op::Matmul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "elementwise-mul";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::GatherRows: return "gather-rows";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Relu: return "relu";
    case Op::Log: return "log";
    case Op::ClampMin: return "clamp-min";
    case Op::Softmax: return "softmax-last-axis";
    case Op::MeanAxis: return "mean-over-axis";
    case Op::Sum: return "sum";
    case Op::Square: return "square";
    case Op::RowGradScale: return "conditional-grl";
  }
  return "?";
}

/// One recorded operation. Inputs always have smaller ids than the node itself.
struct Node {
  Op op = Op::Leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  double scalar = 0.0;
  bool flag = false;                  // matmul: second operand transposed; add: bias broadcast
  std::vector<std::size_t> indices;   // gather-rows ids, concat part extents
  std::vector<double> row_scale;      // conditional-grl per-row backward factor
  std::string name;                   // parameter name

  friend bool operator==(const Node&, const Node&) = default;
};

class Tape;

/// Handle to a tensor recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return record(std::move(n));
  }

  /// Binds a stored parameter as a leaf. Repeated binds of one name return the same node.
  Var parameter(const ParameterStore& store, const std::string& name) {
    if (auto it = params_.find(name); it != params_.end()) return Var(this, it->second);
    Node n;
    n.op = Op::Parameter;
    n.value = store.value(name);
    n.name = name;
    Var v = record(std::move(n));
    params_.emplace(name, v.id());
    return v;
  }

  /// Appends a node after validating acyclicity and finiteness of its value.
  Var record(Node node) {
    const std::size_t id = nodes_.size();
    for (auto in : node.inputs) {
      if (in >= id) throw ContractError(std::string("tape node input out of order in ") + op_name(node.op));
    }
    if (!node.value.all_finite()) {
      throw NumericError(std::string("non-finite output from ") + op_name(node.op) + " of shape " +
                         shape_str(node.value.shape()));
    }
    nodes_.push_back(std::move(node));
    return Var(this, id);
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::deque<Node>& nodes() const noexcept { return nodes_; }

  bool owns(const Var& v) const noexcept { return v.tape() == this && v.id() < nodes_.size(); }

  /// Gradient of the scalar `loss` with respect to every node; nullopt where unreachable.
  std::vector<std::optional<Tensor>> backward_nodes(const Var& loss) const;

  /// Gradients for every parameter of `store`; parameters off the loss path get zeros.
  GradientMap backward(const Var& loss, const ParameterStore& store) const {
    auto grads = backward_nodes(loss);
    GradientMap out;
    for (const auto& [name, entry] : store) {
      auto it = params_.find(name);
      if (it != params_.end() && grads[it->second]) {
        out.emplace(name, std::move(*grads[it->second]));
      } else {
        out.emplace(name, Tensor::zeros(entry.value.shape()));
      }
    }
    return out;
  }

 private:
  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> params_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an unbound Var");
  return tape_->node(id_).value;
}

namespace detail {

inline Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ContractError("primitive applied to an unbound Var");
  return *v.tape();
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return tape_of(a);
}

[[noreturn]] inline void shape_mismatch(Op op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline Node make_node(Op op, std::vector<std::size_t> inputs, Tensor value) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  return n;
}

inline void accumulate(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// outer/inner extents around `axis`, for slice and concat
inline std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

template <class F>
Var unary(Op op, const Var& a, F&& f) {
  Tape& t = tape_of(a);
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return t.record(make_node(op, {a.id()}, std::move(out)));
}

}  // namespace detail

/// a (m x k) times b (k x n); with `transpose_b`, b is (n x k) and a * b^T is returned.
inline Var matmul(const Var& a, const Var& b, bool transpose_b = false) {
  Tape& t = detail::same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) detail::shape_mismatch(Op::Matmul, sa, sb);
  const std::size_t m = sa[0], k = sa[1];
  const std::size_t n = transpose_b ? sb[0] : sb[1];
  if ((transpose_b ? sb[1] : sb[0]) != k) detail::shape_mismatch(Op::Matmul, sa, sb);
  Tensor out(Shape{m, n});
  const auto A = a.value().data();
  const auto B = b.value().data();
  auto C = out.data();
  if (transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
        C[i * n + j] = acc;
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[p * n + j];
      }
    }
  }
  Node node = detail::make_node(Op::Matmul, {a.id(), b.id()}, std::move(out));
  node.flag = transpose_b;
  return t.record(std::move(node));
}

/// Elementwise sum; b may also be a vector matching a's last axis (bias broadcast over rows).
inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool broadcast = sa != sb;
  if (broadcast && !(sb.size() == 1 && !sa.empty() && sa.back() == sb[0])) detail::shape_mismatch(Op::Add, sa, sb);
  Tensor out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[broadcast ? i % bv.size() : i];
  Node node = detail::make_node(Op::Add, {a.id(), b.id()}, std::move(out));
  node.flag = broadcast;
  return t.record(std::move(node));
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  if (a.shape() != b.shape()) detail::shape_mismatch(Op::Sub, a.shape(), b.shape());
  Tensor out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return t.record(detail::make_node(Op::Sub, {a.id(), b.id()}, std::move(out)));
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  if (a.shape() != b.shape()) detail::shape_mismatch(Op::Mul, a.shape(), b.shape());
  Tensor out = a.value();
  auto o = out.data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return t.record(detail::make_node(Op::Mul, {a.id(), b.id()}, std::move(out)));
}

inline Var scale(const Var& a, double factor) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  Node node = detail::make_node(Op::Scale, {a.id()}, std::move(out));
  node.scalar = factor;
  return t.record(std::move(node));
}

/// Joins tensors along `axis`; every other extent must agree.
inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Tape& t = detail::tape_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<std::size_t> inputs, extents;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("operands recorded on different tapes");
    const Shape& sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i) ok = (i == axis) || sp[i] == s0[i];
    if (!ok) detail::shape_mismatch(Op::Concat, s0, sp);
    out_shape[axis] += sp[axis];
    inputs.push_back(p.id());
    extents.push_back(sp[axis]);
  }
  Tensor out(out_shape);
  const auto [outer, inner] = detail::outer_inner(out_shape, axis);
  auto o = out.data();
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto src = parts[pi].value().data();
    const std::size_t block = extents[pi] * inner;
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * block), block,
                  o.begin() + static_cast<std::ptrdiff_t>(r * out_shape[axis] * inner + offset));
    }
    offset += block;
  }
  Node node = detail::make_node(Op::Concat, std::move(inputs), std::move(out));
  node.axis = axis;
  node.indices = std::move(extents);
  return t.record(std::move(node));
}

inline Var concat_last(const Var& a, const Var& b) {
  const Var parts[] = {a, b};
  return concat(parts, a.shape().empty() ? 0 : a.shape().size() - 1);
}

/// Entries [begin, end) along `axis`.
inline Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = detail::tape_of(a);
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const auto [outer, inner] = detail::outer_inner(s, axis);
  const auto src = a.value().data();
  auto o = out.data();
  const std::size_t block = (end - begin) * inner;
  for (std::size_t r = 0; r < outer; ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * s[axis] * inner + begin * inner), block,
                o.begin() + static_cast<std::ptrdiff_t>(r * block));
  }
  Node node = detail::make_node(Op::Slice, {a.id()}, std::move(out));
  node.axis = axis;
  node.begin = begin;
  node.end = end;
  return t.record(std::move(node));
}

inline Var reshape(const Var& a, Shape shape) {
  Tape& t = detail::tape_of(a);
  if (shape_size(shape) != a.value().size()) detail::shape_mismatch(Op::Reshape, a.shape(), shape);
  return t.record(detail::make_node(Op::Reshape, {a.id()}, a.value().reshaped(std::move(shape))));
}

/// Rows of a (V x d) table selected by `ids`, giving (ids.size() x d).
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  Tape& t = detail::tape_of(table);
  const Shape& s = table.shape();
  if (s.size() != 2 || ids.empty()) throw DimensionError("gather-rows: bad table shape " + shape_str(s));
  const std::size_t d = s[1];
  Tensor out(Shape{ids.size(), d});
  const auto src = table.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= s[0]) {
      throw DimensionError("gather-rows: id " + std::to_string(ids[r]) + " outside table " + shape_str(s));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, o.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Node node = detail::make_node(Op::GatherRows, {table.id()}, std::move(out));
  node.indices.assign(ids.begin(), ids.end());
  return t.record(std::move(node));
}

inline Var tanh(const Var& a) {
  return detail::unary(Op::Tanh, a, [](double x) { return std::tanh(x); });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& a) { return detail::unary(Op::Sigmoid, a, sigmoid_scalar); }

inline Var relu(const Var& a) {
  return detail::unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}

inline Var log(const Var& a) {
  return detail::unary(Op::Log, a, [](double x) { return std::log(x); });
}

inline Var square(const Var& a) {
  return detail::unary(Op::Square, a, [](double x) { return x * x; });
}

/// max(x, floor); gradient passes only where x > floor.
inline Var clamp_min(const Var& a, double floor) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::max(v, floor);
  Node node = detail::make_node(Op::ClampMin, {a.id()}, std::move(out));
  node.scalar = floor;
  return t.record(std::move(node));
}

/// Softmax over the last axis, max-subtracted.
inline Var softmax_last(const Var& a) {
  Tape& t = detail::tape_of(a);
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("softmax-last-axis: scalar input");
  const std::size_t w = s.back();
  Tensor out = a.value();
  auto o = out.data();
  for (std::size_t r = 0; r < o.size() / w; ++r) {
    auto row = o.subspan(r * w, w);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  return t.record(detail::make_node(Op::Softmax, {a.id()}, std::move(out)));
}

/// Mean over `axis`; that axis is removed from the shape.
inline Var mean_axis(const Var& a, std::size_t axis) {
  Tape& t = detail::tape_of(a);
  const Shape& s = a.shape();
  if (axis >= s.size()) throw DimensionError("mean-over-axis: axis " + std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const auto [outer, inner] = detail::outer_inner(s, axis);
  const auto src = a.value().data();
  auto o = out.data();
  const double inv = 1.0 / static_cast<double>(s[axis]);
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t j = 0; j < s[axis]; ++j) {
      for (std::size_t i = 0; i < inner; ++i) o[r * inner + i] += src[(r * s[axis] + j) * inner + i];
    }
  }
  for (auto& v : o) v *= inv;
  Node node = detail::make_node(Op::MeanAxis, {a.id()}, std::move(out));
  node.axis = axis;
  return t.record(std::move(node));
}

inline Var sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return t.record(detail::make_node(Op::Sum, {a.id()}, Tensor::scalar(total)));
}

inline std::vector<std::optional<Tensor>> Tape::backward_nodes(const Var& loss) const {
  if (!owns(loss)) throw ContractError("backward: loss was not recorded on this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  std::vector<std::optional<Tensor>> grads(loss.id() + 1);
  grads[loss.id()] = Tensor::filled(loss.shape(), 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    if (!grads[id]) continue;
    const Node& n = nodes_[id];
    const Tensor& g = *grads[id];
    const auto gd = g.data();
    const auto& y = n.value;

    auto input_value = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
    auto push = [&](std::size_t i, const Tensor& contrib) { detail::accumulate(grads[n.inputs[i]], contrib); };
    auto elementwise = [&](std::size_t i, auto&& local) {
      const Tensor& x = input_value(i);
      Tensor d(x.shape());
      auto dd = d.data();
      const auto xd = x.data();
      const auto yd = y.data();
      for (std::size_t k = 0; k < dd.size(); ++k) dd[k] = gd[k] * local(xd[k], yd[k]);
      push(i, d);
    };

    switch (n.op) {
      case Op::Leaf:
      case Op::Parameter:
        break;
      case Op::Matmul: {
        const Tensor& A = input_value(0);
        const Tensor& B = input_value(1);
        const std::size_t m = A.dim(0), k = A.dim(1);
        const std::size_t nn = g.dim(1);
        const auto a = A.data();
        const auto b = B.data();
        Tensor dA(A.shape()), dB(B.shape());
        auto da = dA.data();
        auto db = dB.data();
        if (n.flag) {
          // C = A B^T with B (n x k)
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < nn; ++j) {
              const double gv = gd[i * nn + j];
              if (gv == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) {
                da[i * k + p] += gv * b[j * k + p];
                db[j * k + p] += gv * a[i * k + p];
              }
            }
          }
        } else {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double av = a[i * k + p];
              for (std::size_t j = 0; j < nn; ++j) {
                acc += gd[i * nn + j] * b[p * nn + j];
                db[p * nn + j] += av * gd[i * nn + j];
              }
              da[i * k + p] = acc;
            }
          }
        }
        push(0, dA);
        push(1, dB);
        break;
      }
      case Op::Add: {
        push(0, g);
        if (n.flag) {
          const Tensor& b = input_value(1);
          Tensor db(b.shape());
          auto dbd = db.data();
          for (std::size_t k = 0; k < gd.size(); ++k) dbd[k % dbd.size()] += gd[k];
          push(1, db);
        } else {
          push(1, g);
        }
        break;
      }
      case Op::Sub: {
        push(0, g);
        Tensor neg = g;
        for (auto& v : neg.data()) v = -v;
        push(1, neg);
        break;
      }
      case Op::Mul: {
        const Tensor& a = input_value(0);
        const Tensor& b = input_value(1);
        Tensor da(a.shape()), db(b.shape());
        for (std::size_t k = 0; k < gd.size(); ++k) {
          da[k] = gd[k] * b[k];
          db[k] = gd[k] * a[k];
        }
        push(0, da);
        push(1, db);
        break;
      }
      case Op::Scale: {
        Tensor d = g;
        for (auto& v : d.data()) v *= n.scalar;
        push(0, d);
        break;
      }
      case Op::Concat: {
        const Shape& s = y.shape();
        const auto [outer, inner] = detail::outer_inner(s, n.axis);
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < n.inputs.size(); ++pi) {
          Tensor d(input_value(pi).shape());
          auto dd = d.data();
          const std::size_t block = n.indices[pi] * inner;
          for (std::size_t r = 0; r < outer; ++r) {
            std::copy_n(gd.begin() + static_cast<std::ptrdiff_t>(r * s[n.axis] * inner + offset), block,
                        dd.begin() + static_cast<std::ptrdiff_t>(r * block));
          }
          offset += block;
          push(pi, d);
        }
        break;
      }
      case Op::Slice: {
        const Tensor& x = input_value(0);
        const Shape& s = x.shape();
        const auto [outer, inner] = detail::outer_inner(s, n.axis);
        Tensor d(s);
        auto dd = d.data();
        const std::size_t block = (n.end - n.begin) * inner;
        for (std::size_t r = 0; r < outer; ++r) {
          std::copy_n(gd.begin() + static_cast<std::ptrdiff_t>(r * block), block,
                      dd.begin() + static_cast<std::ptrdiff_t>(r * s[n.axis] * inner + n.begin * inner));
        }
        push(0, d);
        break;
      }
      case Op::Reshape:
        push(0, g.reshaped(input_value(0).shape()));
        break;
      case Op::GatherRows: {
        const Tensor& table = input_value(0);
        const std::size_t d = table.dim(1);
        Tensor dt(table.shape());
        auto dtd = dt.data();
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          for (std::size_t c = 0; c < d; ++c) dtd[n.indices[r] * d + c] += gd[r * d + c];
        }
        push(0, dt);
        break;
      }
      case Op::Tanh:
        elementwise(0, [](double, double yv) { return 1.0 - yv * yv; });
        break;
      case Op::Sigmoid:
        elementwise(0, [](double, double yv) { return yv * (1.0 - yv); });
        break;
      case Op::Relu:
        elementwise(0, [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
        break;
      case Op::Log:
        elementwise(0, [](double xv, double) { return 1.0 / xv; });
        break;
      case Op::ClampMin: {
        const double floor = n.scalar;
        elementwise(0, [floor](double xv, double) { return xv > floor ? 1.0 : 0.0; });
        break;
      }
      case Op::Square:
        elementwise(0, [](double xv, double) { return 2.0 * xv; });
        break;
      case Op::Softmax: {
        const std::size_t w = y.shape().back();
        Tensor d(y.shape());
        for (std::size_t r = 0; r < y.size() / w; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < w; ++c) dot += gd[r * w + c] * y[r * w + c];
          for (std::size_t c = 0; c < w; ++c) d[r * w + c] = y[r * w + c] * (gd[r * w + c] - dot);
        }
        push(0, d);
        break;
      }
      case Op::MeanAxis: {
        const Shape& s = input_value(0).shape();
        const auto [outer, inner] = detail::outer_inner(s, n.axis);
        const double inv = 1.0 / static_cast<double>(s[n.axis]);
        Tensor d(s);
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < s[n.axis]; ++j) {
            for (std::size_t i = 0; i < inner; ++i) d[(r * s[n.axis] + j) * inner + i] = gd[r * inner + i] * inv;
          }
        }
        push(0, d);
        break;
      }
      case Op::Sum:
        push(0, Tensor::filled(input_value(0).shape(), gd[0]));
        break;
      case Op::RowGradScale: {
        const std::size_t rows = n.row_scale.size();
        const std::size_t w = g.size() / rows;
        Tensor d = g;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) d[r * w + c] *= n.row_scale[r];
        }
        push(0, d);
        break;
      }
    }
  }
  return grads;
}

/// Convenience wrapper matching the free-function style of the primitives.
inline GradientMap backward(const Var& loss, const ParameterStore& params) {
  return detail::tape_of(loss).backward(loss, params);
}

}  // namespace tdass
