#pragma once

#include "advlab/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <unordered_map>
#include <variant>
#include <vector>

namespace advlab::ad {

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  MulConst,
  AddConst,
  Matmul,
  Conv2d,
  Conv2dBackInput,
  Conv2dBackKernel,
  Relu,
  AvgPool,
  AvgPoolBack,
  MaxPool,
  Gather,
  Scatter,
  Log,
  Exp,
  Pow,
  Sum,
  Expand,
  ReduceTo,
  Reshape,
};

const char* op_name(Op op);

struct MatmulAttr {
  bool trans_a = false;
  bool trans_b = false;
};

struct ConvAttr {
  ConvGeometry geom;
  std::size_t h = 0;  // input extent (backward-input) or kernel extent (backward-kernel)
  std::size_t w = 0;
};

struct PoolAttr {
  PoolWindow mask;
  Shape input_shape;
  std::shared_ptr<const std::vector<std::uint32_t>> index;  // argmax, for MaxPool/Gather/Scatter
};

using Attr = std::variant<std::monostate, double, MatmulAttr, ConvAttr, PoolAttr, Shape,
                          std::shared_ptr<const Tensor>>;

/// One recorded primitive. For Relu, `mask` holds σ (1 where the
/// pre-activation is strictly positive, 0 otherwise).
struct GraphNode {
  Op op = Op::Leaf;
  std::vector<int> parents;
  Tensor value;
  Attr attr;
  bool requires_grad = false;
  std::shared_ptr<const Tensor> mask;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of an evaluated computation. Nodes are evaluated
/// eagerly when appended; a node's parents always precede it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a value. `requires_grad` marks it as a differentiation target.
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const GraphNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  /// Recomputes every non-leaf node from its parents, after optionally
  /// replacing leaf values. Derived state (ReLU masks, argmax indices) is
  /// recomputed as well.
  void replay(const std::unordered_map<int, Tensor>& leaf_values = {});

  /// Internal: append a node evaluated from its parents.
  Var record(Op op, std::vector<int> parents, Attr attr = {});

  /// When false, new nodes carry no parent links (pure values).
  bool recording() const { return recording_; }

 private:
  friend class RecordingGuard;
  friend std::vector<Var> gradients(const Var&, const std::vector<Var>&, bool);
  friend std::vector<Tensor> grad(const Var&, const std::vector<Var>&);

  void truncate(std::size_t n) { nodes_.resize(n); }
  void evaluate(GraphNode& node) const;

  std::deque<GraphNode> nodes_;  // deque: references stay valid across appends
  bool recording_ = true;
};

class RecordingGuard {
 public:
  RecordingGuard(Tape& tape, bool on) : tape_(tape), prev_(tape.recording_) { tape.recording_ = on; }
  ~RecordingGuard() { tape_.recording_ = prev_; }
  RecordingGuard(const RecordingGuard&) = delete;
  RecordingGuard& operator=(const RecordingGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// Primitive operations. All operands must live on the same tape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Element-wise product with a constant tensor (no gradient flows into it).
Var mul_const(const Var& a, Tensor c);
Var mul_const(const Var& a, std::shared_ptr<const Tensor> c);
Var add_const(const Var& a, Tensor c);
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var conv2d(const Var& x, const Var& kernel, const ConvGeometry& geom);
Var conv2d_backward_input(const Var& grad_out, const Var& kernel, const ConvGeometry& geom, std::size_t in_h,
                          std::size_t in_w);
Var conv2d_backward_kernel(const Var& x, const Var& grad_out, const ConvGeometry& geom, std::size_t kh,
                           std::size_t kw);
Var relu(const Var& x);
Var avg_pool(const Var& x, PoolWindow mask);
Var avg_pool_backward(const Var& g, PoolWindow mask, const Shape& input_shape);
Var max_pool(const Var& x, PoolWindow mask);
Var log(const Var& x);
Var exp(const Var& x);
/// Element-wise power. For p < 1 the value at exactly 0 is defined as 0,
/// which makes the derivative of sqrt vanish at 0 instead of diverging.
Var pow(const Var& x, double p);
Var sum(const Var& x);
Var expand(const Var& x, const Shape& target);
Var reduce_to(const Var& x, const Shape& target);
Var reshape(const Var& x, const Shape& shape);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

/// Reverse-mode gradients of a single-element `output` with respect to each
/// of `wrt`. With `create_graph` the backward pass is recorded on the tape
/// as ordinary nodes, so the returned Vars can be differentiated again.
/// Targets that do not influence `output` receive zeros.
std::vector<Var> gradients(const Var& output, const std::vector<Var>& wrt, bool create_graph = false);

/// Values-only variant of `gradients`; leaves the tape as it was.
std::vector<Tensor> grad(const Var& output, const std::vector<Var>& wrt);

/// Central differences (f(x+h·e_i) − f(x−h·e_i)) / 2h for every coordinate.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace advlab::ad
