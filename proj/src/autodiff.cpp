#include "advlab/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace advlab::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::MulConst: return "mul_const";
    case Op::AddConst: return "add_const";
    case Op::Matmul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::Conv2dBackInput: return "conv2d_backward_input";
    case Op::Conv2dBackKernel: return "conv2d_backward_kernel";
    case Op::Relu: return "relu";
    case Op::AvgPool: return "avgpool";
    case Op::AvgPoolBack: return "avgpool_backward";
    case Op::MaxPool: return "maxpool";
    case Op::Gather: return "gather";
    case Op::Scatter: return "scatter";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Pow: return "pow";
    case Op::Sum: return "sum";
    case Op::Expand: return "broadcast";
    case Op::ReduceTo: return "reduce";
    case Op::Reshape: return "reshape";
  }
  return "?";
}

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("Var: empty handle");
  return tape_->node(id_).value;
}

bool Var::requires_grad() const { return tape_ && tape_->node(id_).requires_grad; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  GraphNode n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Op op, std::vector<int> parents, Attr attr) {
  GraphNode n;
  n.op = op;
  n.parents = std::move(parents);
  n.attr = std::move(attr);
  evaluate(n);
  bool rg = false;
  for (int p : n.parents) rg = rg || nodes_[static_cast<std::size_t>(p)].requires_grad;
  if (!recording_) {
    n.parents.clear();
    rg = false;
  }
  n.requires_grad = rg;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::evaluate(GraphNode& n) const {
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[static_cast<std::size_t>(n.parents.at(i))].value; };
  switch (n.op) {
    case Op::Leaf: return;
    case Op::Add: n.value = in(0) + in(1); return;
    case Op::Sub: n.value = in(0) - in(1); return;
    case Op::Mul: n.value = in(0) * in(1); return;
    case Op::Scale: n.value = std::get<double>(n.attr) * in(0); return;
    case Op::MulConst: n.value = in(0) * *std::get<std::shared_ptr<const Tensor>>(n.attr); return;
    case Op::AddConst: n.value = in(0) + *std::get<std::shared_ptr<const Tensor>>(n.attr); return;
    case Op::Matmul: {
      const auto& a = std::get<MatmulAttr>(n.attr);
      n.value = advlab::matmul(in(0), in(1), a.trans_a, a.trans_b);
      return;
    }
    case Op::Conv2d: n.value = advlab::conv2d(in(0), in(1), std::get<ConvAttr>(n.attr).geom); return;
    case Op::Conv2dBackInput: {
      const auto& a = std::get<ConvAttr>(n.attr);
      n.value = advlab::conv2d_backward_input(in(0), in(1), a.geom, a.h, a.w);
      return;
    }
    case Op::Conv2dBackKernel: {
      const auto& a = std::get<ConvAttr>(n.attr);
      n.value = advlab::conv2d_backward_kernel(in(0), in(1), a.geom, a.h, a.w);
      return;
    }
    case Op::Relu: {
      const Tensor& x = in(0);
      Tensor y = x;
      auto m = std::make_shared<Tensor>(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const bool on = x[i] > 0.0;
        (*m)[i] = on ? 1.0 : 0.0;
        if (!on) y[i] = 0.0;
      }
      n.value = std::move(y);
      n.mask = std::move(m);
      return;
    }
    case Op::AvgPool: n.value = advlab::avg_pool(in(0), std::get<PoolAttr>(n.attr).mask); return;
    case Op::AvgPoolBack: {
      const auto& a = std::get<PoolAttr>(n.attr);
      n.value = advlab::avg_pool_backward(in(0), a.mask, a.input_shape);
      return;
    }
    case Op::MaxPool: {
      auto& a = std::get<PoolAttr>(n.attr);
      auto idx = std::make_shared<std::vector<std::uint32_t>>();
      n.value = advlab::max_pool(in(0), a.mask, a.mask, idx.get());
      a.index = std::move(idx);
      return;
    }
    case Op::Gather: {
      const auto& a = std::get<PoolAttr>(n.attr);
      Shape out = a.input_shape;  // output shape for gather
      n.value = advlab::gather(in(0), *a.index, out);
      return;
    }
    case Op::Scatter: {
      const auto& a = std::get<PoolAttr>(n.attr);
      n.value = advlab::scatter_add(in(0), *a.index, a.input_shape);
      return;
    }
    case Op::Log: {
      Tensor y = in(0);
      for (auto& v : y.data()) v = std::log(v);
      n.value = std::move(y);
      return;
    }
    case Op::Exp: {
      Tensor y = in(0);
      for (auto& v : y.data()) v = std::exp(v);
      n.value = std::move(y);
      return;
    }
    case Op::Pow: {
      const double p = std::get<double>(n.attr);
      Tensor y = in(0);
      for (auto& v : y.data()) v = (p < 1.0 && v == 0.0) ? 0.0 : std::pow(v, p);
      n.value = std::move(y);
      return;
    }
    case Op::Sum: n.value = Tensor::scalar(advlab::sum(in(0))); return;
    case Op::Expand: n.value = advlab::expand(in(0), std::get<Shape>(n.attr)); return;
    case Op::ReduceTo: n.value = advlab::reduce_to(in(0), std::get<Shape>(n.attr)); return;
    case Op::Reshape: n.value = in(0).reshaped(std::get<Shape>(n.attr)); return;
  }
}

void Tape::replay(const std::unordered_map<int, Tensor>& leaf_values) {
  for (const auto& [id, value] : leaf_values) {
    auto& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.op != Op::Leaf) throw std::invalid_argument("Tape::replay: node " + std::to_string(id) + " is not a leaf");
    require_same_shape(n.value, value, "Tape::replay");
    n.value = value;
  }
  for (auto& n : nodes_) {
    if (n.op == Op::Leaf || n.parents.empty()) continue;
    evaluate(n);
  }
}

namespace {

Tape* common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw std::logic_error("ad: empty Var operand");
  if (a.tape() != b.tape()) throw std::logic_error("ad: operands live on different tapes");
  return a.tape();
}

Tape* tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("ad: empty Var operand");
  return a.tape();
}

}  // namespace

Var add(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::Add, {a.id(), b.id()}); }
Var sub(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::Sub, {a.id(), b.id()}); }
Var mul(const Var& a, const Var& b) { return common_tape(a, b)->record(Op::Mul, {a.id(), b.id()}); }
Var scale(const Var& a, double s) { return tape_of(a)->record(Op::Scale, {a.id()}, s); }

Var mul_const(const Var& a, std::shared_ptr<const Tensor> c) {
  return tape_of(a)->record(Op::MulConst, {a.id()}, std::move(c));
}
Var mul_const(const Var& a, Tensor c) { return mul_const(a, std::make_shared<const Tensor>(std::move(c))); }
Var add_const(const Var& a, Tensor c) {
  return tape_of(a)->record(Op::AddConst, {a.id()}, std::shared_ptr<const Tensor>(std::make_shared<const Tensor>(std::move(c))));
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  return common_tape(a, b)->record(Op::Matmul, {a.id(), b.id()}, MatmulAttr{trans_a, trans_b});
}

Var conv2d(const Var& x, const Var& kernel, const ConvGeometry& geom) {
  return common_tape(x, kernel)->record(Op::Conv2d, {x.id(), kernel.id()}, ConvAttr{geom, 0, 0});
}

Var conv2d_backward_input(const Var& grad_out, const Var& kernel, const ConvGeometry& geom, std::size_t in_h,
                          std::size_t in_w) {
  return common_tape(grad_out, kernel)
      ->record(Op::Conv2dBackInput, {grad_out.id(), kernel.id()}, ConvAttr{geom, in_h, in_w});
}

Var conv2d_backward_kernel(const Var& x, const Var& grad_out, const ConvGeometry& geom, std::size_t kh,
                           std::size_t kw) {
  return common_tape(x, grad_out)->record(Op::Conv2dBackKernel, {x.id(), grad_out.id()}, ConvAttr{geom, kh, kw});
}

Var relu(const Var& x) { return tape_of(x)->record(Op::Relu, {x.id()}); }

Var avg_pool(const Var& x, PoolWindow mask) {
  return tape_of(x)->record(Op::AvgPool, {x.id()}, PoolAttr{mask, x.shape(), nullptr});
}

Var avg_pool_backward(const Var& g, PoolWindow mask, const Shape& input_shape) {
  return tape_of(g)->record(Op::AvgPoolBack, {g.id()}, PoolAttr{mask, input_shape, nullptr});
}

Var max_pool(const Var& x, PoolWindow mask) {
  return tape_of(x)->record(Op::MaxPool, {x.id()}, PoolAttr{mask, x.shape(), nullptr});
}

namespace {
Var gather_idx(const Var& x, std::shared_ptr<const std::vector<std::uint32_t>> idx, const Shape& out_shape) {
  return tape_of(x)->record(Op::Gather, {x.id()}, PoolAttr{{}, out_shape, std::move(idx)});
}
Var scatter_idx(const Var& g, std::shared_ptr<const std::vector<std::uint32_t>> idx, const Shape& out_shape) {
  return tape_of(g)->record(Op::Scatter, {g.id()}, PoolAttr{{}, out_shape, std::move(idx)});
}
}  // namespace

Var log(const Var& x) { return tape_of(x)->record(Op::Log, {x.id()}); }
Var exp(const Var& x) { return tape_of(x)->record(Op::Exp, {x.id()}); }
Var pow(const Var& x, double p) { return tape_of(x)->record(Op::Pow, {x.id()}, p); }
Var sum(const Var& x) { return tape_of(x)->record(Op::Sum, {x.id()}); }
Var expand(const Var& x, const Shape& target) { return tape_of(x)->record(Op::Expand, {x.id()}, target); }
Var reduce_to(const Var& x, const Shape& target) { return tape_of(x)->record(Op::ReduceTo, {x.id()}, target); }
Var reshape(const Var& x, const Shape& shape) { return tape_of(x)->record(Op::Reshape, {x.id()}, shape); }

namespace {

// Vector-Jacobian products of node `id` given its output adjoint `g`.
// `emit(i, contribution)` is called for each parent index i that needs one.
template <typename Emit>
void vjp(Tape& tape, int id, const Var& g, const std::vector<char>& wants, Emit&& emit) {
  const GraphNode& n = tape.node(id);
  auto parent = [&](std::size_t i) { return Var(&tape, n.parents[i]); };
  auto need = [&](std::size_t i) { return wants[static_cast<std::size_t>(n.parents[i])] != 0; };

  switch (n.op) {
    case Op::Leaf: return;
    case Op::Add:
      if (need(0)) emit(0, g);
      if (need(1)) emit(1, g);
      return;
    case Op::Sub:
      if (need(0)) emit(0, g);
      if (need(1)) emit(1, scale(g, -1.0));
      return;
    case Op::Mul:
      if (need(0)) emit(0, mul(g, parent(1)));
      if (need(1)) emit(1, mul(g, parent(0)));
      return;
    case Op::Scale: emit(0, scale(g, std::get<double>(n.attr))); return;
    case Op::MulConst: emit(0, mul_const(g, std::get<std::shared_ptr<const Tensor>>(n.attr))); return;
    case Op::AddConst: emit(0, g); return;
    case Op::Matmul: {
      const auto [ta, tb] = std::get<MatmulAttr>(n.attr);
      const Var a = parent(0), b = parent(1);
      if (!ta && !tb) {
        if (need(0)) emit(0, matmul(g, b, false, true));
        if (need(1)) emit(1, matmul(a, g, true, false));
      } else if (ta && !tb) {
        if (need(0)) emit(0, matmul(b, g, false, true));
        if (need(1)) emit(1, matmul(a, g, false, false));
      } else if (!ta && tb) {
        if (need(0)) emit(0, matmul(g, b, false, false));
        if (need(1)) emit(1, matmul(g, a, true, false));
      } else {
        if (need(0)) emit(0, matmul(b, g, true, true));
        if (need(1)) emit(1, matmul(g, a, true, true));
      }
      return;
    }
    case Op::Conv2d: {
      const auto& geom = std::get<ConvAttr>(n.attr).geom;
      const Var x = parent(0), k = parent(1);
      const Shape& xs = x.shape();
      if (need(0)) emit(0, conv2d_backward_input(g, k, geom, xs[xs.size() - 2], xs[xs.size() - 1]));
      if (need(1)) emit(1, conv2d_backward_kernel(x, g, geom, geom.kernel_h, geom.kernel_w));
      return;
    }
    case Op::Conv2dBackInput: {
      // y = B_in(G, K); <U, y> = <conv(U, K), G>
      const auto& geom = std::get<ConvAttr>(n.attr).geom;
      const Var go = parent(0), k = parent(1);
      if (need(0)) emit(0, conv2d(g, k, geom));
      if (need(1)) emit(1, conv2d_backward_kernel(g, go, geom, geom.kernel_h, geom.kernel_w));
      return;
    }
    case Op::Conv2dBackKernel: {
      // y = B_k(X, G); <V, y> = <conv(X, V), G>
      const auto& geom = std::get<ConvAttr>(n.attr).geom;
      const Var x = parent(0), go = parent(1);
      const Shape& xs = x.shape();
      if (need(0)) emit(0, conv2d_backward_input(go, g, geom, xs[xs.size() - 2], xs[xs.size() - 1]));
      if (need(1)) emit(1, conv2d(x, g, geom));
      return;
    }
    case Op::Relu: emit(0, mul_const(g, n.mask)); return;
    case Op::AvgPool: {
      const auto& a = std::get<PoolAttr>(n.attr);
      emit(0, avg_pool_backward(g, a.mask, a.input_shape));
      return;
    }
    case Op::AvgPoolBack: emit(0, avg_pool(g, std::get<PoolAttr>(n.attr).mask)); return;
    case Op::MaxPool: {
      const auto& a = std::get<PoolAttr>(n.attr);
      emit(0, scatter_idx(g, a.index, a.input_shape));
      return;
    }
    case Op::Gather: {
      const auto& a = std::get<PoolAttr>(n.attr);
      emit(0, scatter_idx(g, a.index, parent(0).shape()));
      return;
    }
    case Op::Scatter: {
      const auto& a = std::get<PoolAttr>(n.attr);
      emit(0, gather_idx(g, a.index, parent(0).shape()));
      return;
    }
    case Op::Log: emit(0, mul(g, pow(parent(0), -1.0))); return;
    case Op::Exp: emit(0, mul(g, Var(&tape, id))); return;
    case Op::Pow: {
      const double p = std::get<double>(n.attr);
      emit(0, mul(g, scale(pow(parent(0), p - 1.0), p)));
      return;
    }
    case Op::Sum: {
      const Shape& xs = parent(0).shape();
      emit(0, expand(reshape(g, Shape(xs.size(), 1)), xs));
      return;
    }
    case Op::Expand: emit(0, reduce_to(g, parent(0).shape())); return;
    case Op::ReduceTo: emit(0, expand(g, parent(0).shape())); return;
    case Op::Reshape: emit(0, reshape(g, parent(0).shape())); return;
  }
}

}  // namespace

std::vector<Var> gradients(const Var& output, const std::vector<Var>& wrt, bool create_graph) {
  Tape& tape = *tape_of(output);
  if (output.value().size() != 1) {
    throw std::invalid_argument("gradients: output must be a scalar, got shape " + shape_str(output.shape()));
  }
  for (const auto& w : wrt)
    if (w.tape() != &tape) throw std::logic_error("gradients: target on a different tape");

  const auto out_id = static_cast<std::size_t>(output.id());
  const std::size_t n = out_id + 1;

  // Nodes that depend on some target and may therefore carry an adjoint.
  std::vector<char> wants(n, 0);
  for (const auto& w : wrt)
    if (static_cast<std::size_t>(w.id()) < n) wants[static_cast<std::size_t>(w.id())] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (wants[i]) continue;
    for (int p : tape.node(static_cast<int>(i)).parents)
      if (wants[static_cast<std::size_t>(p)]) {
        wants[i] = 1;
        break;
      }
  }

  auto zero_like = [&](const Var& w) { return tape.constant(Tensor(w.shape())); };

  if (!wants[out_id]) {
    std::vector<Var> out;
    for (const auto& w : wrt) out.push_back(zero_like(w));
    return out;
  }

  RecordingGuard guard(tape, create_graph);
  std::vector<Var> adj(n);
  adj[out_id] = tape.constant(Tensor(output.shape(), 1.0));

  for (std::size_t i = n; i-- > 0;) {
    if (!wants[i] || !adj[i].valid()) continue;
    const GraphNode& node = tape.node(static_cast<int>(i));
    if (node.op == Op::Leaf) continue;
    vjp(tape, static_cast<int>(i), adj[i], wants, [&](std::size_t k, Var contrib) {
      const auto p = static_cast<std::size_t>(tape.node(static_cast<int>(i)).parents[k]);
      adj[p] = adj[p].valid() ? add(adj[p], contrib) : contrib;
    });
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    const auto id = static_cast<std::size_t>(w.id());
    out.push_back(id < n && adj[id].valid() ? adj[id] : zero_like(w));
  }
  return out;
}

std::vector<Tensor> grad(const Var& output, const std::vector<Var>& wrt) {
  Tape& tape = *tape_of(output);
  const std::size_t mark = tape.size();
  std::vector<Tensor> out;
  {
    auto vars = gradients(output, wrt, false);
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(v.value());
  }
  tape.truncate(mark);
  return out;
}

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace advlab::ad
