#include "vex/tape.hpp"

#include <algorithm>
#include <cmath>

namespace vex {

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Tensor value, std::vector<int> parents, BackwardFn fn) {
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(fn)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_ref(int id) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  Tensor& g = grads_[id];
  if (g.data.empty()) {
    const Tensor& v = nodes_[id].value;
    g = Tensor::zeros(v.rows, v.cols);
  }
  return g;
}

const Tensor& Tape::grad(Var v) const {
  static const Tensor kEmpty;
  if (v.id < static_cast<int>(grads_.size()) && !grads_[v.id].data.empty()) return grads_[v.id];
  // Unreachable from the loss: gradient is zero. Return a zero tensor of
  // the right shape via a thread-local scratch.
  thread_local Tensor zero;
  zero = Tensor::zeros(nodes_[v.id].value.rows, nodes_[v.id].value.cols);
  return zero;
  (void)kEmpty;
}

void Tape::backward(Var output) {
  if (output.tape != this) throw ShapeError("backward: var not on this tape");
  const Tensor& out = nodes_[output.id].value;
  if (out.size() != 1) throw ShapeError("backward: output must be scalar");
  grads_.assign(nodes_.size(), Tensor{});
  grad_ref(output.id).data[0] = 1.0;
  for (int i = output.id; i >= 0; --i) {
    if (grads_[i].data.empty()) continue;  // not reachable from output
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

// --- helpers ----------------------------------------------------------

namespace {

Tape& tp(Var a) { return *a.tape; }

void check_same_shape(Var a, Var b, const char* op) {
  if (!tp(a).val(a).same_shape(tp(b).val(b))) throw ShapeError(std::string(op) + ": shape mismatch");
}

// Elementwise op with one parent: out = f(a), da += dout * dfda.
template <class F, class DF>
Var unary_op(Var a, F f, DF dfda) {
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  for (int i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
  int aid = a.id;
  return tp(a).push(std::move(out), {aid}, [aid, dfda](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& av2 = t.val(aid);
    const Tensor& ov = t.val(self);
    Tensor& ga = t.grad_ref(aid);
    for (int i = 0; i < av2.size(); ++i) ga.data[i] += g.data[i] * dfda(av2.data[i], ov.data[i]);
  });
}

}  // namespace

// --- ops --------------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = tp(a).val(a);
  const Tensor& bv = tp(b).val(b);
  if (av.cols != bv.rows) throw ShapeError("matmul: inner dimensions differ");
  Tensor out(av.rows, bv.cols);
  out.map().noalias() = av.map() * bv.map();
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    t.grad_ref(aid).map().noalias() += g.map() * t.val(bid).map().transpose();
    t.grad_ref(bid).map().noalias() += t.val(aid).map().transpose() * g.map();
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  out.map() = av.map() + tp(b).val(b).map();
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    t.grad_ref(aid).map() += g.map();
    t.grad_ref(bid).map() += g.map();
  });
}

Var add_rowvec(Var a, Var b) {
  const Tensor& av = tp(a).val(a);
  const Tensor& bv = tp(b).val(b);
  if (bv.rows != 1 || bv.cols != av.cols) throw ShapeError("add_rowvec: bias must be 1xC");
  Tensor out(av.rows, av.cols);
  out.map() = av.map().rowwise() + bv.map().row(0);
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    t.grad_ref(aid).map() += g.map();
    t.grad_ref(bid).map().row(0) += g.map().colwise().sum();
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  out.map() = av.map() - tp(b).val(b).map();
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    t.grad_ref(aid).map() += g.map();
    t.grad_ref(bid).map() -= g.map();
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  out.map() = av.map().cwiseProduct(tp(b).val(b).map());
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    t.grad_ref(aid).map() += g.map().cwiseProduct(t.val(bid).map());
    t.grad_ref(bid).map() += g.map().cwiseProduct(t.val(aid).map());
  });
}

Var div(Var a, Var b) {
  check_same_shape(a, b, "div");
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  out.map() = av.map().cwiseQuotient(tp(b).val(b).map());
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    const auto bm = t.val(bid).map();
    t.grad_ref(aid).map() += g.map().cwiseQuotient(bm);
    t.grad_ref(bid).map() -= g.map().cwiseProduct(t.val(self).map()).cwiseQuotient(bm);
  });
}

Var neg(Var a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
  return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_const(Var a, double c) {
  return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
  return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary_op(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Var log(Var a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary_op(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Var softplus(Var a) {
  return unary_op(a,
                  [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
                  [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sin(Var a) {
  return unary_op(a, [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary_op(a, [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}

Var atan2(Var y, Var x) {
  check_same_shape(y, x, "atan2");
  const Tensor& yv = tp(y).val(y);
  const Tensor& xv = tp(x).val(x);
  Tensor out(yv.rows, yv.cols);
  for (int i = 0; i < yv.size(); ++i) out.data[i] = std::atan2(yv.data[i], xv.data[i]);
  int yid = y.id, xid = x.id;
  return tp(y).push(std::move(out), {yid, xid}, [yid, xid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& yv2 = t.val(yid);
    const Tensor& xv2 = t.val(xid);
    Tensor& gy = t.grad_ref(yid);
    Tensor& gx = t.grad_ref(xid);
    for (int i = 0; i < yv2.size(); ++i) {
      double d = yv2.data[i] * yv2.data[i] + xv2.data[i] * xv2.data[i];
      gy.data[i] += g.data[i] * xv2.data[i] / d;
      gx.data[i] -= g.data[i] * yv2.data[i] / d;
    }
  });
}

Var clamp(Var a, double lo, double hi) {
  return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                  [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  check_same_shape(a, b, "minimum");
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  out.map() = av.map().cwiseMin(tp(b).val(b).map());
  int aid = a.id, bid = b.id;
  return tp(a).push(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& av2 = t.val(aid);
    const Tensor& bv2 = t.val(bid);
    Tensor& ga = t.grad_ref(aid);
    Tensor& gb = t.grad_ref(bid);
    for (int i = 0; i < av2.size(); ++i) {
      if (av2.data[i] <= bv2.data[i])
        ga.data[i] += g.data[i];
      else
        gb.data[i] += g.data[i];
    }
  });
}

Var sum(Var a) {
  const Tensor& av = tp(a).val(a);
  Tensor out = Tensor::scalar(av.map().sum());
  int aid = a.id;
  return tp(a).push(std::move(out), {aid}, [aid](Tape& t, int self) {
    double g = t.grad_ref(self).data[0];
    Tensor& ga = t.grad_ref(aid);
    for (double& v : ga.data) v += g;
  });
}

Var mean(Var a) {
  const Tensor& av = tp(a).val(a);
  return scale(sum(a), 1.0 / av.size());
}

Var sum_cols(Var a) {
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, 1);
  out.map().col(0) = av.map().rowwise().sum();
  int aid = a.id;
  return tp(a).push(std::move(out), {aid}, [aid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(aid);
    ga.map().colwise() += g.map().col(0);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: empty");
  Tape& t = tp(parts[0]);
  int rows = t.val(parts[0]).rows;
  int cols = 0;
  std::vector<int> ids;
  std::vector<int> offsets;
  for (const Var& p : parts) {
    if (t.val(p).rows != rows) throw ShapeError("concat_cols: row mismatch");
    ids.push_back(p.id);
    offsets.push_back(cols);
    cols += t.val(p).cols;
  }
  Tensor out(rows, cols);
  for (size_t k = 0; k < ids.size(); ++k) {
    const Tensor& pv = t.val(ids[k]);
    out.map().middleCols(offsets[k], pv.cols) = pv.map();
  }
  return t.push(std::move(out), ids, [ids, offsets](Tape& tt, int self) {
    const Tensor& g = tt.grad_ref(self);
    for (size_t k = 0; k < ids.size(); ++k) {
      Tensor& gp = tt.grad_ref(ids[k]);
      gp.map() += g.map().middleCols(offsets[k], gp.cols);
    }
  });
}

Var slice_cols(Var a, int c0, int c1) {
  const Tensor& av = tp(a).val(a);
  if (c0 < 0 || c1 > av.cols || c0 >= c1) throw ShapeError("slice_cols: bad range");
  Tensor out(av.rows, c1 - c0);
  out.map() = av.map().middleCols(c0, c1 - c0);
  int aid = a.id;
  return tp(a).push(std::move(out), {aid}, [aid, c0, c1](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    t.grad_ref(aid).map().middleCols(c0, c1 - c0) += g.map();
  });
}

Var gather_cols(Var a, const std::vector<int>& idx) {
  const Tensor& av = tp(a).val(a);
  if (static_cast<int>(idx.size()) != av.rows) throw ShapeError("gather_cols: index count != rows");
  Tensor out(av.rows, 1);
  for (int i = 0; i < av.rows; ++i) out.at(i, 0) = av.at(i, idx[i]);
  int aid = a.id;
  return tp(a).push(std::move(out), {aid}, [aid, idx](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& ga = t.grad_ref(aid);
    for (int i = 0; i < ga.rows; ++i) ga.at(i, idx[i]) += g.at(i, 0);
  });
}

Var mul_scalar(Var a, Var s) {
  const Tensor& sv = tp(s).val(s);
  if (sv.size() != 1) throw ShapeError("mul_scalar: s must be 1x1");
  const Tensor& av = tp(a).val(a);
  Tensor out(av.rows, av.cols);
  out.map() = av.map() * sv.data[0];
  int aid = a.id, sid = s.id;
  return tp(a).push(std::move(out), {aid, sid}, [aid, sid](Tape& t, int self) {
    const Tensor& g = t.grad_ref(self);
    double s0 = t.val(sid).data[0];
    t.grad_ref(aid).map() += g.map() * s0;
    t.grad_ref(sid).data[0] += g.map().cwiseProduct(t.val(aid).map()).sum();
  });
}

}  // namespace vex
