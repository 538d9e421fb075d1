#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "vex/tensor.hpp"

namespace vex {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid for the tape it
/// was created on and until that tape is cleared.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Define-by-run reverse-mode tape. Nodes are appended in topological
/// order, so the backward pass is a single reverse sweep.
/// Not shareable between threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  Var leaf(Tensor value);
  Var leaf(const Mat& value) { return leaf(Tensor::from(value)); }
  Var scalar(double v) { return leaf(Tensor::scalar(v)); }

  Var push(Tensor value, std::vector<int> parents, BackwardFn fn);

  const Tensor& val(Var v) const { return nodes_[v.id].value; }
  const Tensor& val(int id) const { return nodes_[id].value; }

  /// Gradient accumulator for a node; allocated zero on first access
  /// during a backward pass.
  Tensor& grad_ref(int id);
  const Tensor& grad(Var v) const;
  bool has_grad(int id) const { return id < static_cast<int>(grads_.size()) && !grads_[id].data.empty(); }

  /// Reverse sweep from a scalar output. Gradients of all reachable
  /// nodes are populated; unreachable nodes read as zero.
  void backward(Var output);

  size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// --- tensor ops -------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);                 // same shape, elementwise
Var add_rowvec(Var a, Var b);          // b is 1xC, broadcast over rows of a
Var sub(Var a, Var b);
Var mul(Var a, Var b);                 // elementwise
Var div(Var a, Var b);                 // elementwise
Var neg(Var a);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var softplus(Var a);                   // log(1 + e^x), stable
Var sin(Var a);
Var cos(Var a);
Var atan2(Var y, Var x);
Var clamp(Var a, double lo, double hi);  // zero gradient outside [lo, hi]
Var minimum(Var a, Var b);               // elementwise min, subgradient to argmin side
Var sum(Var a);                          // -> 1x1
Var mean(Var a);                         // -> 1x1
Var sum_cols(Var a);                     // BxC -> Bx1
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, int c0, int c1);   // columns [c0, c1)
Var gather_cols(Var a, const std::vector<int>& idx);  // BxC -> Bx1
Var mul_scalar(Var a, Var s);            // s is 1x1

// Elementwise operators so numeric code can be written once and
// instantiated for both double and Var.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return add_const(a, c); }
inline Var operator+(double c, Var a) { return add_const(a, c); }
inline Var operator-(Var a, double c) { return add_const(a, -c); }
inline Var operator-(double c, Var a) { return add_const(neg(a), c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator/(Var a, double c) { return scale(a, 1.0 / c); }

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace vex
