#pragma once

#include "retgen/core/tensor.hpp"

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

namespace retgen {

/// Gradients keyed by parameter identity. Missing entries are zero.
class Gradients {
 public:
  /// Gradient for `p`, or a zero tensor of the parameter's shape.
  Tensor get(const Parameter& p) const;
  const Tensor* find(const Parameter& p) const;
  bool contains(const Parameter& p) const { return grads_.count(&p) != 0; }

  void accumulate(const Parameter& p, const Tensor& g);
  /// this += scale * other, for every parameter in `other`.
  void add_scaled(const Gradients& other, double scale);
  void scale(double s);

  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 var.
  double item() const;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// vector is already a topological order; backward walks it in reverse and
/// visits every node once.
///
/// An inference tape computes the same forward values but records no
/// backward closures.
class Tape {
 public:
  enum class Mode { kRecord, kInference };
  using Backprop = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter. The parameter must outlive the tape.
  Var param(const Parameter& p);

  const Tensor& value(int id) const;
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool recording() const { return mode_ == Mode::kRecord; }
  std::size_t size() const { return nodes_.size(); }

  /// Records an op output. `fn` is dropped when no input needs a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backprop fn);
  Var push(Tensor value, const std::vector<Var>& inputs, Backprop fn);

  /// Adds `g` into the gradient slot of node `id` (no-op if the node does
  /// not need a gradient).
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a 1x1 loss. Every parameter in `wanted` gets an entry
  /// (zero when unreachable); parameters reached but not listed are included
  /// as well.
  Gradients backward(Var loss, const ConstParameterList& wanted = {});

 private:
  struct Node {
    Tensor value;
    const Parameter* param = nullptr;
    bool needs_grad = false;
    Backprop backprop;
    Tensor grad;
  };

  Mode mode_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Primitive ops. Every op checks shapes and throws ShapeError naming the op
// and the offending shapes.

Var matmul(Var a, Var b);
Var transpose(Var a);
/// Elementwise sum. `b` may also be a 1xn row broadcast over the rows of `a`.
Var add(Var a, Var b);
/// Elementwise product, same broadcasting rule as add().
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Concatenate along rows (axis 0) or columns (axis 1).
Var concat(const std::vector<Var>& parts, int axis);
Var slice(Var a, int axis, Index begin, Index length);
/// Gathers rows of `table`.
Var embedding(Var table, std::span<const int> ids);
Var softmax(Var a);      // row-wise
Var log_softmax(Var a);  // row-wise
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);
/// Sum over rows of -log softmax(logits)[row, targets[row]]. Returns 1x1.
Var cross_entropy(Var logits, std::span<const int> targets);
/// log sum exp over all entries. Returns 1x1.
Var logsumexp(Var a);

// Numerically stable helpers on plain tensors.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
double logsumexp(const Tensor& a);

}  // namespace retgen
