#include "retgen/core/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace retgen {

// ---------------------------------------------------------------- Gradients

Tensor Gradients::get(const Parameter& p) const {
  if (const Tensor* g = find(p)) return *g;
  return Tensor::Zero(p.value.rows(), p.value.cols());
}

const Tensor* Gradients::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

void Gradients::accumulate(const Parameter& p, const Tensor& g) {
  if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
    throw ShapeError("gradient for '" + p.id + "' has shape " + shape_str(g) +
                     ", parameter is " + shape_str(p.value));
  }
  auto [it, inserted] = grads_.try_emplace(&p, g);
  if (!inserted) it->second += g;
}

void Gradients::add_scaled(const Gradients& other, double s) {
  for (const auto& [p, g] : other.grads_) {
    auto [it, inserted] = grads_.try_emplace(p, s * g);
    if (!inserted) it->second += s * g;
  }
}

void Gradients::scale(double s) {
  for (auto& [p, g] : grads_) g *= s;
}

// ---------------------------------------------------------------------- Var

const Tensor& Var::value() const { return tape->value(id); }

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(v));
  return v(0, 0);
}

// --------------------------------------------------------------------- Tape

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, false, {}, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const Parameter& p) {
  const bool track = recording() && p.requires_grad;
  nodes_.push_back(Node{Tensor{}, &p, track, {}, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value : n.value;
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, Backprop fn) {
  bool needs = false;
  if (recording()) {
    for (const Var& v : inputs) needs = needs || nodes_[v.id].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), nullptr, needs, needs ? std::move(fn) : Backprop{}, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Tensor value, const std::vector<Var>& inputs, Backprop fn) {
  bool needs = false;
  if (recording()) {
    for (const Var& v : inputs) needs = needs || nodes_[v.id].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), nullptr, needs, needs ? std::move(fn) : Backprop{}, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Gradients Tape::backward(Var loss, const ConstParameterList& wanted) {
  if (loss.tape != this) throw Error("backward: loss is not on this tape");
  const Tensor& lv = value(loss.id);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv));
  if (consumed_) throw Error("backward: tape already consumed");
  consumed_ = true;

  Gradients out;
  for (const Parameter* p : wanted) {
    out.accumulate(*p, Tensor::Zero(p->value.rows(), p->value.cols()));
  }
  if (!nodes_[loss.id].needs_grad) return out;

  nodes_[loss.id].grad = Tensor::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param) {
      out.accumulate(*n.param, n.grad);
    } else if (n.backprop) {
      // Move the closure and gradient out so that accumulate() calls from the
      // closure may touch nodes_ without aliasing this node.
      Backprop fn = std::move(n.backprop);
      Tensor g = std::move(n.grad);
      fn(*this, g);
    }
  }
  return out;
}

// ------------------------------------------------------------------ helpers

namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

enum class Broadcast { kSame, kRow };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  shape_fail(op, a, b);
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    const double lse = m + std::log((a.row(r).array() - m).exp().sum());
    out.row(r) = a.row(r).array() - lse;
  }
  return out;
}

double logsumexp(const Tensor& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

// ---------------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_fail("matmul", av, bv);
  Tensor out = av * bv;
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * t.value(b.id).transpose());
    if (t.needs_grad(b.id)) t.accumulate(b.id, t.value(a.id).transpose() * g);
  });
}

Var transpose(Var a) {
  Tensor out = a.value().transpose();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    t.accumulate(a.id, g.transpose());
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind("add", av, bv);
  Tensor out = av;
  if (kind == Broadcast::kSame) {
    out += bv;
  } else {
    out.rowwise() += bv.row(0);
  }
  return a.tape->push(std::move(out), {a, b}, [a, b, kind](Tape& t, const Tensor& g) {
    t.accumulate(a.id, g);
    if (!t.needs_grad(b.id)) return;
    if (kind == Broadcast::kSame) {
      t.accumulate(b.id, g);
    } else {
      t.accumulate(b.id, g.colwise().sum());
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast kind = broadcast_kind("mul", av, bv);
  Tensor out = av;
  if (kind == Broadcast::kSame) {
    out.array() *= bv.array();
  } else {
    out.array().rowwise() *= bv.row(0).array();
  }
  return a.tape->push(std::move(out), {a, b}, [a, b, kind](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a.id);
    const Tensor& bv = t.value(b.id);
    if (kind == Broadcast::kSame) {
      if (t.needs_grad(a.id)) t.accumulate(a.id, (g.array() * bv.array()).matrix());
      if (t.needs_grad(b.id)) t.accumulate(b.id, (g.array() * av.array()).matrix());
    } else {
      if (t.needs_grad(a.id)) {
        Tensor ga = g;
        ga.array().rowwise() *= bv.row(0).array();
        t.accumulate(a.id, ga);
      }
      if (t.needs_grad(b.id)) t.accumulate(b.id, (g.array() * av.array()).colwise().sum().matrix());
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = s * a.value();
  return a.tape->push(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    t.accumulate(a.id, s * g);
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const Tensor& first = parts.front().value();
  Index total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (axis == 0 && v.cols() != first.cols()) shape_fail("concat", first, v);
    if (axis == 1 && v.rows() != first.rows()) shape_fail("concat", first, v);
    total += axis == 0 ? v.rows() : v.cols();
  }
  Tensor out = axis == 0 ? Tensor(total, first.cols()) : Tensor(first.rows(), total);
  std::vector<Index> offsets;
  offsets.reserve(parts.size());
  Index at = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    offsets.push_back(at);
    if (axis == 0) {
      out.middleRows(at, v.rows()) = v;
      at += v.rows();
    } else {
      out.middleCols(at, v.cols()) = v;
      at += v.cols();
    }
  }
  Tape* tape = parts.front().tape;
  return tape->push(std::move(out), parts, [parts, offsets, axis](Tape& t, const Tensor& g) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const int id = parts[i].id;
      if (!t.needs_grad(id)) continue;
      const Tensor& v = t.value(id);
      if (axis == 0) {
        t.accumulate(id, g.middleRows(offsets[i], v.rows()));
      } else {
        t.accumulate(id, g.middleCols(offsets[i], v.cols()));
      }
    }
  });
}

Var slice(Var a, int axis, Index begin, Index length) {
  const Tensor& av = a.value();
  const Index extent = axis == 0 ? av.rows() : av.cols();
  if ((axis != 0 && axis != 1) || begin < 0 || length < 0 || begin + length > extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + length) + ") on axis " + std::to_string(axis) +
                     " out of bounds for " + shape_str(av));
  }
  Tensor out = axis == 0 ? Tensor(av.middleRows(begin, length)) : Tensor(av.middleCols(begin, length));
  const Index rows = av.rows();
  const Index cols = av.cols();
  return a.tape->push(std::move(out), {a}, [a, axis, begin, length, rows, cols](Tape& t, const Tensor& g) {
    Tensor full = Tensor::Zero(rows, cols);
    if (axis == 0) {
      full.middleRows(begin, length) = g;
    } else {
      full.middleCols(begin, length) = g;
    }
    t.accumulate(a.id, full);
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  Tensor out(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                       shape_str(tv));
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->push(std::move(out), {table}, [table, idx = std::move(idx)](Tape& t, const Tensor& g) {
    const Tensor& tv = t.value(table.id);
    Tensor full = Tensor::Zero(tv.rows(), tv.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(table.id, full);
  });
}

Var softmax(Var a) {
  Tensor out = softmax_rows(a.value());
  Tensor y = out;
  return a.tape->push(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor dx = y.array() * g.array();
    const Eigen::VectorXd dots = dx.rowwise().sum();
    dx.array() -= (y.array().colwise() * dots.array());
    t.accumulate(a.id, dx);
  });
}

Var log_softmax(Var a) {
  Tensor out = log_softmax_rows(a.value());
  Tensor p = out.array().exp();
  return a.tape->push(std::move(out), {a}, [a, p = std::move(p)](Tape& t, const Tensor& g) {
    const Eigen::VectorXd sums = g.rowwise().sum();
    Tensor dx = g;
    dx.array() -= p.array().colwise() * sums.array();
    t.accumulate(a.id, dx);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (gv.rows() != 1 || gv.cols() != xv.cols()) shape_fail("layer_norm", xv, gv);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) shape_fail("layer_norm", xv, bv);
  const Index n = xv.cols();
  Tensor xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Tensor out = xhat;
  out.array().rowwise() *= gv.row(0).array();
  out.rowwise() += bv.row(0);
  return x.tape->push(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](
                          Tape& t, const Tensor& g) {
                        if (t.needs_grad(gamma.id)) {
                          t.accumulate(gamma.id, (g.array() * xhat.array()).colwise().sum().matrix());
                        }
                        if (t.needs_grad(beta.id)) t.accumulate(beta.id, g.colwise().sum());
                        if (!t.needs_grad(x.id)) return;
                        Tensor dxhat = g;
                        dxhat.array().rowwise() *= t.value(gamma.id).row(0).array();
                        Tensor dx(g.rows(), n);
                        for (Index r = 0; r < g.rows(); ++r) {
                          const double m1 = dxhat.row(r).mean();
                          const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
                          dx.row(r) = inv_std(r) *
                                      (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                        }
                        t.accumulate(x.id, dx);
                      });
}

Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  const Tensor& av = a.value();
  Tensor out = av.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  });
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor d = t.value(a.id).unaryExpr([](double v) {
      const double u = k * (v + c * v * v * v);
      const double th = std::tanh(u);
      const double du = k * (1.0 + 3.0 * c * v * v);
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    });
    t.accumulate(a.id, (d.array() * g.array()).matrix());
  });
}

Var tanh(Var a) {
  Tensor out = a.value().array().tanh();
  Tensor y = out;
  return a.tape->push(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Tensor& g) {
    t.accumulate(a.id, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  if (static_cast<Index>(targets.size()) != lv.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(lv));
  }
  Tensor logp = log_softmax_rows(lv);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || targets[r] >= lv.cols()) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for logits " + shape_str(lv));
    }
    total -= logp(static_cast<Index>(r), targets[r]);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape->push(Tensor::Constant(1, 1, total), {logits},
                           [logits, logp = std::move(logp), tgt = std::move(tgt)](Tape& t, const Tensor& g) {
                             Tensor dx = logp.array().exp();
                             for (std::size_t r = 0; r < tgt.size(); ++r) dx(static_cast<Index>(r), tgt[r]) -= 1.0;
                             t.accumulate(logits.id, g(0, 0) * dx);
                           });
}

Var logsumexp(Var a) {
  const Tensor& av = a.value();
  if (av.size() == 0) throw ShapeError("logsumexp: empty input");
  const double lse = logsumexp(av);
  return a.tape->push(Tensor::Constant(1, 1, lse), {a}, [a, lse](Tape& t, const Tensor& g) {
    Tensor w = (t.value(a.id).array() - lse).exp();
    t.accumulate(a.id, g(0, 0) * w);
  });
}

}  // namespace retgen
