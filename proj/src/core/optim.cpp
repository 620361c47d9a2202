#include "retgen/core/optim.hpp"

#include <cmath>

namespace retgen {

void Adam::step(const ParameterList& params, const Gradients& grads) {
  for (const Parameter* p : params) {
    if (!p->requires_grad) continue;
    if (const Tensor* g = grads.find(*p); g && !g->allFinite()) {
      throw Error("adam: non-finite gradient for parameter '" + p->id + "'");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (Parameter* p : params) {
    if (!p->requires_grad) continue;
    const Tensor* g = grads.find(*p);
    if (!g) continue;
    auto [it, fresh] = moments_.try_emplace(p->id);
    Moments& mo = it->second;
    if (fresh) {
      mo.m = Tensor::Zero(p->value.rows(), p->value.cols());
      mo.v = Tensor::Zero(p->value.rows(), p->value.cols());
    }
    mo.m = config_.beta1 * mo.m + (1.0 - config_.beta1) * *g;
    mo.v = config_.beta2 * mo.v + (1.0 - config_.beta2) * g->cwiseAbs2();
    p->value.array() -= config_.lr * (mo.m.array() / bc1) / ((mo.v.array() / bc2).sqrt() + config_.eps);
  }
}

}  // namespace retgen
