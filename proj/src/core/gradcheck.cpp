#include "retgen/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace retgen {

Gradients finite_difference_grad(const std::function<double()>& f, const ParameterList& params,
                                 double eps) {
  Gradients out;
  for (Parameter* p : params) {
    Tensor g(p->value.rows(), p->value.cols());
    for (Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + eps;
      const double up = f();
      x = saved - eps;
      const double down = f();
      x = saved;
      g.data()[i] = (up - down) / (2.0 * eps);
    }
    out.accumulate(*p, g);
  }
  return out;
}

double max_relative_error(const Gradients& a, const Gradients& b, const ConstParameterList& params,
                          double floor) {
  double worst = 0.0;
  for (const Parameter* p : params) {
    const Tensor ga = a.get(*p);
    const Tensor gb = b.get(*p);
    for (Index i = 0; i < ga.size(); ++i) {
      const double x = ga.data()[i];
      const double y = gb.data()[i];
      const double denom = std::max({std::abs(x), std::abs(y), floor});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  }
  return worst;
}

}  // namespace retgen
