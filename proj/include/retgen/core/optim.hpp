#pragma once

#include "retgen/core/autodiff.hpp"

#include <string>
#include <unordered_map>

namespace retgen {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are keyed by parameter id so the state
/// survives copies of the owning model.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One update. Parameters that are frozen or have no gradient entry are
  /// left untouched. All gradients are validated before anything is written,
  /// so a rejected step leaves parameters and state unchanged.
  void step(const ParameterList& params, const Gradients& grads);

  long steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamConfig config_;
  std::unordered_map<std::string, Moments> moments_;
  long step_ = 0;
};

}  // namespace retgen
