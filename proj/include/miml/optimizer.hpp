#pragma once

#include "miml/model.hpp"

namespace miml {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;  // decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer with decoupled weight decay.
struct OptimizerState {
  Parameters m;
  Parameters v;
  long step = 0;

  static OptimizerState init(const Parameters& params);
};

void optimizer_step(Parameters* params, const Gradients& grads, OptimizerState* state,
                    const OptimizerConfig& config);

}  // namespace miml
