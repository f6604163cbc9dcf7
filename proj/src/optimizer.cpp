#include "miml/optimizer.hpp"

#include <cmath>

#include "miml/errors.hpp"

namespace miml {

OptimizerState OptimizerState::init(const Parameters& params) {
  OptimizerState st;
  st.m = params.zeros_like();
  st.v = params.zeros_like();
  return st;
}

void optimizer_step(Parameters* params, const Gradients& grads, OptimizerState* state,
                    const OptimizerConfig& config) {
  ++state->step;
  double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state->step));
  double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state->step));

  auto pt = params->tensors();
  auto gt = grads.tensors();
  auto mt = state->m.tensors();
  auto vt = state->v.tensors();
  if (pt.size() != gt.size()) throw UsageError("optimizer_step: parameter/gradient shape mismatch");

  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto& p = *pt[i].tensor;
    const auto& g = *gt[i].tensor;
    auto& m = *mt[i].tensor;
    auto& v = *vt[i].tensor;
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw UsageError("optimizer_step: shape mismatch in " + pt[i].name);
    }
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v.array().matrix() + (1.0 - config.beta2) * g.cwiseProduct(g);
    Eigen::ArrayXXd update =
        (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.epsilon) +
        config.weight_decay * p.array();
    p.array() -= config.learning_rate * update;
    if (!p.allFinite()) throw NumericError("non-finite optimizer update in " + pt[i].name);
  }
}

}  // namespace miml
