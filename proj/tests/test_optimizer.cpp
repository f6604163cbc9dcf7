#include "doctest.h"

#include <cmath>

#include "miml/errors.hpp"
#include "miml/hierarchy.hpp"
#include "miml/optimizer.hpp"

using namespace miml;

namespace {

// A one-tensor parameter set keeps the arithmetic checkable by hand.
Parameters scalar_params(double value) {
  Parameters p;
  p.embed = Eigen::MatrixXd::Constant(1, 1, value);
  p.pos = Eigen::MatrixXd::Zero(0, 0);
  p.flat_head = Eigen::MatrixXd::Zero(0, 0);
  return p;
}

}  // namespace

TEST_CASE("zero gradient without decay is a fixed point") {
  Parameters p = scalar_params(1.25);
  OptimizerState st = OptimizerState::init(p);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  Gradients g = p.zeros_like();
  for (int i = 0; i < 5; ++i) optimizer_step(&p, g, &st, cfg);
  CHECK(p.embed(0, 0) == doctest::Approx(1.25));
  CHECK(st.step == 5);
}

TEST_CASE("first step moves by roughly the learning rate") {
  // With bias correction, mhat = g and vhat = g^2, so the update magnitude is
  // lr * |g| / (|g| + eps) ~= lr regardless of the gradient scale.
  for (double grad : {1e-4, 1.0, 1e4}) {
    Parameters p = scalar_params(0.0);
    OptimizerState st = OptimizerState::init(p);
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    Gradients g = p.zeros_like();
    g.embed(0, 0) = grad;
    optimizer_step(&p, g, &st, cfg);
    CHECK(p.embed(0, 0) == doctest::Approx(-0.01).epsilon(1e-3));
  }
}

TEST_CASE("first step against a hand-computed update") {
  Parameters p = scalar_params(0.5);
  OptimizerState st = OptimizerState::init(p);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  Gradients g = p.zeros_like();
  g.embed(0, 0) = 2.0;
  optimizer_step(&p, g, &st, cfg);
  double mhat = (1.0 - cfg.beta1) * 2.0 / (1.0 - cfg.beta1);
  double vhat = (1.0 - cfg.beta2) * 4.0 / (1.0 - cfg.beta2);
  double expect = 0.5 - 0.1 * mhat / (std::sqrt(vhat) + cfg.epsilon);
  CHECK(p.embed(0, 0) == doctest::Approx(expect).epsilon(1e-12));

  // Second step with the same gradient.
  optimizer_step(&p, g, &st, cfg);
  double m = cfg.beta1 * (1.0 - cfg.beta1) * 2.0 + (1.0 - cfg.beta1) * 2.0;
  double v = cfg.beta2 * (1.0 - cfg.beta2) * 4.0 + (1.0 - cfg.beta2) * 4.0;
  double mhat2 = m / (1.0 - cfg.beta1 * cfg.beta1);
  double vhat2 = v / (1.0 - cfg.beta2 * cfg.beta2);
  double expect2 = expect - 0.1 * mhat2 / (std::sqrt(vhat2) + cfg.epsilon);
  CHECK(p.embed(0, 0) == doctest::Approx(expect2).epsilon(1e-12));
}

TEST_CASE("weight decay is decoupled from the gradient") {
  // Zero gradient: decay shrinks the parameter by exactly (1 - lr * wd).
  Parameters p = scalar_params(2.0);
  OptimizerState st = OptimizerState::init(p);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Gradients g = p.zeros_like();
  optimizer_step(&p, g, &st, cfg);
  CHECK(p.embed(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
  optimizer_step(&p, g, &st, cfg);
  CHECK(p.embed(0, 0) == doctest::Approx(2.0 * std::pow(1.0 - 0.1 * 0.5, 2)).epsilon(1e-12));
}

TEST_CASE("repeated constant gradient walks downhill monotonically") {
  Parameters p = scalar_params(1.0);
  OptimizerState st = OptimizerState::init(p);
  OptimizerConfig cfg;
  cfg.learning_rate = 0.05;
  Gradients g = p.zeros_like();
  g.embed(0, 0) = 1.0;
  double prev = p.embed(0, 0);
  for (int i = 0; i < 50; ++i) {
    optimizer_step(&p, g, &st, cfg);
    CHECK(p.embed(0, 0) < prev);
    prev = p.embed(0, 0);
  }
}

TEST_CASE("optimizer state walks every tensor of a real model") {
  HierarchyTree tree = HierarchyTree::load_default();
  ModelConfig cfg;
  cfg.dim = 4;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.vocab_size = 8;
  cfg.window_size = 6;
  for (int node : tree.internal_nodes()) cfg.edge_counts.push_back(tree.child_count(node));
  Parameters p = init_params(cfg, 0);
  OptimizerState st = OptimizerState::init(p);
  OptimizerConfig ocfg;
  ocfg.learning_rate = 0.01;

  Gradients g = p.zeros_like();
  for (auto& tv : g.tensors()) tv.tensor->setConstant(1.0);
  Parameters before = p;
  optimizer_step(&p, g, &st, ocfg);
  auto pb = before.tensors();
  auto pa = p.tensors();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    // Every coordinate moved by ~lr in the negative gradient direction.
    Eigen::MatrixXd delta = *pa[i].tensor - *pb[i].tensor;
    INFO("tensor ", pa[i].name);
    CHECK(delta.maxCoeff() < 0.0);
    CHECK(delta.minCoeff() > -0.011);
  }
}

TEST_CASE("non-finite gradients surface as a numeric error") {
  Parameters p = scalar_params(0.0);
  OptimizerState st = OptimizerState::init(p);
  OptimizerConfig cfg;
  Gradients g = p.zeros_like();
  g.embed(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(optimizer_step(&p, g, &st, cfg), NumericError);
}
