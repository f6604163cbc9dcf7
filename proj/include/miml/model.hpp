#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "miml/hierarchy.hpp"

namespace miml {

struct ModelConfig {
  int dim = 64;
  int layers = 1;
  int heads = 2;
  int ff_dim = 0;  // 0 -> 4 * dim
  int vocab_size = 0;
  int window_size = 512;
  double dropout = 0.1;
  std::vector<int> edge_counts;  // C_k per internal classifier node k
  double lambda_train = 0.5;
  double lambda_eval = 0.5;
  enum class Mode { SingleInstance, Miml } mode = Mode::Miml;
  enum class HeadMode { FlatOnly, FlatAux } head_mode = HeadMode::FlatAux;
  bool strict = false;  // error instead of clamping zero-probability gold events

  int effective_ff_dim() const { return ff_dim > 0 ? ff_dim : 4 * dim; }
  void validate() const;
};

struct LayerParams {
  Eigen::MatrixXd wq, wk, wv, wo;   // dim x dim
  Eigen::MatrixXd bq, bk, bv, bo;   // dim x 1
  Eigen::MatrixXd w1;               // ff x dim
  Eigen::MatrixXd b1;               // ff x 1
  Eigen::MatrixXd w2;               // dim x ff
  Eigen::MatrixXd b2;               // dim x 1
  Eigen::MatrixXd ln1_g, ln1_b, ln2_g, ln2_b;  // dim x 1
};

// Flat view over every parameter tensor, in a fixed declared order. The
// optimizer, finite differences, and the checkpoint format all walk this.
struct TensorView {
  std::string name;
  Eigen::MatrixXd* tensor;
};

struct Parameters {
  Eigen::MatrixXd embed;  // vocab x dim
  Eigen::MatrixXd pos;    // window x dim
  std::vector<LayerParams> layers;
  Eigen::MatrixXd flat_head;               // 14 x dim
  std::vector<Eigen::MatrixXd> aux_heads;  // C_k x dim per classifier

  std::vector<TensorView> tensors();
  std::vector<TensorView> tensors() const;  // views are mutable; const copies names only
  Parameters zeros_like() const;
  bool all_finite() const;
};

using Gradients = Parameters;

Parameters init_params(const ModelConfig& config, std::uint64_t seed);

// Per-layer forward activations retained for the backward pass.
struct LayerCache {
  Eigen::MatrixXd x_in;
  Eigen::MatrixXd ln1_xhat;
  Eigen::VectorXd ln1_inv_std;
  Eigen::MatrixXd q, k, v;
  std::vector<Eigen::MatrixXd> attn;  // per-head n x n softmax
  Eigen::MatrixXd ctx;
  Eigen::MatrixXd attn_mask;  // dropout mask (empty in eval)
  Eigen::MatrixXd x_mid;
  Eigen::MatrixXd ln2_xhat;
  Eigen::VectorXd ln2_inv_std;
  Eigen::MatrixXd ff_pre;
  Eigen::MatrixXd ff_act;
  Eigen::MatrixXd ff_mask;
};

struct EncodeCache {
  std::vector<int> ids;
  Eigen::MatrixXd emb_mask;
  std::vector<LayerCache> layers;
};

// Hidden states, one row per token. Training mode applies seeded dropout and
// fills `cache` for the backward pass.
Eigen::MatrixXd encode(const std::vector<int>& ids, const Parameters& params,
                       const ModelConfig& config, bool training = false,
                       std::uint64_t dropout_seed = 0, EncodeCache* cache = nullptr);

// Encoder invocation counter (per process); the MIML-vs-single-instance
// efficiency property is asserted against it.
long encoder_invocation_count();
void reset_encoder_invocation_count();

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

Eigen::VectorXd flat_distribution(const Eigen::VectorXd& h, const Parameters& params);
Eigen::VectorXd aux_node_distribution(const Eigen::VectorXd& h, const Parameters& params, int k);
// Path product over the tree, computed in log space.
Eigen::VectorXd aux_leaf_distribution(const std::vector<Eigen::VectorXd>& node_dists,
                                      const HierarchyTree& tree);
Eigen::VectorXd combined_distribution(const Eigen::VectorXd& p_flat,
                                      const Eigen::VectorXd& p_aux, double lambda_eval);

double flat_loss(const Eigen::VectorXd& p_flat, int technique, bool strict);
// node_dists is indexed by classifier id k (the tree's internal-node order).
double aux_loss(const std::vector<Eigen::VectorXd>& node_dists, const LeafPath& path,
                const HierarchyTree& tree, bool strict);
double overall_loss(double l_flat, double l_aux, double lambda_train);

// Top-`count` techniques by probability; ties to the smaller enum index.
std::vector<int> predict_labels(const Eigen::VectorXd& p, int count);

struct SpanForward {
  Eigen::VectorXd h;
  Eigen::VectorXd p_flat;
  std::vector<Eigen::VectorXd> p_nodes;
  Eigen::VectorXd p_aux;  // empty when head mode is flat-only
  Eigen::VectorXd p_ovr;
};

struct ForwardResult {
  Eigen::MatrixXd hidden;
  std::vector<SpanForward> spans;
};

// One encoder pass serving every span in the window (inference mode).
ForwardResult forward_window(const std::vector<int>& ids, const std::vector<int>& bop_positions,
                             const Parameters& params, const ModelConfig& config,
                             const HierarchyTree& tree);

struct TrainingSpan {
  int bop_pos = 0;
  int technique = 0;            // rarer-label gold (MIML / aux path)
  std::vector<int> label_set;   // multi-hot gold (single-instance BCE)
};

struct TrainingWindow {
  std::vector<int> ids;
  std::vector<TrainingSpan> spans;
};

// Batch-mean l_ovr over windows (span losses averaged within each window) and
// its exact gradients. Deterministic given dropout_seed.
double miml_backward(const std::vector<TrainingWindow>& batch, const Parameters& params,
                     const ModelConfig& config, const HierarchyTree& tree,
                     std::uint64_t dropout_seed, Gradients* grads);

double single_instance_bce_loss(const Eigen::VectorXd& h, const Parameters& params,
                                const std::vector<int>& label_set);
// Per-class sigmoid scores for single-instance inference.
Eigen::VectorXd sigmoid_scores(const Eigen::VectorXd& h, const Parameters& params);

// Batch-mean single-instance loss (BCE, mixed with the aux loss when the head
// mode includes the auxiliary classifiers) and gradients. One example per
// TrainingWindow, carrying exactly one span.
double single_instance_backward(const std::vector<TrainingWindow>& batch, const Parameters& params,
                                const ModelConfig& config, const HierarchyTree& tree,
                                std::uint64_t dropout_seed, Gradients* grads);

}  // namespace miml
