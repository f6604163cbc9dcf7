#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "miml/corpus.hpp"
#include "miml/evaluation.hpp"
#include "miml/hierarchy.hpp"
#include "miml/model.hpp"
#include "miml/optimizer.hpp"
#include "miml/windowing.hpp"

namespace miml {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 8;  // windows per step (MIML) or spans per step (single-instance)
  int epochs = 20;
  int eval_every = 25;  // steps
  std::uint64_t seed = 0;
  std::size_t window_size = 512;
  std::size_t stride = 256;
  std::size_t context = 256;
  int min_vocab_freq = 1;
  int marker_budget = 64;

  void validate() const;
};

struct EvalPoint {
  long step = 0;
  double loss = 0.0;
  double micro_f1 = 0.0;
  std::optional<double> tree_f1_all;
};

struct RunHistory {
  std::vector<EvalPoint> points;
  long best_step = 0;
  double best_micro_f1 = 0.0;
  long encoder_invocations_train = 0;  // training forwards only, all epochs
  int epochs = 0;
};

struct TrainResult {
  RunHistory history;
  Parameters best_params;
  ModelConfig config;
};

// Rarer-label training targets per window; windows without spans are dropped.
std::vector<TrainingWindow> build_miml_windows(const Dataset& ds, const Tokenizer& tok,
                                               const FrequencyTable& freq,
                                               std::size_t window_size, std::size_t stride);
// One example per span with the full label set (and the rarer label for the
// auxiliary path).
std::vector<TrainingWindow> build_single_instance_examples(const Dataset& ds, const Tokenizer& tok,
                                                           const FrequencyTable& freq,
                                                           std::size_t context);

std::vector<PredictionRecord> predict(const Dataset& ds, const HierarchyTree& tree,
                                      const Parameters& params, const ModelConfig& config,
                                      const Tokenizer& tok, const TrainConfig& train_cfg);

TrainResult train(const Dataset& train_data, const Dataset& eval_data, const HierarchyTree& tree,
                  ModelConfig model_cfg, const TrainConfig& train_cfg, const Tokenizer& tok);

struct FoldMetrics {
  int fold = 0;
  MetricsReport report;
};

struct CvResult {
  std::vector<FoldMetrics> folds;
  double micro_mean = 0.0;
  double micro_std = 0.0;  // sample standard deviation
};

CvResult run_cross_validation(const Dataset& dataset, const HierarchyTree& tree,
                              ModelConfig model_cfg, const TrainConfig& train_cfg, int k);

struct SweepRow {
  double lambda_train = 0.0;
  double lambda_eval = 0.0;
  double micro_f1 = 0.0;
  std::optional<double> tree_f1_all;
};

// One training run per lambda_train value, evaluated at each lambda_eval in
// the policy. `diagonal_only` restricts lambda_eval to lambda_train; otherwise
// the policy is {0, 1, lambda_train}.
std::vector<SweepRow> lambda_sweep(const Dataset& train_data, const Dataset& eval_data,
                                   const HierarchyTree& tree, ModelConfig model_cfg,
                                   const TrainConfig& train_cfg,
                                   const std::vector<double>& lambda_train_grid,
                                   bool diagonal_only);

struct AblationResult {
  MetricsReport true_tree;
  MetricsReport true_tree_aux_only;  // lambda_eval = 1
  MetricsReport shuffled_tree;
  MetricsReport shuffled_tree_aux_only;
};

AblationResult shuffled_ablation(const Dataset& train_data, const Dataset& eval_data,
                                 const HierarchyTree& tree, std::uint64_t shuffle_seed,
                                 ModelConfig model_cfg, const TrainConfig& train_cfg);

// Mean and sample standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace miml
