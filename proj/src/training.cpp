#include "miml/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "miml/errors.hpp"
#include "miml/rng.hpp"

namespace miml {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw UsageError("learning rate must be positive");
  if (weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  if (epochs < 1) throw UsageError("epoch count must be >= 1");
  if (eval_every < 1) throw UsageError("eval interval must be >= 1");
  if (!(window_size > stride && stride > 0)) {
    throw UsageError("window size must exceed stride, stride must be positive");
  }
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

std::vector<SpanAnnotation> article_annotations(const Dataset& ds, int article_id) {
  std::vector<SpanAnnotation> out;
  for (const auto& a : ds.annotations) {
    if (a.article_id == article_id) out.push_back(a);
  }
  return out;
}

void clip_example(std::vector<int>* ids, int bop_pos, int window_size) {
  if (static_cast<int>(ids->size()) > window_size) {
    if (bop_pos >= window_size) {
      throw DataError("single-instance example does not fit the model window");
    }
    ids->resize(static_cast<std::size_t>(window_size));
  }
}

}  // namespace

std::vector<TrainingWindow> build_miml_windows(const Dataset& ds, const Tokenizer& tok,
                                               const FrequencyTable& freq,
                                               std::size_t window_size, std::size_t stride) {
  std::vector<TrainingWindow> out;
  for (const auto& article : ds.articles) {
    auto spans = article_annotations(ds, article.id);
    if (spans.empty()) continue;
    TokenizedArticle ta = tokenize(article.text, tok, article.id);
    MarkedSequence ms = insert_markers(ta, spans, tok);
    WindowSet ws = make_windows(ms, tok, window_size, stride);
    for (const auto& w : ws.windows) {
      if (w.spans.empty()) continue;
      TrainingWindow tw;
      tw.ids = w.ids;
      for (const auto& siw : w.spans) {
        const auto& ann = spans[static_cast<std::size_t>(siw.span_id)];
        TrainingSpan ts;
        ts.bop_pos = siw.bop_pos;
        ts.technique = rarer_label(ann.labels, freq);
        ts.label_set = ann.labels;
        tw.spans.push_back(std::move(ts));
      }
      out.push_back(std::move(tw));
    }
  }
  return out;
}

std::vector<TrainingWindow> build_single_instance_examples(const Dataset& ds, const Tokenizer& tok,
                                                           const FrequencyTable& freq,
                                                           std::size_t context) {
  std::vector<TrainingWindow> out;
  for (const auto& article : ds.articles) {
    TokenizedArticle ta = tokenize(article.text, tok, article.id);
    for (const auto& ann : article_annotations(ds, article.id)) {
      SingleInstanceExample ex = single_instance_example(ta, ann, tok, context);
      TrainingWindow tw;
      tw.ids = std::move(ex.ids);
      TrainingSpan ts;
      ts.bop_pos = ex.bop_pos;
      ts.technique = rarer_label(ann.labels, freq);
      ts.label_set = ann.labels;
      tw.spans.push_back(std::move(ts));
      out.push_back(std::move(tw));
    }
  }
  return out;
}

std::vector<PredictionRecord> predict(const Dataset& ds, const HierarchyTree& tree,
                                      const Parameters& params, const ModelConfig& config,
                                      const Tokenizer& tok, const TrainConfig& train_cfg) {
  // Known label count per span group.
  std::map<std::tuple<int, std::size_t, std::size_t>, int> row_counts;
  for (const auto& r : ds.rows) ++row_counts[{r.article_id, r.start, r.end}];

  std::vector<PredictionRecord> out;
  for (const auto& article : ds.articles) {
    auto spans = article_annotations(ds, article.id);
    if (spans.empty()) continue;
    TokenizedArticle ta = tokenize(article.text, tok, article.id);

    std::vector<Eigen::VectorXd> span_scores(spans.size());
    if (config.mode == ModelConfig::Mode::Miml) {
      MarkedSequence ms = insert_markers(ta, spans, tok);
      WindowSet ws = make_windows(ms, tok, train_cfg.window_size, train_cfg.stride);
      // One forward per window; each span reads its primary window.
      std::map<std::pair<int, int>, Eigen::VectorXd> window_span_probs;
      for (const auto& w : ws.windows) {
        if (w.spans.empty()) continue;
        std::vector<int> bops;
        for (const auto& siw : w.spans) bops.push_back(siw.bop_pos);
        ForwardResult fr = forward_window(w.ids, bops, params, config, tree);
        for (std::size_t i = 0; i < w.spans.size(); ++i) {
          window_span_probs[{w.ordinal, w.spans[i].span_id}] = fr.spans[i].p_ovr;
        }
      }
      for (std::size_t s = 0; s < spans.size(); ++s) {
        int primary = primary_window_for_span(ws, static_cast<int>(s));
        span_scores[s] = window_span_probs.at({primary, static_cast<int>(s)});
      }
    } else {
      for (std::size_t s = 0; s < spans.size(); ++s) {
        SingleInstanceExample ex = single_instance_example(ta, spans[s], tok, train_cfg.context);
        clip_example(&ex.ids, ex.bop_pos, config.window_size);
        Eigen::MatrixXd hidden = encode(ex.ids, params, config);
        Eigen::VectorXd h = hidden.row(ex.bop_pos).transpose();
        Eigen::VectorXd scores = sigmoid_scores(h, params);
        if (config.head_mode == ModelConfig::HeadMode::FlatAux && config.lambda_eval > 0.0) {
          std::vector<Eigen::VectorXd> node_dists;
          for (std::size_t k = 0; k < params.aux_heads.size(); ++k) {
            node_dists.push_back(aux_node_distribution(h, params, static_cast<int>(k)));
          }
          Eigen::VectorXd p_aux = aux_leaf_distribution(node_dists, tree);
          scores = (1.0 - config.lambda_eval) * scores + config.lambda_eval * p_aux;
        }
        span_scores[s] = std::move(scores);
      }
    }

    for (std::size_t s = 0; s < spans.size(); ++s) {
      const auto& ann = spans[s];
      int count = row_counts.at({ann.article_id, ann.start, ann.end});
      for (int t : predict_labels(span_scores[s], count)) {
        out.push_back(PredictionRecord{ann.article_id, ann.start, ann.end, t});
      }
    }
  }
  return out;
}

TrainResult train(const Dataset& train_data, const Dataset& eval_data, const HierarchyTree& tree,
                  ModelConfig model_cfg, const TrainConfig& train_cfg, const Tokenizer& tok) {
  train_cfg.validate();
  model_cfg.vocab_size = tok.vocab_size();

  FrequencyTable freq = compute_frequency_table(train_data);
  std::vector<TrainingWindow> examples;
  if (model_cfg.mode == ModelConfig::Mode::Miml) {
    model_cfg.window_size = static_cast<int>(train_cfg.window_size);
    examples = build_miml_windows(train_data, tok, freq, train_cfg.window_size, train_cfg.stride);
  } else {
    examples = build_single_instance_examples(train_data, tok, freq, train_cfg.context);
    std::size_t max_len = 1;
    for (const auto& ex : examples) max_len = std::max(max_len, ex.ids.size());
    model_cfg.window_size = static_cast<int>(max_len + 2 * train_cfg.context);
    for (auto& ex : examples) clip_example(&ex.ids, ex.spans[0].bop_pos, model_cfg.window_size);
  }
  model_cfg.validate();
  if (examples.empty()) throw DataError("training set produced no examples");

  Parameters params = init_params(model_cfg, train_cfg.seed);
  OptimizerState opt_state = OptimizerState::init(params);
  OptimizerConfig opt_cfg;
  opt_cfg.learning_rate = train_cfg.learning_rate;
  opt_cfg.weight_decay = train_cfg.weight_decay;

  TrainResult result;
  result.config = model_cfg;
  result.best_params = params;
  result.history.epochs = train_cfg.epochs;
  double best_micro = -1.0;
  long best_step = 0;

  long step = 0;
  double last_loss = 0.0;
  long last_eval_step = -1;

  auto run_eval = [&]() {
    auto preds = predict(eval_data, tree, params, model_cfg, tok, train_cfg);
    MetricsReport report = evaluate(preds, eval_data.rows, tree);
    EvalPoint point;
    point.step = step;
    point.loss = last_loss;
    point.micro_f1 = report.micro_f1;
    point.tree_f1_all = report.tree_f1_all;
    result.history.points.push_back(point);
    if (report.micro_f1 > best_micro) {
      best_micro = report.micro_f1;
      best_step = step;
      result.best_params = params;
    }
    last_eval_step = step;
  };

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    auto rng = make_rng(train_cfg.seed, "epoch" + std::to_string(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(train_cfg.batch_size)) {
      std::vector<TrainingWindow> batch;
      for (std::size_t i = pos;
           i < std::min(order.size(), pos + static_cast<std::size_t>(train_cfg.batch_size)); ++i) {
        batch.push_back(examples[order[i]]);
      }
      Gradients grads = params.zeros_like();
      std::uint64_t drop_seed = derive_seed(train_cfg.seed, "step" + std::to_string(step));
      long c0 = encoder_invocation_count();
      try {
        if (model_cfg.mode == ModelConfig::Mode::Miml) {
          last_loss = miml_backward(batch, params, model_cfg, tree, drop_seed, &grads);
        } else {
          last_loss = single_instance_backward(batch, params, model_cfg, tree, drop_seed, &grads);
        }
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
      }
      result.history.encoder_invocations_train += encoder_invocation_count() - c0;
      optimizer_step(&params, grads, &opt_state, opt_cfg);
      ++step;
      if (step % train_cfg.eval_every == 0 && !eval_data.rows.empty()) run_eval();
    }
  }
  if (step != last_eval_step && !eval_data.rows.empty()) run_eval();

  result.history.best_step = best_step;
  result.history.best_micro_f1 = best_micro;
  return result;
}

CvResult run_cross_validation(const Dataset& dataset, const HierarchyTree& tree,
                              ModelConfig model_cfg, const TrainConfig& train_cfg, int k) {
  auto folds = make_folds(dataset, k, derive_seed(train_cfg.seed, "cv-folds"));
  CvResult result;
  std::vector<double> micros;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    Dataset train_ds = dataset.subset(folds[f].train_articles);
    Dataset eval_ds = dataset.subset(folds[f].eval_articles);
    TrainConfig fold_cfg = train_cfg;
    fold_cfg.seed = derive_seed(train_cfg.seed, "fold" + std::to_string(f));
    try {
      Tokenizer tok = build_vocab(train_ds, train_cfg.min_vocab_freq, train_cfg.marker_budget);
      TrainResult tr = train(train_ds, eval_ds, tree, model_cfg, fold_cfg, tok);
      auto preds = predict(eval_ds, tree, tr.best_params, tr.config, tok, fold_cfg);
      FoldMetrics fm;
      fm.fold = static_cast<int>(f);
      fm.report = evaluate(preds, eval_ds.rows, tree);
      micros.push_back(fm.report.micro_f1);
      result.folds.push_back(std::move(fm));
    } catch (const std::runtime_error& e) {
      throw DataError("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  std::tie(result.micro_mean, result.micro_std) = mean_std(micros);
  return result;
}

std::vector<SweepRow> lambda_sweep(const Dataset& train_data, const Dataset& eval_data,
                                   const HierarchyTree& tree, ModelConfig model_cfg,
                                   const TrainConfig& train_cfg,
                                   const std::vector<double>& lambda_train_grid,
                                   bool diagonal_only) {
  Tokenizer tok = build_vocab(train_data, train_cfg.min_vocab_freq, train_cfg.marker_budget);
  std::vector<SweepRow> rows;
  for (double lt : lambda_train_grid) {
    ModelConfig cfg = model_cfg;
    cfg.lambda_train = lt;
    TrainResult tr = train(train_data, eval_data, tree, cfg, train_cfg, tok);

    std::vector<double> eval_lambdas;
    if (diagonal_only) {
      eval_lambdas = {lt};
    } else {
      eval_lambdas = {0.0, 1.0, lt};
      // Drop duplicates while keeping the policy order.
      std::vector<double> unique;
      for (double le : eval_lambdas) {
        if (std::find(unique.begin(), unique.end(), le) == unique.end()) unique.push_back(le);
      }
      eval_lambdas = unique;
    }
    for (double le : eval_lambdas) {
      ModelConfig eval_cfg = tr.config;
      eval_cfg.lambda_eval = le;
      auto preds = predict(eval_data, tree, tr.best_params, eval_cfg, tok, train_cfg);
      MetricsReport report = evaluate(preds, eval_data.rows, tree);
      rows.push_back(SweepRow{lt, le, report.micro_f1, report.tree_f1_all});
    }
  }
  return rows;
}

AblationResult shuffled_ablation(const Dataset& train_data, const Dataset& eval_data,
                                 const HierarchyTree& tree, std::uint64_t shuffle_seed,
                                 ModelConfig model_cfg, const TrainConfig& train_cfg) {
  HierarchyTree shuffled = tree.shuffle_leaves(shuffle_seed);
  Tokenizer tok = build_vocab(train_data, train_cfg.min_vocab_freq, train_cfg.marker_budget);

  auto run = [&](const HierarchyTree& t, MetricsReport* mixed, MetricsReport* aux_only) {
    ModelConfig cfg = model_cfg;
    cfg.edge_counts.clear();
    for (int node : t.internal_nodes()) cfg.edge_counts.push_back(t.child_count(node));
    TrainResult tr = train(train_data, eval_data, t, cfg, train_cfg, tok);
    auto preds = predict(eval_data, t, tr.best_params, tr.config, tok, train_cfg);
    *mixed = evaluate(preds, eval_data.rows, t);
    ModelConfig aux_cfg = tr.config;
    aux_cfg.lambda_eval = 1.0;
    auto aux_preds = predict(eval_data, t, tr.best_params, aux_cfg, tok, train_cfg);
    *aux_only = evaluate(aux_preds, eval_data.rows, t);
  };

  AblationResult result;
  run(tree, &result.true_tree, &result.true_tree_aux_only);
  run(shuffled, &result.shuffled_tree, &result.shuffled_tree_aux_only);
  return result;
}

}  // namespace miml
