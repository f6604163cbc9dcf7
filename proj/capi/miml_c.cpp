#include "miml_c.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "miml/checkpoint.hpp"
#include "miml/corpus.hpp"
#include "miml/errors.hpp"
#include "miml/evaluation.hpp"
#include "miml/hierarchy.hpp"
#include "miml/synthetic.hpp"
#include "miml/training.hpp"
#include "miml/windowing.hpp"

using namespace miml;

struct miml_hierarchy {
  HierarchyTree tree;
};
struct miml_dataset {
  Dataset ds;
};
struct miml_vocab {
  Tokenizer tok;
};
struct miml_model {
  Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
miml_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MIML_OK;
  } catch (const UsageError& e) {
    g_last_error = e.what();
    return MIML_USAGE_ERROR;
  } catch (const NumericError& e) {
    g_last_error = e.what();
    return MIML_NUMERIC_ERROR;
  } catch (const DataError& e) {
    g_last_error = e.what();
    return MIML_DATA_ERROR;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MIML_DATA_ERROR;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw UsageError(std::string("null ") + what);
}

std::string optional_metric(const std::optional<double>& v) {
  return v ? std::to_string(*v) : std::string();
}

ModelConfig to_model_config(const miml_model_config& c, const HierarchyTree& tree) {
  ModelConfig cfg;
  cfg.dim = c.dim;
  cfg.layers = c.layers;
  cfg.heads = c.heads;
  cfg.ff_dim = c.ff_dim;
  cfg.dropout = c.dropout;
  cfg.lambda_train = c.lambda_train;
  cfg.lambda_eval = c.lambda_eval;
  cfg.mode = c.single_instance ? ModelConfig::Mode::SingleInstance : ModelConfig::Mode::Miml;
  cfg.head_mode = c.flat_only ? ModelConfig::HeadMode::FlatOnly : ModelConfig::HeadMode::FlatAux;
  cfg.strict = c.strict != 0;
  if (!c.flat_only) {
    for (int node : tree.internal_nodes()) cfg.edge_counts.push_back(tree.child_count(node));
  }
  return cfg;
}

TrainConfig to_train_config(const miml_train_config& c) {
  TrainConfig cfg;
  cfg.learning_rate = c.learning_rate;
  cfg.weight_decay = c.weight_decay;
  cfg.batch_size = c.batch_size;
  cfg.epochs = c.epochs;
  cfg.eval_every = c.eval_every;
  cfg.seed = c.seed;
  if (c.window_size < 1 || c.stride < 1 || c.context < 0) {
    throw UsageError("window size and stride must be positive, context non-negative");
  }
  cfg.window_size = static_cast<std::size_t>(c.window_size);
  cfg.stride = static_cast<std::size_t>(c.stride);
  cfg.context = static_cast<std::size_t>(c.context);
  cfg.min_vocab_freq = c.min_vocab_freq;
  cfg.marker_budget = c.marker_budget;
  return cfg;
}

std::string history_csv(const RunHistory& history) {
  std::ostringstream out;
  out << "step,loss,micro_f1,tree_f1_all\n";
  for (const auto& p : history.points) {
    out << p.step << "," << p.loss << "," << p.micro_f1 << "," << optional_metric(p.tree_f1_all)
        << "\n";
  }
  return out.str();
}

}  // namespace

extern "C" {

const char* miml_last_error(void) { return g_last_error.c_str(); }

void miml_string_free(char* s) { std::free(s); }

/* ---- hierarchy ---- */

miml_status miml_hierarchy_load_default(miml_hierarchy** out) {
  return guarded([&] {
    require(out, "output pointer");
    *out = new miml_hierarchy{HierarchyTree::load_default()};
  });
}

miml_status miml_hierarchy_load_file(const char* path, miml_hierarchy** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "output pointer");
    *out = new miml_hierarchy{HierarchyTree::load_file(path)};
  });
}

miml_status miml_hierarchy_shuffle(const miml_hierarchy* tree, uint64_t seed,
                                   miml_hierarchy** out) {
  return guarded([&] {
    require(tree, "hierarchy");
    require(out, "output pointer");
    *out = new miml_hierarchy{tree->tree.shuffle_leaves(seed)};
  });
}

miml_status miml_hierarchy_to_text(const miml_hierarchy* tree, char** out) {
  return guarded([&] {
    require(tree, "hierarchy");
    require(out, "output pointer");
    *out = dup_string(tree->tree.to_config_text());
  });
}

void miml_hierarchy_free(miml_hierarchy* tree) { delete tree; }

/* ---- datasets ---- */

miml_status miml_dataset_load(const char* articles_dir, const char* labels_tsv,
                              miml_dataset** out) {
  return guarded([&] {
    require(articles_dir, "articles directory");
    require(out, "output pointer");
    auto ds = new miml_dataset;
    if (labels_tsv) {
      ds->ds = load_dataset(articles_dir, labels_tsv);
    } else {
      ds->ds.articles = load_articles(articles_dir);
    }
    *out = ds;
  });
}

miml_status miml_dataset_synthesize(const char* spec_text, const miml_hierarchy* tree,
                                    uint64_t seed, miml_dataset** out) {
  return guarded([&] {
    require(spec_text, "generator spec");
    require(tree, "hierarchy");
    require(out, "output pointer");
    GeneratorSpec spec = GeneratorSpec::parse(spec_text);
    *out = new miml_dataset{generate_synthetic(spec, tree->tree, seed)};
  });
}

miml_status miml_dataset_write(const miml_dataset* ds, const char* articles_dir,
                               const char* labels_tsv) {
  return guarded([&] {
    require(ds, "dataset");
    require(articles_dir, "articles directory");
    require(labels_tsv, "labels path");
    std::filesystem::create_directories(articles_dir);
    for (const auto& a : ds->ds.articles) {
      std::filesystem::path p =
          std::filesystem::path(articles_dir) / ("article" + std::to_string(a.id) + ".txt");
      std::ofstream out(p, std::ios::binary);
      if (!out) throw DataError("cannot write article file: " + p.string());
      out << a.text;
    }
    write_predictions(ds->ds.rows, labels_tsv);
  });
}

miml_status miml_dataset_frequency_csv(const miml_dataset* ds, char** csv_out) {
  return guarded([&] {
    require(ds, "dataset");
    require(csv_out, "output pointer");
    FrequencyTable table = compute_frequency_table(ds->ds);
    std::ostringstream out;
    out << "technique,count\n";
    for (int t = 0; t < kNumTechniques; ++t) {
      out << "\"" << technique_name(t) << "\"," << table.counts[static_cast<std::size_t>(t)]
          << "\n";
    }
    out << "total," << table.total() << "\n";
    *csv_out = dup_string(out.str());
  });
}

miml_status miml_dataset_article_count(const miml_dataset* ds, int* out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "output pointer");
    *out = static_cast<int>(ds->ds.articles.size());
  });
}

miml_status miml_dataset_row_count(const miml_dataset* ds, long* out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "output pointer");
    *out = static_cast<long>(ds->ds.rows.size());
  });
}

void miml_dataset_free(miml_dataset* ds) { delete ds; }

/* ---- vocabulary ---- */

miml_status miml_vocab_build(const miml_dataset* ds, int min_frequency, int marker_budget,
                             miml_vocab** out) {
  return guarded([&] {
    require(ds, "dataset");
    require(out, "output pointer");
    *out = new miml_vocab{build_vocab(ds->ds, min_frequency, marker_budget)};
  });
}

miml_status miml_vocab_save(const miml_vocab* vocab, const char* path) {
  return guarded([&] {
    require(vocab, "vocabulary");
    require(path, "path");
    vocab->tok.save(path);
  });
}

miml_status miml_vocab_load(const char* path, miml_vocab** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "output pointer");
    *out = new miml_vocab{Tokenizer::load(path)};
  });
}

miml_status miml_vocab_size(const miml_vocab* vocab, int* out) {
  return guarded([&] {
    require(vocab, "vocabulary");
    require(out, "output pointer");
    *out = vocab->tok.vocab_size();
  });
}

miml_status miml_vocab_hash(const miml_vocab* vocab, uint64_t* out) {
  return guarded([&] {
    require(vocab, "vocabulary");
    require(out, "output pointer");
    *out = vocab->tok.vocab_hash();
  });
}

void miml_vocab_free(miml_vocab* vocab) { delete vocab; }

/* ---- configuration ---- */

void miml_model_config_defaults(miml_model_config* cfg) {
  if (!cfg) return;
  ModelConfig d;
  cfg->dim = d.dim;
  cfg->layers = d.layers;
  cfg->heads = d.heads;
  cfg->ff_dim = d.ff_dim;
  cfg->dropout = d.dropout;
  cfg->lambda_train = d.lambda_train;
  cfg->lambda_eval = d.lambda_eval;
  cfg->single_instance = 0;
  cfg->flat_only = 0;
  cfg->strict = 0;
}

void miml_train_config_defaults(miml_train_config* cfg) {
  if (!cfg) return;
  TrainConfig d;
  cfg->learning_rate = d.learning_rate;
  cfg->weight_decay = d.weight_decay;
  cfg->batch_size = d.batch_size;
  cfg->epochs = d.epochs;
  cfg->eval_every = d.eval_every;
  cfg->seed = d.seed;
  cfg->window_size = static_cast<int>(d.window_size);
  cfg->stride = static_cast<int>(d.stride);
  cfg->context = static_cast<int>(d.context);
  cfg->min_vocab_freq = d.min_vocab_freq;
  cfg->marker_budget = d.marker_budget;
}

/* ---- preprocessing ---- */

miml_status miml_preprocess_csv(const miml_dataset* ds, const miml_vocab* vocab, int window_size,
                                int stride, char** csv_out) {
  return guarded([&] {
    require(ds, "dataset");
    require(vocab, "vocabulary");
    require(csv_out, "output pointer");
    if (window_size < 2 || stride < 1) throw UsageError("invalid window size or stride");
    std::ostringstream out;
    out << "article_id,tokens,spans,windows,truncated_span_instances\n";
    for (const auto& article : ds->ds.articles) {
      std::vector<SpanAnnotation> spans;
      for (const auto& a : ds->ds.annotations) {
        if (a.article_id == article.id) spans.push_back(a);
      }
      TokenizedArticle ta = tokenize(article.text, vocab->tok, article.id);
      long windows = 0, truncated = 0;
      if (!spans.empty()) {
        MarkedSequence ms = insert_markers(ta, spans, vocab->tok);
        WindowSet ws = make_windows(ms, vocab->tok, static_cast<std::size_t>(window_size),
                                    static_cast<std::size_t>(stride));
        windows = static_cast<long>(ws.windows.size());
        for (const auto& w : ws.windows) {
          for (const auto& siw : w.spans) {
            if (siw.truncated) ++truncated;
          }
        }
      }
      out << article.id << "," << ta.ids.size() << "," << spans.size() << "," << windows << ","
          << truncated << "\n";
    }
    *csv_out = dup_string(out.str());
  });
}

/* ---- training and inference ---- */

miml_status miml_train(const miml_dataset* train_ds, const miml_dataset* eval_ds,
                       const miml_hierarchy* tree, const miml_model_config* model_cfg,
                       const miml_train_config* train_cfg, const miml_vocab* vocab,
                       miml_model** out, char** history_csv_out) {
  return guarded([&] {
    require(train_ds, "training dataset");
    require(tree, "hierarchy");
    require(model_cfg, "model config");
    require(train_cfg, "train config");
    require(vocab, "vocabulary");
    require(out, "output pointer");
    ModelConfig mc = to_model_config(*model_cfg, tree->tree);
    TrainConfig tc = to_train_config(*train_cfg);
    Dataset empty;
    const Dataset& eval = eval_ds ? eval_ds->ds : empty;
    TrainResult tr = train(train_ds->ds, eval, tree->tree, mc, tc, vocab->tok);

    auto model = new miml_model;
    model->ckpt.config = tr.config;
    model->ckpt.vocab_hash = vocab->tok.vocab_hash();
    model->ckpt.params = std::move(tr.best_params);
    *out = model;
    if (history_csv_out) *history_csv_out = dup_string(history_csv(tr.history));
  });
}

miml_status miml_model_save(const miml_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    save_checkpoint(model->ckpt, path);
  });
}

miml_status miml_model_load(const char* path, const miml_vocab* vocab, miml_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "output pointer");
    auto model = new miml_model;
    try {
      model->ckpt = vocab ? load_checkpoint(path, vocab->tok.vocab_hash()) : load_checkpoint(path);
    } catch (...) {
      delete model;
      throw;
    }
    *out = model;
  });
}

miml_status miml_model_set_lambda_eval(miml_model* model, double lambda_eval) {
  return guarded([&] {
    require(model, "model");
    if (lambda_eval < 0.0 || lambda_eval > 1.0) throw UsageError("lambda_eval must be in [0, 1]");
    model->ckpt.config.lambda_eval = lambda_eval;
  });
}

void miml_model_free(miml_model* model) { delete model; }

miml_status miml_predict_to_file(const miml_model* model, const miml_dataset* ds,
                                 const miml_hierarchy* tree, const miml_vocab* vocab,
                                 const miml_train_config* train_cfg, const char* out_tsv) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    require(tree, "hierarchy");
    require(vocab, "vocabulary");
    require(train_cfg, "train config");
    require(out_tsv, "output path");
    if (vocab->tok.vocab_hash() != model->ckpt.vocab_hash) {
      throw DataError("vocabulary does not match the model checkpoint");
    }
    TrainConfig tc = to_train_config(*train_cfg);
    auto preds =
        predict(ds->ds, tree->tree, model->ckpt.params, model->ckpt.config, vocab->tok, tc);
    write_predictions(preds, out_tsv);
  });
}

/* ---- evaluation ---- */

miml_status miml_evaluate_files(const char* gold_tsv, const char* pred_tsv,
                                const char* articles_dir, const miml_hierarchy* tree,
                                char** report_out, char** csv_out) {
  return guarded([&] {
    require(gold_tsv, "gold path");
    require(pred_tsv, "prediction path");
    require(tree, "hierarchy");
    std::vector<AnnotationRow> gold;
    if (articles_dir) {
      gold = load_annotation_rows(gold_tsv, load_articles(articles_dir));
    } else {
      gold = load_annotation_rows(gold_tsv);
    }
    std::vector<AnnotationRow> pred = load_annotation_rows(pred_tsv);
    MetricsReport report = evaluate(pred, gold, tree->tree);
    if (report_out) *report_out = dup_string(format_report(report));
    if (csv_out) *csv_out = dup_string(report_csv(report));
  });
}

/* ---- experiment drivers ---- */

miml_status miml_cross_validate(const miml_dataset* ds, const miml_hierarchy* tree,
                                const miml_model_config* model_cfg,
                                const miml_train_config* train_cfg, int folds, char** csv_out) {
  return guarded([&] {
    require(ds, "dataset");
    require(tree, "hierarchy");
    require(model_cfg, "model config");
    require(train_cfg, "train config");
    require(csv_out, "output pointer");
    ModelConfig mc = to_model_config(*model_cfg, tree->tree);
    TrainConfig tc = to_train_config(*train_cfg);
    CvResult cv = run_cross_validation(ds->ds, tree->tree, mc, tc, folds);
    std::ostringstream out;
    out << "fold,micro_f1,tree_f1_all\n";
    for (const auto& f : cv.folds) {
      out << f.fold << "," << f.report.micro_f1 << "," << optional_metric(f.report.tree_f1_all)
          << "\n";
    }
    out << "mean," << cv.micro_mean << ",\n";
    out << "std," << cv.micro_std << ",\n";
    *csv_out = dup_string(out.str());
  });
}

miml_status miml_lambda_sweep(const miml_dataset* train_ds, const miml_dataset* eval_ds,
                              const miml_hierarchy* tree, const miml_model_config* model_cfg,
                              const miml_train_config* train_cfg, const double* lambda_grid,
                              int grid_size, int diagonal_only, char** csv_out) {
  return guarded([&] {
    require(train_ds, "training dataset");
    require(eval_ds, "evaluation dataset");
    require(tree, "hierarchy");
    require(model_cfg, "model config");
    require(train_cfg, "train config");
    require(csv_out, "output pointer");
    if (!lambda_grid || grid_size < 1) throw UsageError("empty lambda grid");
    ModelConfig mc = to_model_config(*model_cfg, tree->tree);
    TrainConfig tc = to_train_config(*train_cfg);
    std::vector<double> grid(lambda_grid, lambda_grid + grid_size);
    auto rows =
        lambda_sweep(train_ds->ds, eval_ds->ds, tree->tree, mc, tc, grid, diagonal_only != 0);
    std::ostringstream out;
    out << "lambda_train,lambda_eval,micro_f1,tree_f1_all\n";
    for (const auto& r : rows) {
      out << r.lambda_train << "," << r.lambda_eval << "," << r.micro_f1 << ","
          << optional_metric(r.tree_f1_all) << "\n";
    }
    *csv_out = dup_string(out.str());
  });
}

miml_status miml_ablate_shuffle(const miml_dataset* train_ds, const miml_dataset* eval_ds,
                                const miml_hierarchy* tree, uint64_t shuffle_seed,
                                const miml_model_config* model_cfg,
                                const miml_train_config* train_cfg, char** csv_out) {
  return guarded([&] {
    require(train_ds, "training dataset");
    require(eval_ds, "evaluation dataset");
    require(tree, "hierarchy");
    require(model_cfg, "model config");
    require(train_cfg, "train config");
    require(csv_out, "output pointer");
    ModelConfig mc = to_model_config(*model_cfg, tree->tree);
    TrainConfig tc = to_train_config(*train_cfg);
    AblationResult ab =
        shuffled_ablation(train_ds->ds, eval_ds->ds, tree->tree, shuffle_seed, mc, tc);
    std::ostringstream out;
    out << "condition,lambda_eval,micro_f1,tree_f1_all\n";
    auto row = [&](const char* name, double le, const MetricsReport& r) {
      out << name << "," << le << "," << r.micro_f1 << "," << optional_metric(r.tree_f1_all)
          << "\n";
    };
    row("true_tree", mc.lambda_eval, ab.true_tree);
    row("true_tree_aux_only", 1.0, ab.true_tree_aux_only);
    row("shuffled_tree", mc.lambda_eval, ab.shuffled_tree);
    row("shuffled_tree_aux_only", 1.0, ab.shuffled_tree_aux_only);
    *csv_out = dup_string(out.str());
  });
}

}  // extern "C"
