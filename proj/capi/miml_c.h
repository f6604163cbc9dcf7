#ifndef MIML_C_H
#define MIML_C_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
typedef enum {
  MIML_OK = 0,
  MIML_USAGE_ERROR = 1,
  MIML_DATA_ERROR = 2,
  MIML_NUMERIC_ERROR = 3
} miml_status;

/* Message for the most recent failing call on this thread. */
const char* miml_last_error(void);

/* Frees strings returned through char** out-parameters. */
void miml_string_free(char* s);

typedef struct miml_hierarchy miml_hierarchy;
typedef struct miml_dataset miml_dataset;
typedef struct miml_vocab miml_vocab;
typedef struct miml_model miml_model;

/* ---- hierarchy ---- */

miml_status miml_hierarchy_load_default(miml_hierarchy** out);
miml_status miml_hierarchy_load_file(const char* path, miml_hierarchy** out);
miml_status miml_hierarchy_shuffle(const miml_hierarchy* tree, uint64_t seed,
                                   miml_hierarchy** out);
miml_status miml_hierarchy_to_text(const miml_hierarchy* tree, char** out);
void miml_hierarchy_free(miml_hierarchy* tree);

/* ---- datasets ---- */

/* Loads article<id>.txt files plus an optional annotation TSV (may be NULL). */
miml_status miml_dataset_load(const char* articles_dir, const char* labels_tsv,
                              miml_dataset** out);
/* Generator spec is key=value lines; see miml_dataset_write for the layout. */
miml_status miml_dataset_synthesize(const char* spec_text, const miml_hierarchy* tree,
                                    uint64_t seed, miml_dataset** out);
miml_status miml_dataset_write(const miml_dataset* ds, const char* articles_dir,
                               const char* labels_tsv);
/* CSV: technique,count plus a total row. */
miml_status miml_dataset_frequency_csv(const miml_dataset* ds, char** csv_out);
miml_status miml_dataset_article_count(const miml_dataset* ds, int* out);
miml_status miml_dataset_row_count(const miml_dataset* ds, long* out);
void miml_dataset_free(miml_dataset* ds);

/* ---- vocabulary ---- */

miml_status miml_vocab_build(const miml_dataset* ds, int min_frequency, int marker_budget,
                             miml_vocab** out);
miml_status miml_vocab_save(const miml_vocab* vocab, const char* path);
miml_status miml_vocab_load(const char* path, miml_vocab** out);
miml_status miml_vocab_size(const miml_vocab* vocab, int* out);
miml_status miml_vocab_hash(const miml_vocab* vocab, uint64_t* out);
void miml_vocab_free(miml_vocab* vocab);

/* ---- configuration ---- */

typedef struct {
  int dim;
  int layers;
  int heads;
  int ff_dim; /* 0 -> 4 * dim */
  double dropout;
  double lambda_train;
  double lambda_eval;
  int single_instance; /* 0 = joint windowed mode, 1 = one example per span */
  int flat_only;       /* 0 = flat + auxiliary heads, 1 = flat head only */
  int strict;          /* error instead of clamping zero gold probabilities */
} miml_model_config;

typedef struct {
  double learning_rate;
  double weight_decay;
  int batch_size;
  int epochs;
  int eval_every;
  uint64_t seed;
  int window_size;
  int stride;
  int context;
  int min_vocab_freq;
  int marker_budget;
} miml_train_config;

void miml_model_config_defaults(miml_model_config* cfg);
void miml_train_config_defaults(miml_train_config* cfg);

/* ---- preprocessing ---- */

/* CSV: per-article window statistics (windows, spans, truncated spans). */
miml_status miml_preprocess_csv(const miml_dataset* ds, const miml_vocab* vocab,
                                int window_size, int stride, char** csv_out);

/* ---- training and inference ---- */

/* eval_ds may be NULL (no during-training evaluation). history_csv_out may be
 * NULL; otherwise it receives step,loss,micro_f1,tree_f1_all rows. */
miml_status miml_train(const miml_dataset* train_ds, const miml_dataset* eval_ds,
                       const miml_hierarchy* tree, const miml_model_config* model_cfg,
                       const miml_train_config* train_cfg, const miml_vocab* vocab,
                       miml_model** out, char** history_csv_out);

miml_status miml_model_save(const miml_model* model, const char* path);
/* vocab may be NULL to skip the vocabulary-hash check. */
miml_status miml_model_load(const char* path, const miml_vocab* vocab, miml_model** out);
/* Overrides the stored inference mixing weight. */
miml_status miml_model_set_lambda_eval(miml_model* model, double lambda_eval);
void miml_model_free(miml_model* model);

/* Writes a prediction TSV (article_id, technique, start, end) for every
 * annotated span group in the dataset. */
miml_status miml_predict_to_file(const miml_model* model, const miml_dataset* ds,
                                 const miml_hierarchy* tree, const miml_vocab* vocab,
                                 const miml_train_config* train_cfg, const char* out_tsv);

/* ---- evaluation ---- */

/* articles_dir may be NULL (offsets are then not bounds-checked). Outputs may
 * each be NULL. */
miml_status miml_evaluate_files(const char* gold_tsv, const char* pred_tsv,
                                const char* articles_dir, const miml_hierarchy* tree,
                                char** report_out, char** csv_out);

/* ---- experiment drivers ---- */

/* CSV: fold,micro_f1,tree_f1_all plus mean/std rows. */
miml_status miml_cross_validate(const miml_dataset* ds, const miml_hierarchy* tree,
                                const miml_model_config* model_cfg,
                                const miml_train_config* train_cfg, int folds, char** csv_out);

/* CSV: lambda_train,lambda_eval,micro_f1,tree_f1_all. */
miml_status miml_lambda_sweep(const miml_dataset* train_ds, const miml_dataset* eval_ds,
                              const miml_hierarchy* tree, const miml_model_config* model_cfg,
                              const miml_train_config* train_cfg, const double* lambda_grid,
                              int grid_size, int diagonal_only, char** csv_out);

/* CSV: condition,lambda_eval,micro_f1,tree_f1_all for the four conditions
 * (true/shuffled tree x mixed/aux-only inference). */
miml_status miml_ablate_shuffle(const miml_dataset* train_ds, const miml_dataset* eval_ds,
                                const miml_hierarchy* tree, uint64_t shuffle_seed,
                                const miml_model_config* model_cfg,
                                const miml_train_config* train_cfg, char** csv_out);

#ifdef __cplusplus
}
#endif

#endif /* MIML_C_H */
