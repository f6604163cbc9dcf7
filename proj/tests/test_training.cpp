#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "miml/checkpoint.hpp"
#include "miml/errors.hpp"
#include "miml/synthetic.hpp"
#include "miml/training.hpp"

using namespace miml;

namespace {

HierarchyTree default_tree() { return HierarchyTree::load_default(); }

Dataset small_dataset(int articles, std::uint64_t seed) {
  GeneratorSpec spec;
  spec.articles = articles;
  spec.spans_per_article = 2;
  spec.span_tokens = 4;
  spec.gap_tokens = 5;
  spec.filler_vocab = 20;
  return generate_synthetic(spec, default_tree(), seed);
}

ModelConfig small_model(const HierarchyTree& tree) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.lambda_train = 0.5;
  cfg.lambda_eval = 0.5;
  for (int node : tree.internal_nodes()) cfg.edge_counts.push_back(tree.child_count(node));
  return cfg;
}

TrainConfig small_train() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.eval_every = 1000;  // final eval only
  cfg.seed = 21;
  cfg.window_size = 64;
  cfg.stride = 32;
  cfg.context = 16;
  cfg.marker_budget = 8;
  return cfg;
}

bool params_equal(const Parameters& a, const Parameters& b) {
  auto at = a.tensors();
  auto bt = b.tensors();
  if (at.size() != bt.size()) return false;
  for (std::size_t i = 0; i < at.size(); ++i) {
    if (at[i].tensor->rows() != bt[i].tensor->rows() ||
        at[i].tensor->cols() != bt[i].tensor->cols()) {
      return false;
    }
    if (*at[i].tensor != *bt[i].tensor) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg = small_train();
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = small_train();
  cfg.stride = cfg.window_size;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = small_train();
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}

TEST_CASE("mean_std hand check") {
  auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m == doctest::Approx(2.5));
  CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(mean_std({7.0}).second == 0.0);
  CHECK(mean_std({}).first == 0.0);
}

TEST_CASE("build_miml_windows carries one target per span") {
  HierarchyTree tree = default_tree();
  Dataset ds = small_dataset(4, 1);
  Tokenizer tok = build_vocab(ds, 1, 8);
  FrequencyTable freq = compute_frequency_table(ds);
  auto windows = build_miml_windows(ds, tok, freq, 64, 32);

  REQUIRE(!windows.empty());
  std::size_t total_spans = 0;
  for (const auto& w : windows) {
    CHECK(!w.spans.empty());
    CHECK(w.ids.size() <= 64);
    total_spans += w.spans.size();
    for (const auto& s : w.spans) {
      CHECK(s.technique >= 0);
      CHECK(s.technique < kNumTechniques);
      CHECK(std::find(s.label_set.begin(), s.label_set.end(), s.technique) != s.label_set.end());
      CHECK(tok.is_bop(w.ids[static_cast<std::size_t>(s.bop_pos)]));
    }
  }
  // Short articles fit a single window, so every span appears exactly once.
  CHECK(total_spans == ds.annotations.size());
}

TEST_CASE("build_single_instance_examples emits one example per span") {
  HierarchyTree tree = default_tree();
  Dataset ds = small_dataset(3, 2);
  Tokenizer tok = build_vocab(ds, 1, 8);
  FrequencyTable freq = compute_frequency_table(ds);
  auto examples = build_single_instance_examples(ds, tok, freq, 4);
  CHECK(examples.size() == ds.annotations.size());
  for (const auto& ex : examples) {
    REQUIRE(ex.spans.size() == 1);
    CHECK(tok.is_bop(ex.ids[static_cast<std::size_t>(ex.spans[0].bop_pos)]));
  }
}

TEST_CASE("training runs, evaluates, and keeps the best parameters") {
  HierarchyTree tree = default_tree();
  Dataset train_ds = small_dataset(6, 3);
  Dataset eval_ds = small_dataset(3, 4);
  Tokenizer tok = build_vocab(train_ds, 1, 8);
  TrainConfig tcfg = small_train();
  tcfg.eval_every = 2;

  TrainResult tr = train(train_ds, eval_ds, tree, small_model(tree), tcfg, tok);
  REQUIRE(!tr.history.points.empty());
  CHECK(tr.history.points.back().step > 0);
  CHECK(tr.history.encoder_invocations_train > 0);
  double best = -1.0;
  for (const auto& p : tr.history.points) best = std::max(best, p.micro_f1);
  CHECK(tr.history.best_micro_f1 == doctest::Approx(best));
  CHECK(tr.config.vocab_size == tok.vocab_size());
  CHECK(tr.best_params.all_finite());
}

TEST_CASE("training is deterministic for a fixed seed") {
  HierarchyTree tree = default_tree();
  Dataset train_ds = small_dataset(5, 5);
  Dataset eval_ds = small_dataset(2, 6);
  Tokenizer tok = build_vocab(train_ds, 1, 8);
  ModelConfig mcfg = small_model(tree);
  mcfg.dropout = 0.1;
  TrainConfig tcfg = small_train();
  tcfg.epochs = 1;

  TrainResult a = train(train_ds, eval_ds, tree, mcfg, tcfg, tok);
  TrainResult b = train(train_ds, eval_ds, tree, mcfg, tcfg, tok);
  CHECK(params_equal(a.best_params, b.best_params));
  REQUIRE(a.history.points.size() == b.history.points.size());
  for (std::size_t i = 0; i < a.history.points.size(); ++i) {
    CHECK(a.history.points[i].loss == b.history.points[i].loss);
    CHECK(a.history.points[i].micro_f1 == b.history.points[i].micro_f1);
  }

  TrainConfig other = tcfg;
  other.seed = 22;
  TrainResult c = train(train_ds, eval_ds, tree, mcfg, other, tok);
  CHECK_FALSE(params_equal(a.best_params, c.best_params));
}

TEST_CASE("predict emits exactly the gold row counts per span group") {
  HierarchyTree tree = default_tree();
  Dataset ds = small_dataset(4, 7);
  Tokenizer tok = build_vocab(ds, 1, 8);
  TrainConfig tcfg = small_train();
  ModelConfig mcfg = small_model(tree);
  mcfg.vocab_size = tok.vocab_size();
  mcfg.window_size = static_cast<int>(tcfg.window_size);
  Parameters params = init_params(mcfg, 1);

  auto preds = predict(ds, tree, params, mcfg, tok, tcfg);
  CHECK(preds.size() == ds.rows.size());
  // Counts line up, so the scorer accepts the set directly.
  MetricsReport rep = evaluate(preds, ds.rows, tree);
  CHECK(rep.total == static_cast<long>(ds.rows.size()));

  SUBCASE("single-instance mode") {
    ModelConfig si = mcfg;
    si.mode = ModelConfig::Mode::SingleInstance;
    si.window_size = 128;
    auto si_preds = predict(ds, tree, init_params(si, 1), si, tok, tcfg);
    CHECK(si_preds.size() == ds.rows.size());
  }
}

TEST_CASE("single-instance training path works end to end") {
  HierarchyTree tree = default_tree();
  Dataset train_ds = small_dataset(4, 8);
  Dataset eval_ds = small_dataset(2, 9);
  Tokenizer tok = build_vocab(train_ds, 1, 8);
  ModelConfig mcfg = small_model(tree);
  mcfg.mode = ModelConfig::Mode::SingleInstance;
  TrainConfig tcfg = small_train();
  tcfg.epochs = 1;
  TrainResult tr = train(train_ds, eval_ds, tree, mcfg, tcfg, tok);
  CHECK(tr.best_params.all_finite());
  CHECK(!tr.history.points.empty());
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  namespace fs = std::filesystem;
  HierarchyTree tree = default_tree();
  ModelConfig cfg = small_model(tree);
  cfg.vocab_size = 30;
  cfg.window_size = 16;
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.vocab_hash = 0xabcdef12345678ull;
  ckpt.params = init_params(cfg, 13);

  fs::path path = fs::temp_directory_path() / "miml_test_ckpt.bin";
  save_checkpoint(ckpt, path.string());
  Checkpoint loaded = load_checkpoint(path.string());
  CHECK(loaded.vocab_hash == ckpt.vocab_hash);
  CHECK(loaded.config.dim == cfg.dim);
  CHECK(loaded.config.lambda_train == cfg.lambda_train);
  CHECK(loaded.config.edge_counts == cfg.edge_counts);
  auto at = ckpt.params.tensors();
  auto bt = loaded.params.tensors();
  REQUIRE(at.size() == bt.size());
  for (std::size_t i = 0; i < at.size(); ++i) {
    CHECK(at[i].name == bt[i].name);
    CHECK(*at[i].tensor == *bt[i].tensor);
  }

  SUBCASE("vocabulary hash is enforced") {
    CHECK_NOTHROW(load_checkpoint(path.string(), ckpt.vocab_hash));
    CHECK_THROWS_AS(load_checkpoint(path.string(), ckpt.vocab_hash + 1), DataError);
  }
  SUBCASE("corrupt and truncated files are rejected") {
    fs::path bad = fs::temp_directory_path() / "miml_test_ckpt_bad.bin";
    std::ofstream(bad, std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(bad.string()), DataError);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(bad.string()), DataError);
    fs::remove(bad);
  }
  fs::remove(path);
}

TEST_CASE("cross-validation covers every fold") {
  HierarchyTree tree = default_tree();
  Dataset ds = small_dataset(6, 10);
  TrainConfig tcfg = small_train();
  tcfg.epochs = 1;
  CvResult cv = run_cross_validation(ds, tree, small_model(tree), tcfg, 3);
  REQUIRE(cv.folds.size() == 3);
  std::vector<double> micros;
  for (const auto& f : cv.folds) {
    CHECK(f.report.total > 0);
    micros.push_back(f.report.micro_f1);
  }
  auto [m, s] = mean_std(micros);
  CHECK(cv.micro_mean == doctest::Approx(m));
  CHECK(cv.micro_std == doctest::Approx(s));
}

TEST_CASE("lambda sweep emits the evaluation policy per grid point") {
  HierarchyTree tree = default_tree();
  Dataset train_ds = small_dataset(4, 11);
  Dataset eval_ds = small_dataset(2, 12);
  TrainConfig tcfg = small_train();
  tcfg.epochs = 1;

  auto rows = lambda_sweep(train_ds, eval_ds, tree, small_model(tree), tcfg, {0.0, 0.5}, false);
  // lambda_train 0 evaluates at {0, 1}; lambda_train 0.5 at {0, 1, 0.5}.
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].lambda_train == 0.0);
  CHECK(rows[0].lambda_eval == 0.0);
  CHECK(rows[1].lambda_eval == 1.0);
  CHECK(rows[2].lambda_train == 0.5);
  CHECK(rows[4].lambda_eval == 0.5);

  auto diag = lambda_sweep(train_ds, eval_ds, tree, small_model(tree), tcfg, {0.25}, true);
  REQUIRE(diag.size() == 1);
  CHECK(diag[0].lambda_train == 0.25);
  CHECK(diag[0].lambda_eval == 0.25);
}

TEST_CASE("shuffled ablation reports all four conditions") {
  HierarchyTree tree = default_tree();
  Dataset train_ds = small_dataset(4, 13);
  Dataset eval_ds = small_dataset(2, 14);
  TrainConfig tcfg = small_train();
  tcfg.epochs = 1;

  AblationResult ab = shuffled_ablation(train_ds, eval_ds, tree, 3, small_model(tree), tcfg);
  long expect_total = static_cast<long>(eval_ds.rows.size());
  CHECK(ab.true_tree.total == expect_total);
  CHECK(ab.true_tree_aux_only.total == expect_total);
  CHECK(ab.shuffled_tree.total == expect_total);
  CHECK(ab.shuffled_tree_aux_only.total == expect_total);
}
