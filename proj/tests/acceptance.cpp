// Acceptance checks: one pass/fail line per criterion, nonzero exit on any
// failure. Each check is self-contained and uses only the public library API.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "miml/checkpoint.hpp"
#include "miml/corpus.hpp"
#include "miml/evaluation.hpp"
#include "miml/hierarchy.hpp"
#include "miml/model.hpp"
#include "miml/rng.hpp"
#include "miml/synthetic.hpp"
#include "miml/training.hpp"
#include "miml/windowing.hpp"

using namespace miml;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void report(int number, const std::string& name, bool ok, double seconds,
            const std::string& detail = "") {
  std::printf("%s  %2d  %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", number, name.c_str(), seconds,
              detail.empty() ? "" : " -- ", detail.c_str());
  if (!ok) ++g_failures;
}

std::vector<int> default_edge_counts(const HierarchyTree& tree) {
  std::vector<int> out;
  for (int node : tree.internal_nodes()) out.push_back(tree.child_count(node));
  return out;
}

ModelConfig toy_config(const HierarchyTree& tree, int dim, int window, int vocab) {
  ModelConfig cfg;
  cfg.dim = dim;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.vocab_size = vocab;
  cfg.window_size = window;
  cfg.dropout = 0.0;
  cfg.edge_counts = default_edge_counts(tree);
  return cfg;
}

// ---- 1: every emitted distribution is normalized ----

void check_normalization(const HierarchyTree& tree) {
  Timer timer;
  ModelConfig cfg = toy_config(tree, 16, 16, 40);
  bool ok = true;
  for (int draw = 0; draw < 1000 && ok; ++draw) {
    Parameters params = init_params(cfg, static_cast<std::uint64_t>(draw));
    auto rng = make_rng(static_cast<std::uint64_t>(draw), "h");
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd h(cfg.dim);
    for (int i = 0; i < cfg.dim; ++i) h(i) = gauss(rng);

    Eigen::VectorXd p_flat = flat_distribution(h, params);
    ok = ok && std::abs(p_flat.sum() - 1.0) <= 1e-9;
    std::vector<Eigen::VectorXd> node_dists;
    for (std::size_t k = 0; k < params.aux_heads.size(); ++k) {
      node_dists.push_back(aux_node_distribution(h, params, static_cast<int>(k)));
      ok = ok && std::abs(node_dists.back().sum() - 1.0) <= 1e-9;
    }
    Eigen::VectorXd p_aux = aux_leaf_distribution(node_dists, tree);
    ok = ok && std::abs(p_aux.sum() - 1.0) <= 1e-9;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::VectorXd p_ovr = combined_distribution(p_flat, p_aux, unit(rng));
    ok = ok && std::abs(p_ovr.sum() - 1.0) <= 1e-9;
  }
  double secs = timer.seconds();
  report(1, "flat, per-node, path-product, and mixed distributions normalize", ok && secs < 5.0,
         secs);
}

// ---- 2: analytic gradients against central finite differences ----

std::vector<TrainingWindow> toy_batch() {
  std::vector<TrainingWindow> batch;
  TrainingWindow w;
  w.ids = {3, 2, 7, 8, 9, 4, 10, 5};
  w.spans.push_back(TrainingSpan{1, 2, {2}});
  w.spans.push_back(TrainingSpan{6, 9, {9}});
  batch.push_back(w);
  return batch;
}

bool gradients_match(const HierarchyTree& tree, double lambda_train, double* worst) {
  ModelConfig cfg = toy_config(tree, 8, 12, 16);
  cfg.lambda_train = lambda_train;
  Parameters params = init_params(cfg, 7);
  auto batch = toy_batch();

  Gradients analytic = params.zeros_like();
  miml_backward(batch, params, cfg, tree, 99, &analytic);

  const double h = 1e-4;
  auto a_views = analytic.tensors();
  auto p_views = params.tensors();
  bool ok = true;
  for (std::size_t t = 0; t < p_views.size(); ++t) {
    Eigen::MatrixXd& tensor = *p_views[t].tensor;
    Eigen::MatrixXd fd(tensor.rows(), tensor.cols());
    for (Eigen::Index i = 0; i < tensor.size(); ++i) {
      double saved = tensor(i);
      Gradients scratch = params.zeros_like();
      tensor(i) = saved + h;
      double lp = miml_backward(batch, params, cfg, tree, 99, &scratch);
      tensor(i) = saved - h;
      double lm = miml_backward(batch, params, cfg, tree, 99, &scratch);
      tensor(i) = saved;
      fd(i) = (lp - lm) / (2.0 * h);
    }
    const Eigen::MatrixXd& a = *a_views[t].tensor;
    double denom = a.norm() + fd.norm();
    double diff = (a - fd).norm();
    double rel = denom > 1e-8 ? diff / denom : 0.0;
    *worst = std::max(*worst, rel);
    if (denom > 1e-8 ? rel > 1e-4 : diff > 1e-8) ok = false;
  }
  return ok;
}

void check_gradients(const HierarchyTree& tree) {
  Timer timer;
  bool ok = true;
  double worst = 0.0;
  for (double lt : {0.0, 0.5, 1.0}) ok = gradients_match(tree, lt, &worst) && ok;
  double secs = timer.seconds();
  std::ostringstream detail;
  detail << "max tensor relative error " << worst;
  report(2, "backward pass matches central finite differences", ok && secs < 30.0, secs,
         detail.str());
}

// ---- 3: mixing-weight identities ----

void check_mixing_identities(const HierarchyTree& tree) {
  Timer timer;
  bool ok = true;
  auto rng = make_rng(4, "mixing");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd a(kNumTechniques), b(kNumTechniques);
    for (int i = 0; i < kNumTechniques; ++i) {
      a(i) = gauss(rng);
      b(i) = gauss(rng);
    }
    Eigen::VectorXd pf = softmax(a), pa = softmax(b);
    ok = ok && (combined_distribution(pf, pa, 0.0).array() == pf.array()).all();
    ok = ok && (combined_distribution(pf, pa, 1.0).array() == pa.array()).all();
  }

  ModelConfig cfg = toy_config(tree, 8, 12, 16);
  cfg.lambda_train = 0.0;
  Parameters params = init_params(cfg, 7);
  Gradients grads = params.zeros_like();
  miml_backward(toy_batch(), params, cfg, tree, 3, &grads);
  for (const auto& head : grads.aux_heads) {
    ok = ok && (head.array() == 0.0).all();
  }
  report(3, "mix-weight endpoints are exact; zero training mix zeroes auxiliary gradients", ok,
         timer.seconds());
}

// ---- 4: tree distance score against a root-path oracle ----

std::vector<int> root_path(const HierarchyTree& tree, int node) {
  std::vector<int> path;
  for (int n = node; n != -1; n = tree.node(n).parent) path.push_back(n);
  std::reverse(path.begin(), path.end());
  return path;
}

void check_tree_score(const HierarchyTree& tree) {
  Timer timer;
  bool ok = true;
  const auto& leaves = tree.leaves();
  for (int gold : leaves) {
    for (int pred : leaves) {
      auto pg = root_path(tree, gold), pp = root_path(tree, pred);
      std::size_t common = 0;
      while (common < pg.size() && common < pp.size() && pg[common] == pp[common]) ++common;
      double rg = static_cast<double>(common) / static_cast<double>(pg.size());
      double rp = static_cast<double>(common) / static_cast<double>(pp.size());
      double expected = 2.0 * rg * rp / (rg + rp);
      double actual = tree.tree_f1(gold, pred);
      if (std::abs(actual - expected) > 1e-12) ok = false;
      if (gold == pred && actual != 1.0) ok = false;
    }
  }
  // Depth-3 sibling leaves: two shared path nodes out of three on each side.
  int doubt = tree.leaf_for_technique(*technique_from_name("Doubt"));
  int whatabout = tree.leaf_for_technique(*technique_from_name("Whataboutism,Straw_Men,Red_Herring"));
  if (std::abs(tree.tree_f1(doubt, whatabout) - 2.0 / 3.0) > 1e-12) ok = false;
  report(4, "tree score equals the root-path-overlap oracle on all 196 leaf pairs", ok,
         timer.seconds());
}

// ---- 5: best-match scorer against exhaustive permutation matching ----

long oracle_correct(std::vector<int> preds, const std::vector<int>& golds) {
  std::sort(preds.begin(), preds.end());
  long best = 0;
  do {
    long correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == golds[i]) ++correct;
    }
    best = std::max(best, correct);
  } while (std::next_permutation(preds.begin(), preds.end()));
  return best;
}

void check_scorer(const HierarchyTree& tree) {
  Timer timer;
  bool ok = true;
  auto rng = make_rng(17, "scorer");
  std::uniform_int_distribution<int> group_count(1, 4);
  std::uniform_int_distribution<int> group_size(1, 3);
  std::uniform_int_distribution<int> label(0, kNumTechniques - 1);
  for (int trial = 0; trial < 1000 && ok; ++trial) {
    std::vector<AnnotationRow> golds;
    std::vector<PredictionRecord> preds;
    long expected = 0, total = 0;
    int groups = group_count(rng);
    for (int g = 0; g < groups; ++g) {
      int size = group_size(rng);
      std::vector<int> gl, pl;
      for (int i = 0; i < size; ++i) {
        gl.push_back(label(rng));
        pl.push_back(label(rng));
      }
      for (int i = 0; i < size; ++i) {
        std::size_t start = static_cast<std::size_t>(10 * g);
        golds.push_back(AnnotationRow{1, start, start + 5, gl[i]});
        preds.push_back(PredictionRecord{1, start, start + 5, pl[i]});
      }
      expected += oracle_correct(pl, gl);
      total += size;
    }
    MatchResult match = micro_f1(preds, golds);
    ok = match.correct == expected && match.total == total &&
         std::abs(match.micro_f1 - static_cast<double>(expected) / static_cast<double>(total)) <
             1e-12;
  }
  // Singleton groups: the score reduces to plain accuracy.
  for (int trial = 0; trial < 50 && ok; ++trial) {
    std::vector<AnnotationRow> golds;
    std::vector<PredictionRecord> preds;
    long correct = 0;
    int n = 1 + group_count(rng) * 3;
    for (int i = 0; i < n; ++i) {
      int g = label(rng), p = label(rng);
      std::size_t start = static_cast<std::size_t>(10 * i);
      golds.push_back(AnnotationRow{1, start, start + 4, g});
      preds.push_back(PredictionRecord{1, start, start + 4, p});
      if (g == p) ++correct;
    }
    MatchResult match = micro_f1(preds, golds);
    ok = match.correct == correct &&
         std::abs(match.micro_f1 - static_cast<double>(correct) / n) < 1e-12;
  }
  (void)tree;
  report(5, "best-match score equals exhaustive permutation matching on 1000 fixtures", ok,
         timer.seconds());
}

// ---- 6: windowing structure on random marked articles ----

void check_windowing(const HierarchyTree& tree) {
  (void)tree;
  Timer timer;
  bool ok = true;
  long nested_truncations = 0;
  auto rng = make_rng(23, "windows");
  std::uniform_int_distribution<int> len_dist(30, 90);
  std::uniform_int_distribution<int> span_count(1, 5);
  std::uniform_int_distribution<int> span_len(1, 6);
  std::uniform_int_distribution<int> label(0, kNumTechniques - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset corpus;
  corpus.provenance = Provenance::Synthetic;
  for (int a = 1; a <= 500; ++a) {
    int n = len_dist(rng);
    std::string text;
    std::vector<std::pair<std::size_t, std::size_t>> tok_spans;
    for (int i = 0; i < n; ++i) {
      std::string t = "t" + std::to_string(i % 37);
      std::size_t start = text.empty() ? 0 : text.size() + 1;
      if (!text.empty()) text += ' ';
      text += t;
      tok_spans.emplace_back(start, text.size());
    }
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::vector<SpanAnnotation> anns;
    int spans = span_count(rng);
    for (int s = 0; s < spans; ++s) {
      int first = std::uniform_int_distribution<int>(0, n - 1)(rng);
      int last = std::min(n - 1, first + span_len(rng) - 1);
      SpanAnnotation ann;
      ann.article_id = a;
      ann.start = tok_spans[static_cast<std::size_t>(first)].first;
      ann.end = tok_spans[static_cast<std::size_t>(last)].second;
      ann.labels = {label(rng)};
      if (used.insert({ann.start, ann.end}).second) anns.push_back(ann);
      // Half the time, nest a strictly inner span.
      if (last > first + 1 && unit(rng) < 0.5) {
        SpanAnnotation inner = ann;
        inner.start = tok_spans[static_cast<std::size_t>(first + 1)].first;
        inner.end = tok_spans[static_cast<std::size_t>(last)].second;
        inner.labels = {label(rng)};
        if (used.insert({inner.start, inner.end}).second) anns.push_back(inner);
      }
    }
    std::sort(anns.begin(), anns.end(), [](const SpanAnnotation& x, const SpanAnnotation& y) {
      return std::tie(x.start, x.end) < std::tie(y.start, y.end);
    });
    corpus.articles.push_back(Article{a, text});
    for (auto& ann : anns) corpus.annotations.push_back(std::move(ann));
  }

  Tokenizer tok = build_vocab(corpus, 1, 16);
  for (const auto& article : corpus.articles) {
    TokenizedArticle ta = tokenize(article.text, tok, article.id);
    std::vector<SpanAnnotation> spans;
    for (const auto& ann : corpus.annotations) {
      if (ann.article_id == article.id) spans.push_back(ann);
    }
    MarkedSequence ms = insert_markers(ta, spans, tok);
    WindowSet ws = make_windows(ms, tok, 24, 12);

    for (std::size_t s = 0; s < spans.size(); ++s) {
      auto it = ws.windows_for_span.find(static_cast<int>(s));
      if (it == ws.windows_for_span.end() || it->second.empty()) ok = false;
    }
    for (const auto& w : ws.windows) {
      if (w.ids.size() > 24) ok = false;
      long bops = 0, eops = 0;
      std::vector<int> stripped;
      for (int id : w.ids) {
        if (tok.is_bop(id)) ++bops;
        else if (tok.is_eop(id)) ++eops;
        else stripped.push_back(id);
      }
      if (bops != eops) ok = false;
      if (!stripped.empty() &&
          std::search(ta.ids.begin(), ta.ids.end(), stripped.begin(), stripped.end()) ==
              ta.ids.end()) {
        ok = false;  // marker removal must recover a contiguous token slice
      }
      for (const auto& siw : w.spans) {
        if (!(siw.bop_pos < siw.eop_pos)) ok = false;
      }
      // Truncated spans close inner before outer.
      for (const auto& x : w.spans) {
        for (const auto& y : w.spans) {
          if (!x.truncated || !y.truncated) continue;
          if (x.bop_pos > y.bop_pos) {
            ++nested_truncations;
            if (!(x.eop_pos < y.eop_pos)) ok = false;
          }
        }
      }
    }
  }
  if (nested_truncations == 0) ok = false;  // the nested-truncation case must be exercised
  report(6, "window invariants hold on 500 random nested/overlapping articles", ok,
         timer.seconds());
}

// ---- 7: end-to-end learnability on a separable corpus ----

GeneratorSpec trigger_spec(int articles) {
  GeneratorSpec spec;
  spec.articles = articles;
  spec.spans_per_article = 3;
  spec.span_tokens = 4;
  spec.gap_tokens = 4;
  spec.filler_vocab = 15;
  spec.rule = GeneratorSpec::Rule::Trigger;
  return spec;
}

ModelConfig learn_config(const HierarchyTree& tree) {
  ModelConfig cfg;
  cfg.dim = 24;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.lambda_train = 0.5;
  cfg.lambda_eval = 0.5;
  cfg.edge_counts = default_edge_counts(tree);
  return cfg;
}

TrainConfig learn_train_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 8;
  cfg.epochs = 20;
  cfg.eval_every = 20;
  cfg.seed = 11;
  cfg.window_size = 64;
  cfg.stride = 32;
  cfg.marker_budget = 8;
  return cfg;
}

void check_learnability(const HierarchyTree& tree) {
  Timer timer;
  Dataset train_ds = generate_synthetic(trigger_spec(40), tree, 101);
  Dataset eval_ds = generate_synthetic(trigger_spec(12), tree, 102);
  Tokenizer tok = build_vocab(train_ds, 1, 8);
  TrainResult tr = train(train_ds, eval_ds, tree, learn_config(tree), learn_train_config(), tok);
  double secs = timer.seconds();
  std::ostringstream detail;
  detail << "best micro-F1 " << tr.history.best_micro_f1 << " at step " << tr.history.best_step;
  report(7, "separable corpus reaches micro-F1 >= 0.95 within 20 epochs",
         tr.history.best_micro_f1 >= 0.95 && secs < 120.0, secs, detail.str());
}

// ---- 8: true hierarchy beats a shuffled one under aux-only inference ----

void check_hierarchy_signal(const HierarchyTree& tree) {
  Timer timer;
  GeneratorSpec spec = trigger_spec(40);
  spec.rule = GeneratorSpec::Rule::Hier;
  Dataset train_ds = generate_synthetic(spec, tree, 201);
  GeneratorSpec eval_spec = trigger_spec(12);
  eval_spec.rule = GeneratorSpec::Rule::Hier;
  Dataset eval_ds = generate_synthetic(eval_spec, tree, 202);

  ModelConfig model_cfg = learn_config(tree);
  TrainConfig train_cfg = learn_train_config();
  train_cfg.epochs = 10;
  AblationResult ab = shuffled_ablation(train_ds, eval_ds, tree, 1, model_cfg, train_cfg);
  double gap = ab.true_tree_aux_only.micro_f1 - ab.shuffled_tree_aux_only.micro_f1;
  double secs = timer.seconds();
  std::ostringstream detail;
  detail << "aux-only micro-F1 true " << ab.true_tree_aux_only.micro_f1 << " vs shuffled "
         << ab.shuffled_tree_aux_only.micro_f1;
  report(8, "true tree beats shuffled tree by >= 20 points under aux-only inference",
         gap >= 0.20 && secs < 300.0, secs, detail.str());
}

// ---- 9: joint windows need fewer encoder passes than one-per-span ----

void check_efficiency(const HierarchyTree& tree) {
  Timer timer;
  GeneratorSpec spec = trigger_spec(20);
  spec.spans_per_article = 4;
  spec.gap_tokens = 2;
  spec.span_tokens = 3;
  Dataset ds = generate_synthetic(spec, tree, 301);
  Tokenizer tok = build_vocab(ds, 1, 8);

  ModelConfig miml_cfg = learn_config(tree);
  ModelConfig si_cfg = miml_cfg;
  si_cfg.mode = ModelConfig::Mode::SingleInstance;
  TrainConfig train_cfg = learn_train_config();
  train_cfg.epochs = 1;
  train_cfg.eval_every = 10000;
  train_cfg.context = 16;

  TrainResult miml = train(ds, ds, tree, miml_cfg, train_cfg, tok);
  TrainResult si = train(ds, ds, tree, si_cfg, train_cfg, tok);
  long fm = miml.history.encoder_invocations_train;
  long fs = si.history.encoder_invocations_train;
  std::ostringstream detail;
  detail << fm << " joint vs " << fs << " one-per-span training forwards";
  report(9, "joint windows use < 0.5x the encoder passes of one-per-span mode",
         fs > 0 && fm * 2 < fs, timer.seconds(), detail.str());
}

// ---- 10: published frequency table against local official data ----

void check_official_frequencies() {
  Timer timer;
  std::string articles_dir = std::string(MIML_SOURCE_DIR) + "/data/official/articles";
  std::string labels = std::string(MIML_SOURCE_DIR) + "/data/official/labels.tsv";
  if (!fs::is_directory(articles_dir) || !fs::is_regular_file(labels)) {
    report(10, "published per-technique counts (skipped: no corpus at data/official/)", true,
           timer.seconds());
    return;
  }
  Dataset ds = load_dataset(articles_dir, labels);
  FrequencyTable have = compute_frequency_table(ds);
  FrequencyTable want = reference_frequency_table();
  bool ok = true;
  for (int t = 0; t < kNumTechniques; ++t) {
    if (have.counts[static_cast<std::size_t>(t)] != want.counts[static_cast<std::size_t>(t)]) {
      ok = false;
    }
  }
  report(10, "published per-technique counts reproduced from local corpus", ok, timer.seconds());
}

// ---- 11: determinism and checkpoint round-trip ----

std::string history_csv(const RunHistory& history) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : history.points) {
    out << p.step << "," << p.loss << "," << p.micro_f1 << ","
        << (p.tree_f1_all ? *p.tree_f1_all : -1.0) << "\n";
  }
  return out.str();
}

void check_determinism(const HierarchyTree& tree) {
  Timer timer;
  Dataset train_ds = generate_synthetic(trigger_spec(10), tree, 401);
  Dataset eval_ds = generate_synthetic(trigger_spec(4), tree, 402);
  Tokenizer tok = build_vocab(train_ds, 1, 8);
  ModelConfig model_cfg = learn_config(tree);
  TrainConfig train_cfg = learn_train_config();
  train_cfg.epochs = 2;
  train_cfg.eval_every = 3;

  TrainResult a = train(train_ds, eval_ds, tree, model_cfg, train_cfg, tok);
  TrainResult b = train(train_ds, eval_ds, tree, model_cfg, train_cfg, tok);
  bool ok = history_csv(a.history) == history_csv(b.history);
  auto av = a.best_params.tensors();
  auto bv = b.best_params.tensors();
  for (std::size_t t = 0; t < av.size(); ++t) {
    if (!(av[t].tensor->array() == bv[t].tensor->array()).all()) ok = false;
  }

  fs::path path = fs::temp_directory_path() / "miml_acceptance_roundtrip.ckpt";
  save_checkpoint(Checkpoint{a.config, tok.vocab_hash(), a.best_params}, path.string());
  Checkpoint loaded = load_checkpoint(path.string(), tok.vocab_hash());
  fs::remove(path);

  std::vector<TrainingWindow> windows =
      build_miml_windows(eval_ds, tok, compute_frequency_table(train_ds), train_cfg.window_size,
                         train_cfg.stride);
  ok = ok && !windows.empty();
  for (const auto& w : windows) {
    std::vector<int> bops;
    for (const auto& s : w.spans) bops.push_back(s.bop_pos);
    ForwardResult fa = forward_window(w.ids, bops, a.best_params, a.config, tree);
    ForwardResult fb = forward_window(w.ids, bops, loaded.params, loaded.config, tree);
    for (std::size_t s = 0; s < fa.spans.size(); ++s) {
      if (!(fa.spans[s].p_ovr.array() == fb.spans[s].p_ovr.array()).all()) ok = false;
    }
  }
  report(11, "repeat runs are byte-identical; checkpoints round-trip bit-exactly", ok,
         timer.seconds());
}

}  // namespace

int main() {
  HierarchyTree tree = HierarchyTree::load_default();
  check_normalization(tree);
  check_gradients(tree);
  check_mixing_identities(tree);
  check_tree_score(tree);
  check_scorer(tree);
  check_windowing(tree);
  check_learnability(tree);
  check_hierarchy_signal(tree);
  check_efficiency(tree);
  check_official_frequencies();
  check_determinism(tree);
  if (g_failures > 0) {
    std::printf("%d check(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all checks passed\n");
  return 0;
}
