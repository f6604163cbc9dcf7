// Command-line front end over the C library API.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "miml_c.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Failure carrying the process exit code (1 usage, 2 data, 3 numeric).
struct CommandError : std::runtime_error {
  int code;
  CommandError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
};

void check(miml_status status) {
  if (status != MIML_OK) throw CommandError(static_cast<int>(status), miml_last_error());
}

struct StringOut {
  char* value = nullptr;
  ~StringOut() { miml_string_free(value); }
  char** out() { return &value; }
  std::string str() const { return value ? std::string(value) : std::string(); }
};

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  explicit Handle(T* p) : ptr(p) {}
  ~Handle() { Free(ptr); }
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& other) noexcept : ptr(other.ptr) { other.ptr = nullptr; }
  Handle& operator=(Handle&& other) noexcept {
    if (this != &other) {
      Free(ptr);
      ptr = other.ptr;
      other.ptr = nullptr;
    }
    return *this;
  }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Hierarchy = Handle<miml_hierarchy, miml_hierarchy_free>;
using DatasetHandle = Handle<miml_dataset, miml_dataset_free>;
using VocabHandle = Handle<miml_vocab, miml_vocab_free>;
using ModelHandle = Handle<miml_model, miml_model_free>;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CommandError(2, "cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CommandError(2, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Every run records its full invocation and input fingerprints next to its
// outputs, so a run can be replayed from the manifest alone.
struct Manifest {
  json data;

  Manifest(const std::string& command, const std::vector<std::string>& argv) {
    data["command"] = command;
    data["argv"] = argv;
  }
  void add(const std::string& key, const json& value) { data[key] = value; }
  void add_hierarchy(const miml_hierarchy* tree) {
    StringOut text;
    check(miml_hierarchy_to_text(tree, text.out()));
    data["hierarchy_hash"] = fnv1a(text.str());
  }
  void add_vocab(const miml_vocab* vocab) {
    std::uint64_t hash = 0;
    check(miml_vocab_hash(vocab, &hash));
    data["vocab_hash"] = hash;
  }
  void write(const fs::path& path) const { write_file(path, data.dump(2) + "\n"); }
};

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
};

std::string format_num(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

// Self-contained SVG line chart. Every marker carries data-x/data-y attributes
// holding the exact table values, so the numbers can be read back from the
// file.
std::string render_plot(const std::vector<PlotPoint>& points, const std::string& x_label,
                        const std::string& y_label, const std::string& title) {
  if (points.empty()) throw CommandError(1, "cannot plot an empty table");
  const double width = 640.0, height = 480.0;
  const double ml = 70.0, mr = 20.0, mt = 40.0, mb = 50.0;
  double xmin = points[0].x, xmax = points[0].x, ymin = points[0].y, ymax = points[0].y;
  for (const auto& p : points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
  auto sy = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "  <text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << title << "</text>\n";
  svg << "  <line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
      << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  svg << "  <text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">" << x_label << "</text>\n";
  svg << "  <text x=\"18\" y=\"" << (mt + height - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << (mt + height - mb) / 2 << ")\">" << y_label << "</text>\n";
  // Axis extent labels.
  svg << "  <text x=\"" << ml << "\" y=\"" << height - mb + 18
      << "\" text-anchor=\"middle\" font-size=\"11\">" << format_num(xmin) << "</text>\n";
  svg << "  <text x=\"" << width - mr << "\" y=\"" << height - mb + 18
      << "\" text-anchor=\"middle\" font-size=\"11\">" << format_num(xmax) << "</text>\n";
  svg << "  <text x=\"" << ml - 6 << "\" y=\"" << height - mb
      << "\" text-anchor=\"end\" font-size=\"11\">" << format_num(ymin) << "</text>\n";
  svg << "  <text x=\"" << ml - 6 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-size=\"11\">" << format_num(ymax) << "</text>\n";

  svg << "  <polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& p : points) svg << sx(p.x) << "," << sy(p.y) << " ";
  svg << "\"/>\n";
  for (const auto& p : points) {
    svg << "  <circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"3\" fill=\"steelblue\""
        << " data-x=\"" << format_num(p.x) << "\" data-y=\"" << format_num(p.y) << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// Pulls (x_column, y_column) pairs out of a header-led CSV string; rows whose
// fields do not parse as numbers (e.g. mean/std footer rows) are skipped.
std::vector<PlotPoint> csv_points(const std::string& csv, const std::string& x_column,
                                  const std::string& y_column,
                                  const std::optional<std::pair<std::string, std::string>>&
                                      required_equal = std::nullopt) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) return {};
  std::vector<std::string> header;
  std::stringstream hs(line);
  std::string field;
  while (std::getline(hs, field, ',')) header.push_back(field);
  auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  };
  int xi = col(x_column), yi = col(y_column);
  int ra = -1, rb = -1;
  if (required_equal) {
    ra = col(required_equal->first);
    rb = col(required_equal->second);
  }
  std::vector<PlotPoint> points;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (xi < 0 || yi < 0 || static_cast<std::size_t>(std::max(xi, yi)) >= fields.size()) continue;
    try {
      double x = std::stod(fields[static_cast<std::size_t>(xi)]);
      double y = std::stod(fields[static_cast<std::size_t>(yi)]);
      if (required_equal) {
        if (ra < 0 || rb < 0) continue;
        if (fields[static_cast<std::size_t>(ra)] != fields[static_cast<std::size_t>(rb)]) continue;
      }
      points.push_back({x, y});
    } catch (const std::exception&) {
      continue;
    }
  }
  return points;
}

std::vector<double> parse_grid(const std::string& spec) {
  double start = 0.0, end = 0.0, step = 0.0;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> start >> c1 >> end >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0.0) {
    throw CommandError(1, "grid must be start:end:step with a positive step, got '" + spec + "'");
  }
  std::vector<double> grid;
  for (double v = start; v <= end + step * 1e-9; v += step) {
    grid.push_back(std::min(std::max(v, 0.0), 1.0));
  }
  if (grid.empty()) throw CommandError(1, "empty grid: '" + spec + "'");
  return grid;
}

struct CommonOptions {
  std::string hierarchy_path;
  miml_model_config model{};
  miml_train_config train{};
};

void add_hierarchy_flag(CLI::App* cmd, CommonOptions* opts) {
  cmd->add_option("--hierarchy", opts->hierarchy_path,
                  "Hierarchy config file (defaults to the built-in tree)");
}

void add_model_flags(CLI::App* cmd, CommonOptions* opts) {
  miml_model_config_defaults(&opts->model);
  cmd->add_option("--dim", opts->model.dim, "Encoder width");
  cmd->add_option("--layers", opts->model.layers, "Encoder layer count");
  cmd->add_option("--heads", opts->model.heads, "Attention heads");
  cmd->add_option("--ff-dim", opts->model.ff_dim, "Feed-forward width (0: 4x dim)");
  cmd->add_option("--dropout", opts->model.dropout, "Dropout rate");
  cmd->add_option("--lambda-train", opts->model.lambda_train, "Training loss mix weight");
  cmd->add_option("--lambda-eval", opts->model.lambda_eval, "Inference distribution mix weight");
  cmd->add_flag("--single-instance", opts->model.single_instance,
                "One encoder pass per span instead of joint windows");
  cmd->add_flag("--flat-only", opts->model.flat_only, "Disable the auxiliary hierarchy heads");
  cmd->add_flag("--strict", opts->model.strict, "Fail on zero gold probabilities");
}

void add_train_flags(CLI::App* cmd, CommonOptions* opts) {
  miml_train_config_defaults(&opts->train);
  cmd->add_option("--lr", opts->train.learning_rate, "Learning rate");
  cmd->add_option("--weight-decay", opts->train.weight_decay, "Decoupled weight decay");
  cmd->add_option("--batch-size", opts->train.batch_size, "Examples per optimizer step");
  cmd->add_option("--epochs", opts->train.epochs, "Training epochs");
  cmd->add_option("--eval-every", opts->train.eval_every, "Steps between evaluations");
  cmd->add_option("--seed", opts->train.seed, "Base seed; all randomness derives from it");
  cmd->add_option("--window", opts->train.window_size, "Window size in tokens");
  cmd->add_option("--stride", opts->train.stride, "Window stride in tokens");
  cmd->add_option("--context", opts->train.context, "Context tokens per single-instance side");
  cmd->add_option("--min-freq", opts->train.min_vocab_freq, "Minimum vocabulary frequency");
  cmd->add_option("--marker-budget", opts->train.marker_budget, "Reserved span marker pairs");
}

Hierarchy load_hierarchy(const CommonOptions& opts) {
  Hierarchy tree;
  if (opts.hierarchy_path.empty()) {
    check(miml_hierarchy_load_default(tree.out()));
  } else {
    check(miml_hierarchy_load_file(opts.hierarchy_path.c_str(), tree.out()));
  }
  return tree;
}

DatasetHandle load_dataset(const std::string& articles, const std::string& labels) {
  DatasetHandle ds;
  check(miml_dataset_load(articles.c_str(), labels.empty() ? nullptr : labels.c_str(), ds.out()));
  return ds;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> raw_args(argv, argv + argc);
  CLI::App app{"Hierarchy-aware multi-span propaganda-technique classifier"};
  app.require_subcommand(1);

  try {
    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic corpus");
    CommonOptions synth_opts;
    std::string synth_spec_file, synth_out_dir;
    std::uint64_t synth_seed = 0;
    synth->add_option("--spec", synth_spec_file, "Generator spec file (key=value lines)");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--out-dir", synth_out_dir, "Output directory")->required();
    add_hierarchy_flag(synth, &synth_opts);
    synth->callback([&] {
      Hierarchy tree = load_hierarchy(synth_opts);
      std::string spec = synth_spec_file.empty() ? "" : read_file(synth_spec_file);
      DatasetHandle ds;
      check(miml_dataset_synthesize(spec.c_str(), tree.get(), synth_seed, ds.out()));
      fs::path dir(synth_out_dir);
      check(miml_dataset_write(ds.get(), (dir / "articles").string().c_str(),
                               (dir / "labels.tsv").string().c_str()));
      int articles = 0;
      long rows = 0;
      check(miml_dataset_article_count(ds.get(), &articles));
      check(miml_dataset_row_count(ds.get(), &rows));
      Manifest manifest("synth", raw_args);
      manifest.add("seed", synth_seed);
      manifest.add("spec_hash", fnv1a(spec));
      manifest.add_hierarchy(tree.get());
      manifest.write(dir / "manifest.json");
      std::cout << "wrote " << articles << " articles, " << rows << " annotation rows to "
                << dir.string() << "\n";
    });

    // ---- build-vocab ----
    auto* bv = app.add_subcommand("build-vocab", "Build the corpus vocabulary");
    std::string bv_articles, bv_out;
    int bv_min_freq = 1, bv_budget = 64;
    bv->add_option("--articles", bv_articles, "Article directory")->required();
    bv->add_option("--min-freq", bv_min_freq, "Minimum token frequency");
    bv->add_option("--marker-budget", bv_budget, "Reserved span marker pairs");
    bv->add_option("--out", bv_out, "Vocabulary TSV path")->required();
    bv->callback([&] {
      DatasetHandle ds = load_dataset(bv_articles, "");
      VocabHandle vocab;
      check(miml_vocab_build(ds.get(), bv_min_freq, bv_budget, vocab.out()));
      check(miml_vocab_save(vocab.get(), bv_out.c_str()));
      int size = 0;
      check(miml_vocab_size(vocab.get(), &size));
      Manifest manifest("build-vocab", raw_args);
      manifest.add_vocab(vocab.get());
      manifest.add("vocab_size", size);
      manifest.write(bv_out + ".manifest.json");
      std::cout << "vocabulary of " << size << " ids written to " << bv_out << "\n";
    });

    // ---- preprocess ----
    auto* pp = app.add_subcommand("preprocess", "Report marker/window statistics per article");
    std::string pp_articles, pp_labels, pp_vocab, pp_out;
    int pp_window = 512, pp_stride = 256;
    pp->add_option("--articles", pp_articles, "Article directory")->required();
    pp->add_option("--labels", pp_labels, "Annotation TSV")->required();
    pp->add_option("--vocab", pp_vocab, "Vocabulary TSV")->required();
    pp->add_option("--window", pp_window, "Window size in tokens");
    pp->add_option("--stride", pp_stride, "Window stride in tokens");
    pp->add_option("--out", pp_out, "Statistics CSV path")->required();
    pp->callback([&] {
      DatasetHandle ds = load_dataset(pp_articles, pp_labels);
      VocabHandle vocab;
      check(miml_vocab_load(pp_vocab.c_str(), vocab.out()));
      StringOut csv;
      check(miml_preprocess_csv(ds.get(), vocab.get(), pp_window, pp_stride, csv.out()));
      write_file(pp_out, csv.str());
      Manifest manifest("preprocess", raw_args);
      manifest.add_vocab(vocab.get());
      manifest.write(pp_out + ".manifest.json");
      std::cout << "window statistics written to " << pp_out << "\n";
    });

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Train a model");
    CommonOptions tr_opts;
    std::string tr_articles, tr_labels, tr_eval_articles, tr_eval_labels, tr_vocab, tr_out_dir;
    tr->add_option("--articles", tr_articles, "Training article directory")->required();
    tr->add_option("--labels", tr_labels, "Training annotation TSV")->required();
    tr->add_option("--eval-articles", tr_eval_articles, "Held-out article directory");
    tr->add_option("--eval-labels", tr_eval_labels, "Held-out annotation TSV");
    tr->add_option("--vocab", tr_vocab, "Vocabulary TSV (default: built from training data)");
    tr->add_option("--out-dir", tr_out_dir, "Run directory")->required();
    add_hierarchy_flag(tr, &tr_opts);
    add_model_flags(tr, &tr_opts);
    add_train_flags(tr, &tr_opts);
    tr->callback([&] {
      if (tr_eval_articles.empty() != tr_eval_labels.empty()) {
        throw CommandError(1, "--eval-articles and --eval-labels must be given together");
      }
      Hierarchy tree = load_hierarchy(tr_opts);
      DatasetHandle train_ds = load_dataset(tr_articles, tr_labels);
      DatasetHandle eval_ds;
      if (!tr_eval_articles.empty()) eval_ds = load_dataset(tr_eval_articles, tr_eval_labels);

      fs::path dir(tr_out_dir);
      fs::create_directories(dir);
      VocabHandle vocab;
      if (tr_vocab.empty()) {
        check(miml_vocab_build(train_ds.get(), tr_opts.train.min_vocab_freq,
                               tr_opts.train.marker_budget, vocab.out()));
      } else {
        check(miml_vocab_load(tr_vocab.c_str(), vocab.out()));
      }
      check(miml_vocab_save(vocab.get(), (dir / "vocab.tsv").string().c_str()));

      ModelHandle model;
      StringOut history;
      check(miml_train(train_ds.get(), eval_ds.get(), tree.get(), &tr_opts.model, &tr_opts.train,
                       vocab.get(), model.out(), history.out()));
      check(miml_model_save(model.get(), (dir / "model.ckpt").string().c_str()));
      write_file(dir / "history.csv", history.str());
      auto points = csv_points(history.str(), "step", "micro_f1");
      if (!points.empty()) {
        write_file(dir / "history.svg",
                   render_plot(points, "step", "micro-F1", "evaluation history"));
      }

      Manifest manifest("train", raw_args);
      manifest.add("seed", tr_opts.train.seed);
      manifest.add_hierarchy(tree.get());
      manifest.add_vocab(vocab.get());
      manifest.write(dir / "manifest.json");
      std::cout << "model, vocabulary, and history written to " << dir.string() << "\n";
      if (!points.empty()) {
        std::cout << "final eval micro-F1: " << points.back().y << "\n";
      }
    });

    // ---- predict ----
    auto* pr = app.add_subcommand("predict", "Write predictions for annotated spans");
    CommonOptions pr_opts;
    std::string pr_articles, pr_labels, pr_model, pr_vocab, pr_out;
    double pr_lambda_eval = -1.0;
    pr->add_option("--articles", pr_articles, "Article directory")->required();
    pr->add_option("--labels", pr_labels, "Span TSV naming the groups to classify")->required();
    pr->add_option("--model", pr_model, "Model checkpoint")->required();
    pr->add_option("--vocab", pr_vocab, "Vocabulary TSV")->required();
    pr->add_option("--lambda-eval", pr_lambda_eval, "Override the stored inference mix weight");
    pr->add_option("--out", pr_out, "Prediction TSV path")->required();
    add_hierarchy_flag(pr, &pr_opts);
    add_train_flags(pr, &pr_opts);
    pr->callback([&] {
      Hierarchy tree = load_hierarchy(pr_opts);
      DatasetHandle ds = load_dataset(pr_articles, pr_labels);
      VocabHandle vocab;
      check(miml_vocab_load(pr_vocab.c_str(), vocab.out()));
      ModelHandle model;
      check(miml_model_load(pr_model.c_str(), vocab.get(), model.out()));
      if (pr_lambda_eval >= 0.0) {
        check(miml_model_set_lambda_eval(model.get(), pr_lambda_eval));
      }
      check(miml_predict_to_file(model.get(), ds.get(), tree.get(), vocab.get(), &pr_opts.train,
                                 pr_out.c_str()));
      Manifest manifest("predict", raw_args);
      manifest.add_hierarchy(tree.get());
      manifest.add_vocab(vocab.get());
      manifest.write(pr_out + ".manifest.json");
      std::cout << "predictions written to " << pr_out << "\n";
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Score a prediction file against gold annotations");
    CommonOptions ev_opts;
    std::string ev_gold, ev_pred, ev_articles, ev_out;
    ev->add_option("--gold", ev_gold, "Gold annotation TSV")->required();
    ev->add_option("--pred", ev_pred, "Prediction TSV")->required();
    ev->add_option("--articles", ev_articles, "Article directory for offset validation");
    ev->add_option("--out", ev_out, "Metrics CSV path");
    add_hierarchy_flag(ev, &ev_opts);
    ev->callback([&] {
      Hierarchy tree = load_hierarchy(ev_opts);
      StringOut report, csv;
      check(miml_evaluate_files(ev_gold.c_str(), ev_pred.c_str(),
                                ev_articles.empty() ? nullptr : ev_articles.c_str(), tree.get(),
                                report.out(), csv.out()));
      std::cout << report.str();
      if (!ev_out.empty()) {
        write_file(ev_out, csv.str());
        Manifest manifest("eval", raw_args);
        manifest.add_hierarchy(tree.get());
        manifest.write(ev_out + ".manifest.json");
      }
    });

    // ---- cv ----
    auto* cv = app.add_subcommand("cv", "K-fold cross-validation");
    CommonOptions cv_opts;
    std::string cv_articles, cv_labels, cv_out_dir;
    int cv_folds = 6;
    cv->add_option("--articles", cv_articles, "Article directory")->required();
    cv->add_option("--labels", cv_labels, "Annotation TSV")->required();
    cv->add_option("--folds", cv_folds, "Fold count");
    cv->add_option("--out-dir", cv_out_dir, "Run directory")->required();
    add_hierarchy_flag(cv, &cv_opts);
    add_model_flags(cv, &cv_opts);
    add_train_flags(cv, &cv_opts);
    cv->callback([&] {
      Hierarchy tree = load_hierarchy(cv_opts);
      DatasetHandle ds = load_dataset(cv_articles, cv_labels);
      StringOut csv;
      check(miml_cross_validate(ds.get(), tree.get(), &cv_opts.model, &cv_opts.train, cv_folds,
                                csv.out()));
      fs::path dir(cv_out_dir);
      write_file(dir / "cv.csv", csv.str());
      Manifest manifest("cv", raw_args);
      manifest.add("seed", cv_opts.train.seed);
      manifest.add("folds", cv_folds);
      manifest.add_hierarchy(tree.get());
      manifest.write(dir / "manifest.json");
      std::cout << csv.str();
    });

    // ---- sweep ----
    auto* sw = app.add_subcommand("sweep", "Lambda grid sweep");
    CommonOptions sw_opts;
    std::string sw_articles, sw_labels, sw_eval_articles, sw_eval_labels, sw_out_dir;
    std::string sw_grid, sw_diagonal;
    sw->add_option("--articles", sw_articles, "Training article directory")->required();
    sw->add_option("--labels", sw_labels, "Training annotation TSV")->required();
    sw->add_option("--eval-articles", sw_eval_articles, "Held-out article directory")->required();
    sw->add_option("--eval-labels", sw_eval_labels, "Held-out annotation TSV")->required();
    auto* grid_opt = sw->add_option("--grid", sw_grid,
                                    "start:end:step training-mix grid; evaluates at 0, 1, and "
                                    "the training value");
    auto* diag_opt =
        sw->add_option("--diagonal", sw_diagonal,
                       "start:end:step grid evaluated with matching training/inference mix");
    grid_opt->excludes(diag_opt);
    sw->add_option("--out-dir", sw_out_dir, "Run directory")->required();
    add_hierarchy_flag(sw, &sw_opts);
    add_model_flags(sw, &sw_opts);
    add_train_flags(sw, &sw_opts);
    sw->callback([&] {
      if (sw_grid.empty() && sw_diagonal.empty()) {
        throw CommandError(1, "sweep requires --grid or --diagonal");
      }
      bool diagonal = !sw_diagonal.empty();
      std::vector<double> grid = parse_grid(diagonal ? sw_diagonal : sw_grid);
      Hierarchy tree = load_hierarchy(sw_opts);
      DatasetHandle train_ds = load_dataset(sw_articles, sw_labels);
      DatasetHandle eval_ds = load_dataset(sw_eval_articles, sw_eval_labels);
      StringOut csv;
      check(miml_lambda_sweep(train_ds.get(), eval_ds.get(), tree.get(), &sw_opts.model,
                              &sw_opts.train, grid.data(), static_cast<int>(grid.size()),
                              diagonal ? 1 : 0, csv.out()));
      fs::path dir(sw_out_dir);
      write_file(dir / "sweep.csv", csv.str());
      // Figure: micro-F1 against the mix weight on the matched diagonal.
      auto points = csv_points(csv.str(), "lambda_train", "micro_f1",
                               std::pair<std::string, std::string>{"lambda_train", "lambda_eval"});
      if (!points.empty()) {
        write_file(dir / "sweep.svg",
                   render_plot(points, "lambda", "micro-F1", "micro-F1 vs lambda"));
      }
      Manifest manifest("sweep", raw_args);
      manifest.add("seed", sw_opts.train.seed);
      manifest.add("grid", grid);
      manifest.add("diagonal", diagonal);
      manifest.add_hierarchy(tree.get());
      manifest.write(dir / "manifest.json");
      std::cout << csv.str();
    });

    // ---- ablate-shuffle ----
    auto* ab = app.add_subcommand("ablate-shuffle",
                                  "Compare the true hierarchy against a shuffled one");
    CommonOptions ab_opts;
    std::string ab_articles, ab_labels, ab_eval_articles, ab_eval_labels, ab_out_dir;
    std::uint64_t ab_shuffle_seed = 1;
    ab->add_option("--articles", ab_articles, "Training article directory")->required();
    ab->add_option("--labels", ab_labels, "Training annotation TSV")->required();
    ab->add_option("--eval-articles", ab_eval_articles, "Held-out article directory")->required();
    ab->add_option("--eval-labels", ab_eval_labels, "Held-out annotation TSV")->required();
    ab->add_option("--shuffle-seed", ab_shuffle_seed, "Leaf permutation seed");
    ab->add_option("--out-dir", ab_out_dir, "Run directory")->required();
    add_hierarchy_flag(ab, &ab_opts);
    add_model_flags(ab, &ab_opts);
    add_train_flags(ab, &ab_opts);
    ab->callback([&] {
      Hierarchy tree = load_hierarchy(ab_opts);
      DatasetHandle train_ds = load_dataset(ab_articles, ab_labels);
      DatasetHandle eval_ds = load_dataset(ab_eval_articles, ab_eval_labels);
      StringOut csv;
      check(miml_ablate_shuffle(train_ds.get(), eval_ds.get(), tree.get(), ab_shuffle_seed,
                                &ab_opts.model, &ab_opts.train, csv.out()));
      fs::path dir(ab_out_dir);
      write_file(dir / "ablation.csv", csv.str());
      Manifest manifest("ablate-shuffle", raw_args);
      manifest.add("seed", ab_opts.train.seed);
      manifest.add("shuffle_seed", ab_shuffle_seed);
      manifest.add_hierarchy(tree.get());
      manifest.write(dir / "manifest.json");
      std::cout << csv.str();
    });

    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  } catch (const CommandError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
