#include "miml/synthetic.hpp"

#include <charconv>
#include <sstream>

#include "miml/errors.hpp"
#include "miml/rng.hpp"
#include "miml/text.hpp"

namespace miml {

GeneratorSpec GeneratorSpec::parse(const std::string& text) {
  GeneratorSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("generator spec line " + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto as_int = [&]() {
      int v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw DataError("generator spec: non-integer value for " + key);
      }
      return v;
    };
    if (key == "articles") spec.articles = as_int();
    else if (key == "spans_per_article") spec.spans_per_article = as_int();
    else if (key == "span_tokens") spec.span_tokens = as_int();
    else if (key == "gap_tokens") spec.gap_tokens = as_int();
    else if (key == "filler_vocab") spec.filler_vocab = as_int();
    else if (key == "rule") {
      if (value == "trigger") spec.rule = Rule::Trigger;
      else if (value == "hier") spec.rule = Rule::Hier;
      else throw DataError("generator spec: unknown rule '" + value + "'");
    } else {
      throw DataError("generator spec: unknown key '" + key + "'");
    }
  }
  return spec;
}

std::string GeneratorSpec::to_text() const {
  std::ostringstream out;
  out << "articles=" << articles << "\n"
      << "spans_per_article=" << spans_per_article << "\n"
      << "span_tokens=" << span_tokens << "\n"
      << "gap_tokens=" << gap_tokens << "\n"
      << "filler_vocab=" << filler_vocab << "\n"
      << "rule=" << (rule == Rule::Trigger ? "trigger" : "hier") << "\n";
  return out.str();
}

Dataset generate_synthetic(const GeneratorSpec& spec, const HierarchyTree& tree,
                           std::uint64_t seed) {
  if (spec.articles < 1 || spec.spans_per_article < 0 || spec.span_tokens < 1 ||
      spec.gap_tokens < 0 || spec.filler_vocab < 1) {
    throw DataError("generator spec: counts out of range");
  }
  std::size_t max_path = 0;
  for (int leaf : tree.leaves()) {
    max_path = std::max(max_path, tree.path_to_leaf(leaf).steps.size());
  }
  if (spec.rule == GeneratorSpec::Rule::Hier &&
      static_cast<std::size_t>(spec.span_tokens) < max_path) {
    throw DataError("generator spec: span_tokens smaller than the deepest hierarchy path");
  }

  auto rng = make_rng(seed, "synthetic");
  std::uniform_int_distribution<int> filler(0, spec.filler_vocab - 1);
  std::uniform_int_distribution<int> leaf_pick(0, static_cast<int>(tree.leaves().size()) - 1);

  Dataset ds;
  ds.provenance = Provenance::Synthetic;
  for (int a = 1; a <= spec.articles; ++a) {
    std::string text;
    auto emit = [&text](const std::string& token) {
      if (!text.empty()) text += ' ';
      text += token;
    };
    auto emit_fillers = [&](int n) {
      for (int i = 0; i < n; ++i) emit("w" + std::to_string(filler(rng)));
    };
    for (int s = 0; s < spec.spans_per_article; ++s) {
      emit_fillers(spec.gap_tokens);
      int leaf = tree.leaves()[static_cast<std::size_t>(leaf_pick(rng))];
      int technique = tree.technique_for_leaf(leaf);
      if (technique < 0) throw DataError("generator requires technique-named leaves");

      std::vector<std::string> span_toks;
      if (spec.rule == GeneratorSpec::Rule::Trigger) {
        span_toks.push_back("sig" + std::to_string(technique));
      } else {
        for (auto [node, edge] : tree.path_to_leaf(leaf).steps) {
          span_toks.push_back("n" + std::to_string(tree.classifier_index(node)) + "e" +
                              std::to_string(edge));
        }
      }
      while (static_cast<int>(span_toks.size()) < spec.span_tokens) {
        span_toks.push_back("w" + std::to_string(filler(rng)));
      }

      std::size_t start = text.empty() ? 0 : utf8_length(text) + 1;
      for (const auto& t : span_toks) emit(t);
      std::size_t end = utf8_length(text);

      SpanAnnotation ann;
      ann.article_id = a;
      ann.start = start;
      ann.end = end;
      ann.labels = {technique};
      ds.annotations.push_back(ann);
      ds.rows.push_back(AnnotationRow{a, start, end, technique});
    }
    emit_fillers(spec.gap_tokens);
    if (text.empty()) text = "w0";
    ds.articles.push_back(Article{a, std::move(text)});
  }
  return ds;
}

}  // namespace miml
