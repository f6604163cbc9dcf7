#pragma once

#include <cstdint>
#include <string>

#include "miml/corpus.hpp"
#include "miml/hierarchy.hpp"

namespace miml {

// Desk-scale corpus generator. Gold labels are recoverable from the text by
// construction: each span carries trigger tokens that determine its leaf
// (trigger rule) or one trigger per internal node along its path (hier rule).
struct GeneratorSpec {
  int articles = 10;
  int spans_per_article = 4;
  int span_tokens = 4;   // tokens per span, triggers included
  int gap_tokens = 6;    // filler tokens between spans
  int filler_vocab = 50;
  enum class Rule { Trigger, Hier } rule = Rule::Trigger;

  // key=value lines: articles, spans_per_article, span_tokens, gap_tokens,
  // filler_vocab, rule (trigger|hier).
  static GeneratorSpec parse(const std::string& text);
  std::string to_text() const;
};

Dataset generate_synthetic(const GeneratorSpec& spec, const HierarchyTree& tree,
                           std::uint64_t seed);

}  // namespace miml
