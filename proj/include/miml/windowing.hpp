#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "miml/corpus.hpp"

namespace miml {

// Deterministic whitespace + punctuation tokenizer with a corpus vocabulary.
// Reserved id layout: 0 <pad>, 1 <unk>, then alternating <bopN>/<eopN> pairs
// up to the marker budget, then corpus tokens.
class Tokenizer {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  Tokenizer() = default;
  Tokenizer(std::vector<std::string> corpus_tokens, int marker_budget);

  int marker_budget() const { return marker_budget_; }
  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  int bop_id(int n) const { return 2 + 2 * n; }
  int eop_id(int n) const { return 2 + 2 * n + 1; }
  bool is_bop(int id) const { return id >= 2 && id < first_corpus_id() && (id - 2) % 2 == 0; }
  bool is_eop(int id) const { return id >= 2 && id < first_corpus_id() && (id - 2) % 2 == 1; }
  int first_corpus_id() const { return 2 + 2 * marker_budget_; }

  int lookup(const std::string& token) const;  // <unk> when absent
  const std::string& token_string(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

  std::uint64_t vocab_hash() const;

  void save(const std::string& path) const;  // token \t id TSV
  static Tokenizer load(const std::string& path);

 private:
  int marker_budget_ = 64;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Raw token split: lowercased tokens with code-point [start, end) spans.
// Punctuation characters become standalone tokens.
struct RawToken {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;
};
std::vector<RawToken> split_tokens(const std::string& text);

struct TokenizedArticle {
  int article_id = 0;
  std::vector<int> ids;
  std::vector<std::pair<std::size_t, std::size_t>> char_spans;
};

Tokenizer build_vocab(const Dataset& corpus, int min_frequency, int marker_budget = 64);
TokenizedArticle tokenize(const std::string& text, const Tokenizer& tok, int article_id = 0);

// A marked article: original token ids with <bopN>/<eopN> pairs inserted.
struct MarkedSequence {
  int article_id = 0;
  std::vector<int> ids;
  // For every position: the underlying token index, or -1 for markers.
  std::vector<int> underlying;
  struct SpanMarkers {
    int marker_index = 0;  // N in <bopN>/<eopN>
    std::size_t bop_pos = 0;
    std::size_t eop_pos = 0;
    std::size_t first_token = 0;  // underlying token range covered by the span
    std::size_t last_token = 0;
  };
  std::vector<SpanMarkers> spans;  // indexed by span id (input order)
};

// Span ids are indices into `spans`, which must all belong to this article.
MarkedSequence insert_markers(const TokenizedArticle& ta,
                              const std::vector<SpanAnnotation>& spans,
                              const Tokenizer& tok);

struct SpanInWindow {
  int span_id = 0;
  int bop_pos = 0;
  int eop_pos = 0;
  int tokens_included = 0;  // of the span's underlying tokens
  int left_context = 0;     // window positions before bop
  int right_context = 0;    // window positions after eop
  bool truncated = false;
};

struct Window {
  int article_id = 0;
  int ordinal = 0;
  std::size_t start_offset = 0;  // offset into the marked sequence
  std::vector<int> ids;
  std::vector<SpanInWindow> spans;
};

struct WindowSet {
  std::vector<Window> windows;
  std::map<int, std::vector<int>> windows_for_span;  // span id -> window ordinals
};

WindowSet make_windows(const MarkedSequence& ms, const Tokenizer& tok,
                       std::size_t window_size, std::size_t stride);

// Ordinal of the window where the span is least truncated with the most
// balanced context: max tokens_included, then max min(left, right), then
// smallest ordinal.
int primary_window_for_span(const WindowSet& ws, int span_id);

// Single-instance example: context tokens, <bop0>, span, <eop0>, context tokens.
struct SingleInstanceExample {
  std::vector<int> ids;
  int bop_pos = 0;
};
SingleInstanceExample single_instance_example(const TokenizedArticle& ta,
                                              const SpanAnnotation& span,
                                              const Tokenizer& tok, std::size_t context);

}  // namespace miml
