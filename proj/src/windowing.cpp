#include "miml/windowing.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>

#include "miml/errors.hpp"
#include "miml/text.hpp"

namespace miml {

Tokenizer::Tokenizer(std::vector<std::string> corpus_tokens, int marker_budget)
    : marker_budget_(marker_budget) {
  if (marker_budget < 1) throw UsageError("marker budget must be >= 1");
  id_to_token_.push_back("<pad>");
  id_to_token_.push_back("<unk>");
  for (int n = 0; n < marker_budget; ++n) {
    id_to_token_.push_back("<bop" + std::to_string(n) + ">");
    id_to_token_.push_back("<eop" + std::to_string(n) + ">");
  }
  for (auto& t : corpus_tokens) {
    int id = static_cast<int>(id_to_token_.size());
    auto [it, inserted] = token_to_id_.emplace(t, id);
    if (!inserted) throw DataError("duplicate vocabulary token: " + t);
    id_to_token_.push_back(std::move(t));
  }
}

int Tokenizer::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

std::uint64_t Tokenizer::vocab_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const auto& t : id_to_token_) {
    for (char c : t) mix(static_cast<unsigned char>(c));
    mix(0);
  }
  return h;
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file: " + path);
  out << "<marker_budget>\t" << marker_budget_ << "\n";
  for (int id = first_corpus_id(); id < vocab_size(); ++id) {
    out << id_to_token_[static_cast<std::size_t>(id)] << "\t" << id << "\n";
  }
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary file: " + path);
  std::string line;
  int budget = -1;
  std::vector<std::pair<int, std::string>> entries;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("vocabulary line " + std::to_string(lineno) + ": missing tab");
    }
    std::string token = line.substr(0, tab);
    std::string id_str = line.substr(tab + 1);
    int id = 0;
    auto [p, ec] = std::from_chars(id_str.data(), id_str.data() + id_str.size(), id);
    if (ec != std::errc() || p != id_str.data() + id_str.size()) {
      throw DataError("vocabulary line " + std::to_string(lineno) + ": bad id '" + id_str + "'");
    }
    if (token == "<marker_budget>") {
      budget = id;
    } else {
      entries.emplace_back(id, std::move(token));
    }
  }
  if (budget < 1) throw DataError("vocabulary file missing <marker_budget> entry");
  std::sort(entries.begin(), entries.end());
  std::vector<std::string> tokens;
  int expect = 2 + 2 * budget;
  for (auto& [id, token] : entries) {
    if (id != expect++) throw DataError("vocabulary file has non-contiguous ids");
    tokens.push_back(std::move(token));
  }
  return Tokenizer(std::move(tokens), budget);
}

std::vector<RawToken> split_tokens(const std::string& text) {
  std::vector<RawToken> out;
  RawToken cur;
  bool open = false;
  auto flush = [&](std::size_t end_cp) {
    if (open) {
      cur.end = end_cp;
      out.push_back(cur);
      cur = RawToken{};
      open = false;
    }
  };
  std::size_t byte = 0;
  std::size_t cp_index = 0;
  while (byte < text.size()) {
    std::size_t start_byte = byte;
    char32_t cp = utf8_next(text, byte);
    bool ascii = cp < 0x80;
    if (ascii && std::isspace(static_cast<int>(cp))) {
      flush(cp_index);
    } else if (ascii && std::ispunct(static_cast<int>(cp))) {
      flush(cp_index);
      out.push_back(RawToken{std::string(1, static_cast<char>(cp)), cp_index, cp_index + 1});
    } else {
      if (!open) {
        cur.start = cp_index;
        open = true;
      }
      if (ascii) {
        cur.text += static_cast<char>(std::tolower(static_cast<int>(cp)));
      } else {
        cur.text.append(text, start_byte, byte - start_byte);
      }
    }
    ++cp_index;
  }
  flush(cp_index);
  return out;
}

Tokenizer build_vocab(const Dataset& corpus, int min_frequency, int marker_budget) {
  if (corpus.articles.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, long> counts;
  for (const auto& a : corpus.articles) {
    for (auto& t : split_tokens(a.text)) ++counts[t.text];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [token, count] : counts) {
    if (count >= min_frequency) kept.emplace_back(token, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [token, count] : kept) tokens.push_back(token);
  return Tokenizer(std::move(tokens), marker_budget);
}

TokenizedArticle tokenize(const std::string& text, const Tokenizer& tok, int article_id) {
  TokenizedArticle ta;
  ta.article_id = article_id;
  for (auto& t : split_tokens(text)) {
    ta.ids.push_back(tok.lookup(t.text));
    ta.char_spans.emplace_back(t.start, t.end);
  }
  return ta;
}

MarkedSequence insert_markers(const TokenizedArticle& ta,
                              const std::vector<SpanAnnotation>& spans,
                              const Tokenizer& tok) {
  if (static_cast<int>(spans.size()) > tok.marker_budget()) {
    throw DataError("marker budget exceeded: " + std::to_string(spans.size()) + " spans > " +
                    std::to_string(tok.marker_budget()));
  }
  MarkedSequence ms;
  ms.article_id = ta.article_id;
  ms.spans.resize(spans.size());

  // Token range per span.
  for (std::size_t s = 0; s < spans.size(); ++s) {
    std::size_t first = ta.ids.size(), last = 0;
    bool any = false;
    for (std::size_t t = 0; t < ta.ids.size(); ++t) {
      auto [ts, te] = ta.char_spans[t];
      if (ts < spans[s].end && spans[s].start < te) {
        if (!any) first = t;
        last = t;
        any = true;
      }
    }
    if (!any) {
      throw DataError("span [" + std::to_string(spans[s].start) + ", " +
                      std::to_string(spans[s].end) + ") overlaps no token");
    }
    ms.spans[s].first_token = first;
    ms.spans[s].last_token = last;
  }

  // Marker indices: outer spans (earlier start, later end) get smaller N.
  std::vector<std::size_t> order(spans.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (spans[a].start != spans[b].start) return spans[a].start < spans[b].start;
    if (spans[a].end != spans[b].end) return spans[a].end > spans[b].end;
    return a < b;
  });
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    ms.spans[order[rank]].marker_index = static_cast<int>(rank);
  }

  // Marker insertions at token gaps. At a shared gap: eops close before bops
  // open; outer bops first (N ascending); inner eops first (N descending).
  struct Event {
    std::size_t gap;
    bool is_bop;
    int n;
    std::size_t span_id;
  };
  std::vector<Event> events;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    events.push_back({ms.spans[s].first_token, true, ms.spans[s].marker_index, s});
    events.push_back({ms.spans[s].last_token + 1, false, ms.spans[s].marker_index, s});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.gap != b.gap) return a.gap < b.gap;
    if (a.is_bop != b.is_bop) return !a.is_bop;  // eops first
    return a.is_bop ? a.n < b.n : a.n > b.n;
  });

  std::size_t next_event = 0;
  for (std::size_t t = 0; t <= ta.ids.size(); ++t) {
    while (next_event < events.size() && events[next_event].gap == t) {
      const Event& e = events[next_event++];
      std::size_t pos = ms.ids.size();
      ms.ids.push_back(e.is_bop ? tok.bop_id(e.n) : tok.eop_id(e.n));
      ms.underlying.push_back(-1);
      if (e.is_bop) {
        ms.spans[e.span_id].bop_pos = pos;
      } else {
        ms.spans[e.span_id].eop_pos = pos;
      }
    }
    if (t < ta.ids.size()) {
      ms.ids.push_back(ta.ids[t]);
      ms.underlying.push_back(static_cast<int>(t));
    }
  }
  return ms;
}

namespace {

// Largest content length C with C + #truncated(C) <= window_size, where
// truncated spans are those whose bop is inside [offset, offset+C) but whose
// eop falls at or beyond offset+C.
std::size_t choose_content_length(const MarkedSequence& ms, std::size_t offset,
                                  std::size_t window_size) {
  std::size_t avail = ms.ids.size() - offset;
  for (std::size_t c = std::min(window_size, avail); c > 0; --c) {
    std::size_t truncated = 0;
    for (const auto& sp : ms.spans) {
      if (sp.bop_pos >= offset && sp.bop_pos < offset + c && sp.eop_pos >= offset + c) {
        ++truncated;
      }
    }
    if (c + truncated <= window_size) return c;
  }
  throw DataError("window size too small for the eops that must be appended");
}

}  // namespace

WindowSet make_windows(const MarkedSequence& ms, const Tokenizer& tok,
                       std::size_t window_size, std::size_t stride) {
  if (!(window_size > stride && stride > 0)) {
    throw UsageError("make_windows requires window_size > stride > 0");
  }
  WindowSet ws;
  std::size_t len = ms.ids.size();
  if (len == 0) return ws;

  std::size_t last_bop = 0;
  for (const auto& sp : ms.spans) last_bop = std::max(last_bop, sp.bop_pos);

  for (std::size_t offset = 0; offset == 0 || (offset <= last_bop && offset < len);
       offset += stride) {
    std::size_t content = choose_content_length(ms, offset, window_size);

    Window w;
    w.article_id = ms.article_id;
    w.ordinal = static_cast<int>(ws.windows.size());
    w.start_offset = offset;

    // Copy the slice, dropping eops whose bop precedes the window.
    std::map<std::size_t, int> pos_map;  // marked-sequence pos -> window pos
    for (std::size_t p = offset; p < offset + content; ++p) {
      if (ms.underlying[p] == -1 && tok.is_eop(ms.ids[p])) {
        auto sp = std::find_if(ms.spans.begin(), ms.spans.end(),
                               [p](const auto& s) { return s.eop_pos == p; });
        if (sp != ms.spans.end() && sp->bop_pos < offset) continue;  // orphan eop
      }
      pos_map[p] = static_cast<int>(w.ids.size());
      w.ids.push_back(ms.ids[p]);
    }

    // Append eops for spans sliced at the right boundary, inner before outer.
    std::vector<const MarkedSequence::SpanMarkers*> truncated;
    for (const auto& sp : ms.spans) {
      if (sp.bop_pos >= offset && sp.bop_pos < offset + content && sp.eop_pos >= offset + content) {
        truncated.push_back(&sp);
      }
    }
    std::sort(truncated.begin(), truncated.end(), [](const auto* a, const auto* b) {
      if (a->bop_pos != b->bop_pos) return a->bop_pos > b->bop_pos;
      return a->marker_index > b->marker_index;
    });
    std::map<int, int> appended_eop_pos;  // span id -> window pos
    for (const auto* sp : truncated) {
      int span_id = static_cast<int>(sp - ms.spans.data());
      appended_eop_pos[span_id] = static_cast<int>(w.ids.size());
      w.ids.push_back(tok.eop_id(sp->marker_index));
    }

    for (std::size_t s = 0; s < ms.spans.size(); ++s) {
      const auto& sp = ms.spans[s];
      if (sp.bop_pos < offset || sp.bop_pos >= offset + content) continue;
      SpanInWindow siw;
      siw.span_id = static_cast<int>(s);
      siw.bop_pos = pos_map.at(sp.bop_pos);
      auto app = appended_eop_pos.find(static_cast<int>(s));
      if (app != appended_eop_pos.end()) {
        siw.eop_pos = app->second;
        siw.truncated = true;
      } else {
        siw.eop_pos = pos_map.at(sp.eop_pos);
      }
      for (std::size_t p = offset; p < offset + content; ++p) {
        int u = ms.underlying[p];
        if (u >= 0 && static_cast<std::size_t>(u) >= sp.first_token &&
            static_cast<std::size_t>(u) <= sp.last_token) {
          ++siw.tokens_included;
        }
      }
      std::size_t span_tokens = sp.last_token - sp.first_token + 1;
      if (static_cast<std::size_t>(siw.tokens_included) < span_tokens) siw.truncated = true;
      siw.left_context = siw.bop_pos;
      siw.right_context = static_cast<int>(w.ids.size()) - 1 - siw.eop_pos;
      w.spans.push_back(siw);
      ws.windows_for_span[static_cast<int>(s)].push_back(w.ordinal);
    }
    ws.windows.push_back(std::move(w));
  }
  return ws;
}

int primary_window_for_span(const WindowSet& ws, int span_id) {
  auto it = ws.windows_for_span.find(span_id);
  if (it == ws.windows_for_span.end() || it->second.empty()) {
    throw DataError("span " + std::to_string(span_id) + " appears in no window");
  }
  int best = -1;
  int best_included = -1, best_context = -1;
  for (int ordinal : it->second) {
    const Window& w = ws.windows[static_cast<std::size_t>(ordinal)];
    auto sp = std::find_if(w.spans.begin(), w.spans.end(),
                           [span_id](const SpanInWindow& s) { return s.span_id == span_id; });
    int included = sp->tokens_included;
    int context = std::min(sp->left_context, sp->right_context);
    if (included > best_included || (included == best_included && context > best_context)) {
      best = ordinal;
      best_included = included;
      best_context = context;
    }
  }
  return best;
}

SingleInstanceExample single_instance_example(const TokenizedArticle& ta,
                                              const SpanAnnotation& span,
                                              const Tokenizer& tok, std::size_t context) {
  std::size_t first = ta.ids.size(), last = 0;
  bool any = false;
  for (std::size_t t = 0; t < ta.ids.size(); ++t) {
    auto [ts, te] = ta.char_spans[t];
    if (ts < span.end && span.start < te) {
      if (!any) first = t;
      last = t;
      any = true;
    }
  }
  if (!any) {
    throw DataError("span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                    ") overlaps no token");
  }
  SingleInstanceExample ex;
  std::size_t left_begin = first >= context ? first - context : 0;
  for (std::size_t t = left_begin; t < first; ++t) ex.ids.push_back(ta.ids[t]);
  ex.bop_pos = static_cast<int>(ex.ids.size());
  ex.ids.push_back(tok.bop_id(0));
  for (std::size_t t = first; t <= last; ++t) ex.ids.push_back(ta.ids[t]);
  ex.ids.push_back(tok.eop_id(0));
  std::size_t right_end = std::min(ta.ids.size(), last + 1 + context);
  for (std::size_t t = last + 1; t < right_end; ++t) ex.ids.push_back(ta.ids[t]);
  return ex;
}

}  // namespace miml
