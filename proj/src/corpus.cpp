#include "miml/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "miml/errors.hpp"
#include "miml/rng.hpp"
#include "miml/text.hpp"

namespace fs = std::filesystem;

namespace miml {

long FrequencyTable::total() const { return std::accumulate(counts.begin(), counts.end(), 0L); }

const Article* Dataset::article_by_id(int id) const {
  auto it = std::lower_bound(articles.begin(), articles.end(), id,
                             [](const Article& a, int v) { return a.id < v; });
  if (it == articles.end() || it->id != id) return nullptr;
  return &*it;
}

std::vector<const SpanAnnotation*> Dataset::annotations_for(int article_id) const {
  std::vector<const SpanAnnotation*> out;
  for (const auto& a : annotations) {
    if (a.article_id == article_id) out.push_back(&a);
  }
  return out;
}

Dataset Dataset::subset(const std::vector<int>& article_ids) const {
  std::set<int> keep(article_ids.begin(), article_ids.end());
  Dataset out;
  out.provenance = provenance;
  for (const auto& a : articles) {
    if (keep.count(a.id)) out.articles.push_back(a);
  }
  for (const auto& s : annotations) {
    if (keep.count(s.article_id)) out.annotations.push_back(s);
  }
  for (const auto& r : rows) {
    if (keep.count(r.article_id)) out.rows.push_back(r);
  }
  return out;
}

std::vector<Article> load_articles(const std::string& directory) {
  if (!fs::is_directory(directory)) throw DataError("not a directory: " + directory);
  std::vector<Article> out;
  std::set<int> seen;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower.size() <= 11 || lower.substr(0, 7) != "article" ||
        lower.substr(lower.size() - 4) != ".txt") {
      continue;
    }
    std::string digits = lower.substr(7, lower.size() - 11);
    int id = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
    if (ec != std::errc() || p != digits.data() + digits.size()) {
      throw DataError("unparseable article filename: " + name);
    }
    if (!seen.insert(id).second) {
      throw DataError("duplicate article id " + std::to_string(id) + " in " + directory);
    }
    std::ifstream in(entry.path(), std::ios::binary);
    if (!in) throw DataError("unreadable file: " + entry.path().string());
    std::ostringstream buf;
    buf << in.rdbuf();
    out.push_back(Article{id, buf.str()});
  }
  std::sort(out.begin(), out.end(), [](const Article& a, const Article& b) { return a.id < b.id; });
  return out;
}

namespace {

std::size_t parse_size(const std::string& field, int lineno, const char* what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    throw DataError("annotation line " + std::to_string(lineno) + ": non-integer " + what +
                    " '" + field + "'");
  }
  return v;
}

}  // namespace

namespace {

std::vector<AnnotationRow> load_rows_impl(const std::string& file,
                                          const std::map<int, std::size_t>* lengths) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open annotation file: " + file);

  std::vector<AnnotationRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      std::size_t tab = line.find('\t', pos);
      fields.push_back(line.substr(pos, tab == std::string::npos ? tab : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 4) {
      throw DataError("annotation line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
    }
    AnnotationRow row;
    row.article_id = static_cast<int>(parse_size(fields[0], lineno, "article id"));
    auto tech = technique_from_name(fields[1]);
    if (!tech) {
      throw DataError("annotation line " + std::to_string(lineno) + ": unknown technique '" +
                      fields[1] + "'");
    }
    row.technique = *tech;
    row.start = parse_size(fields[2], lineno, "start offset");
    row.end = parse_size(fields[3], lineno, "end offset");
    if (row.start >= row.end) {
      throw DataError("annotation line " + std::to_string(lineno) + ": offsets [" +
                      std::to_string(row.start) + ", " + std::to_string(row.end) +
                      ") are not a valid span");
    }
    if (lengths) {
      auto it = lengths->find(row.article_id);
      if (it == lengths->end()) {
        throw DataError("annotation line " + std::to_string(lineno) + ": unknown article " +
                        std::to_string(row.article_id));
      }
      if (row.end > it->second) {
        throw DataError("annotation line " + std::to_string(lineno) + ": offsets [" +
                        std::to_string(row.start) + ", " + std::to_string(row.end) +
                        ") out of range for article " + std::to_string(row.article_id));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::vector<AnnotationRow> load_annotation_rows(const std::string& file,
                                                const std::vector<Article>& articles) {
  std::map<int, std::size_t> lengths;
  for (const auto& a : articles) lengths[a.id] = utf8_length(a.text);
  return load_rows_impl(file, &lengths);
}

std::vector<AnnotationRow> load_annotation_rows(const std::string& file) {
  return load_rows_impl(file, nullptr);
}

std::vector<SpanAnnotation> merge_rows(const std::vector<AnnotationRow>& rows) {
  std::map<std::tuple<int, std::size_t, std::size_t>, std::set<int>> groups;
  for (const auto& r : rows) groups[{r.article_id, r.start, r.end}].insert(r.technique);
  std::vector<SpanAnnotation> out;
  for (const auto& [key, labels] : groups) {
    SpanAnnotation s;
    std::tie(s.article_id, s.start, s.end) = key;
    s.labels.assign(labels.begin(), labels.end());
    out.push_back(std::move(s));
  }
  return out;
}

Dataset load_dataset(const std::string& articles_dir, const std::string& labels_file) {
  Dataset ds;
  ds.articles = load_articles(articles_dir);
  ds.rows = load_annotation_rows(labels_file, ds.articles);
  ds.annotations = merge_rows(ds.rows);
  return ds;
}

FrequencyTable compute_frequency_table(const Dataset& dataset) {
  FrequencyTable table;
  for (const auto& s : dataset.annotations) {
    for (int t : s.labels) ++table.counts[static_cast<std::size_t>(t)];
  }
  return table;
}

FrequencyTable reference_frequency_table() {
  FrequencyTable t;
  auto set = [&t](std::string_view name, long count) {
    t.counts[static_cast<std::size_t>(*technique_from_name(name))] = count;
  };
  set("Loaded_Language", 2448);
  set("Name_Calling,Labeling", 1241);
  set("Repetition", 766);
  set("Exaggeration,Minimisation", 534);
  set("Doubt", 559);
  set("Appeal_to_fear-prejudice", 338);
  set("Flag-Waving", 316);
  set("Causal_Oversimplification", 227);
  set("Slogans", 169);
  set("Appeal_to_Authority", 158);
  set("Black-and-White_Fallacy", 129);
  set("Thought-terminating_Cliches", 93);
  set("Whataboutism,Straw_Men,Red_Herring", 136);
  set("Bandwagon,Reductio_ad_hitlerum", 77);
  return t;
}

int rarer_label(const std::vector<int>& labels, const FrequencyTable& freq) {
  if (labels.empty()) throw DataError("rarer_label: empty label set");
  int best = labels[0];
  for (std::size_t i = 1; i < labels.size(); ++i) {
    int cand = labels[i];
    long cb = freq.counts[static_cast<std::size_t>(best)];
    long cc = freq.counts[static_cast<std::size_t>(cand)];
    if (cc < cb || (cc == cb && technique_name(cand) < technique_name(best))) best = cand;
  }
  return best;
}

std::vector<Fold> make_folds(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 2) throw UsageError("make_folds: k must be >= 2");
  std::vector<int> ids;
  for (const auto& a : dataset.articles) ids.push_back(a.id);
  if (static_cast<int>(ids.size()) < k) {
    throw DataError("make_folds: fewer articles (" + std::to_string(ids.size()) +
                    ") than folds (" + std::to_string(k) + ")");
  }
  auto rng = make_rng(seed, "folds");
  std::shuffle(ids.begin(), ids.end(), rng);

  std::size_t n = ids.size();
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(k));
  std::size_t base = n / static_cast<std::size_t>(k);
  std::size_t rem = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (std::size_t g = 0; g < static_cast<std::size_t>(k); ++g) {
    std::size_t size = base + (g < rem ? 1 : 0);
    groups[g].assign(ids.begin() + static_cast<long>(pos), ids.begin() + static_cast<long>(pos + size));
    pos += size;
  }
  std::vector<Fold> folds;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Fold fold;
    fold.eval_articles = groups[g];
    for (std::size_t h = 0; h < groups.size(); ++h) {
      if (h == g) continue;
      fold.train_articles.insert(fold.train_articles.end(), groups[h].begin(), groups[h].end());
    }
    std::sort(fold.eval_articles.begin(), fold.eval_articles.end());
    std::sort(fold.train_articles.begin(), fold.train_articles.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace miml
