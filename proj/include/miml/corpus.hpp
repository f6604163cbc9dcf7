#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "miml/technique.hpp"

namespace miml {

struct Article {
  int id = 0;
  std::string text;  // raw UTF-8, no newline normalization
};

// One annotated span; offsets are half-open [start, end) in code points.
struct SpanAnnotation {
  int article_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<int> labels;  // technique indices, sorted, unique, non-empty
};

// One raw annotation-file row. Identical (article, start, end) rows are
// merged into a SpanAnnotation, but the scorer needs per-row multiplicity.
struct AnnotationRow {
  int article_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  int technique = 0;
};

struct FrequencyTable {
  std::array<long, kNumTechniques> counts{};
  long total() const;
};

enum class Provenance { Official, Synthetic };

struct Dataset {
  std::vector<Article> articles;          // sorted by id
  std::vector<SpanAnnotation> annotations;  // sorted by (article, start, end)
  std::vector<AnnotationRow> rows;          // original row multiset
  Provenance provenance = Provenance::Official;

  const Article* article_by_id(int id) const;
  std::vector<const SpanAnnotation*> annotations_for(int article_id) const;
  Dataset subset(const std::vector<int>& article_ids) const;
};

std::vector<Article> load_articles(const std::string& directory);
// Parses the TSV (article_id \t technique \t start \t end) and validates
// offsets against the given articles.
std::vector<AnnotationRow> load_annotation_rows(const std::string& file,
                                                const std::vector<Article>& articles);
// Same parsing without the article-length bounds check, for scoring prediction
// files when the article texts are not at hand.
std::vector<AnnotationRow> load_annotation_rows(const std::string& file);
std::vector<SpanAnnotation> merge_rows(const std::vector<AnnotationRow>& rows);
Dataset load_dataset(const std::string& articles_dir, const std::string& labels_file);

FrequencyTable compute_frequency_table(const Dataset& dataset);
// Table of the published corpus frequencies, used as the default when no
// dataset-specific table is supplied.
FrequencyTable reference_frequency_table();

// The least frequent label; ties go to the lexicographically smaller name.
int rarer_label(const std::vector<int>& labels, const FrequencyTable& freq);

struct Fold {
  std::vector<int> train_articles;
  std::vector<int> eval_articles;
};
// Article-level seeded partition into k near-equal groups.
std::vector<Fold> make_folds(const Dataset& dataset, int k, std::uint64_t seed);

}  // namespace miml
