#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "miml/corpus.hpp"
#include "miml/hierarchy.hpp"

namespace miml {

// Predictions reuse the annotation row shape: one row per gold row.
using PredictionRecord = AnnotationRow;

struct PerClassF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;  // gold rows; f1 is reported as 1.0 with support 0
};

// Matched-pair assignment behind the best-match score. Pairs are
// (gold technique, predicted technique), one per row.
struct MatchResult {
  long total = 0;
  long correct = 0;
  double micro_f1 = 0.0;
  std::vector<std::pair<int, int>> pairs;
};

// Official-style best-match micro-F1: within each identical-span group, the
// maximum matching between predicted and gold label multisets.
MatchResult micro_f1(const std::vector<PredictionRecord>& predictions,
                     const std::vector<AnnotationRow>& golds);

std::array<PerClassF1, kNumTechniques> per_class_f1(const MatchResult& match);

enum class TreeF1Subset { All, Incorrect };
// Mean tree_f1 over the matched pairs; empty subset yields nullopt.
std::optional<double> tree_f1_aggregate(const MatchResult& match, const HierarchyTree& tree,
                                        TreeF1Subset subset);

struct MetricsReport {
  double micro_f1 = 0.0;
  long total = 0;
  long correct = 0;
  std::array<PerClassF1, kNumTechniques> per_class{};
  std::optional<double> tree_f1_all;
  std::optional<double> tree_f1_incorrect;
};

MetricsReport evaluate(const std::vector<PredictionRecord>& predictions,
                       const std::vector<AnnotationRow>& golds, const HierarchyTree& tree);

std::string format_report(const MetricsReport& report);
std::string report_csv(const MetricsReport& report);

// TSV rows article_id \t technique \t start \t end, sorted by
// (article, start, end, technique).
void write_predictions(const std::vector<PredictionRecord>& predictions, const std::string& path);

}  // namespace miml
