#include "miml/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "miml/errors.hpp"

namespace miml {

MatchResult micro_f1(const std::vector<PredictionRecord>& predictions,
                     const std::vector<AnnotationRow>& golds) {
  using Key = std::tuple<int, std::size_t, std::size_t>;
  std::map<Key, std::vector<int>> gold_groups, pred_groups;
  for (const auto& g : golds) gold_groups[{g.article_id, g.start, g.end}].push_back(g.technique);
  for (const auto& p : predictions) {
    Key key{p.article_id, p.start, p.end};
    if (!gold_groups.count(key)) {
      throw DataError("prediction for unknown span group: article " + std::to_string(p.article_id) +
                      " [" + std::to_string(p.start) + ", " + std::to_string(p.end) + ")");
    }
    pred_groups[key].push_back(p.technique);
  }

  MatchResult out;
  for (auto& [key, gold_labels] : gold_groups) {
    auto it = pred_groups.find(key);
    std::size_t n_pred = it == pred_groups.end() ? 0 : it->second.size();
    if (n_pred != gold_labels.size()) {
      throw DataError("row-count mismatch for span group: article " +
                      std::to_string(std::get<0>(key)) + " [" +
                      std::to_string(std::get<1>(key)) + ", " + std::to_string(std::get<2>(key)) +
                      "): " + std::to_string(gold_labels.size()) + " gold vs " +
                      std::to_string(n_pred) + " predicted");
    }
    auto& pred_labels = it->second;

    // A prediction can match a gold label only if equal, so the maximum
    // matching is the label-multiset intersection. Matched pairs first, then
    // leftover gold/pred rows paired in technique-index order.
    std::array<long, kNumTechniques> gold_count{}, pred_count{};
    for (int t : gold_labels) ++gold_count[static_cast<std::size_t>(t)];
    for (int t : pred_labels) ++pred_count[static_cast<std::size_t>(t)];
    std::vector<int> leftover_gold, leftover_pred;
    for (int t = 0; t < kNumTechniques; ++t) {
      long matched = std::min(gold_count[static_cast<std::size_t>(t)],
                              pred_count[static_cast<std::size_t>(t)]);
      out.correct += matched;
      for (long i = 0; i < matched; ++i) out.pairs.emplace_back(t, t);
      for (long i = matched; i < gold_count[static_cast<std::size_t>(t)]; ++i) {
        leftover_gold.push_back(t);
      }
      for (long i = matched; i < pred_count[static_cast<std::size_t>(t)]; ++i) {
        leftover_pred.push_back(t);
      }
    }
    for (std::size_t i = 0; i < leftover_gold.size(); ++i) {
      out.pairs.emplace_back(leftover_gold[i], leftover_pred[i]);
    }
    out.total += static_cast<long>(gold_labels.size());
  }
  out.micro_f1 = out.total == 0 ? 0.0
                                : static_cast<double>(out.correct) / static_cast<double>(out.total);
  return out;
}

std::array<PerClassF1, kNumTechniques> per_class_f1(const MatchResult& match) {
  std::array<long, kNumTechniques> tp{}, gold{}, pred{};
  for (auto [g, p] : match.pairs) {
    ++gold[static_cast<std::size_t>(g)];
    ++pred[static_cast<std::size_t>(p)];
    if (g == p) ++tp[static_cast<std::size_t>(g)];
  }
  std::array<PerClassF1, kNumTechniques> out{};
  for (std::size_t t = 0; t < kNumTechniques; ++t) {
    PerClassF1& c = out[t];
    c.support = gold[t];
    if (gold[t] == 0 && pred[t] == 0) {
      // Vacuous class: flagged via support = 0.
      c.precision = c.recall = c.f1 = 1.0;
      continue;
    }
    c.precision = pred[t] == 0 ? 0.0 : static_cast<double>(tp[t]) / static_cast<double>(pred[t]);
    c.recall = gold[t] == 0 ? 0.0 : static_cast<double>(tp[t]) / static_cast<double>(gold[t]);
    c.f1 = (c.precision + c.recall) == 0.0
               ? 0.0
               : 2.0 * c.precision * c.recall / (c.precision + c.recall);
  }
  return out;
}

std::optional<double> tree_f1_aggregate(const MatchResult& match, const HierarchyTree& tree,
                                        TreeF1Subset subset) {
  double sum = 0.0;
  long count = 0;
  for (auto [g, p] : match.pairs) {
    if (subset == TreeF1Subset::Incorrect && g == p) continue;
    sum += tree.tree_f1(tree.leaf_for_technique(g), tree.leaf_for_technique(p));
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

MetricsReport evaluate(const std::vector<PredictionRecord>& predictions,
                       const std::vector<AnnotationRow>& golds, const HierarchyTree& tree) {
  MetricsReport report;
  MatchResult match = micro_f1(predictions, golds);
  report.micro_f1 = match.micro_f1;
  report.total = match.total;
  report.correct = match.correct;
  report.per_class = per_class_f1(match);
  report.tree_f1_all = tree_f1_aggregate(match, tree, TreeF1Subset::All);
  report.tree_f1_incorrect = tree_f1_aggregate(match, tree, TreeF1Subset::Incorrect);
  return report;
}

std::string format_report(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed;
  out << "micro-F1: " << report.micro_f1 << " (" << report.correct << "/" << report.total << ")\n";
  out << "tree-F1 (all): ";
  if (report.tree_f1_all) out << *report.tree_f1_all; else out << "n/a";
  out << "\ntree-F1 (incorrect): ";
  if (report.tree_f1_incorrect) out << *report.tree_f1_incorrect; else out << "n/a";
  out << "\nper-class F1:\n";
  for (int t = 0; t < kNumTechniques; ++t) {
    const auto& c = report.per_class[static_cast<std::size_t>(t)];
    out << "  " << technique_name(t) << ": " << c.f1 << " (support " << c.support;
    if (c.support == 0) out << ", vacuous";
    out << ")\n";
  }
  return out.str();
}

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "metric,value\n";
  out << "micro_f1," << report.micro_f1 << "\n";
  out << "total," << report.total << "\n";
  out << "correct," << report.correct << "\n";
  out << "tree_f1_all," << (report.tree_f1_all ? std::to_string(*report.tree_f1_all) : "") << "\n";
  out << "tree_f1_incorrect,"
      << (report.tree_f1_incorrect ? std::to_string(*report.tree_f1_incorrect) : "") << "\n";
  for (int t = 0; t < kNumTechniques; ++t) {
    const auto& c = report.per_class[static_cast<std::size_t>(t)];
    out << "f1_" << technique_name(t) << "," << c.f1 << "\n";
  }
  return out.str();
}

void write_predictions(const std::vector<PredictionRecord>& predictions, const std::string& path) {
  std::vector<PredictionRecord> sorted = predictions;
  std::sort(sorted.begin(), sorted.end(), [](const PredictionRecord& a, const PredictionRecord& b) {
    return std::tie(a.article_id, a.start, a.end, a.technique) <
           std::tie(b.article_id, b.start, b.end, b.technique);
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write predictions file: " + path);
  for (const auto& p : sorted) {
    out << p.article_id << "\t" << technique_name(p.technique) << "\t" << p.start << "\t" << p.end
        << "\n";
  }
}

}  // namespace miml
