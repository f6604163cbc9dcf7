#include "miml/hierarchy.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "miml/errors.hpp"
#include "miml/rng.hpp"
#include "miml/technique.hpp"

namespace miml {

namespace {

// Simplified annotation decision tree. Internal-node names are descriptive
// labels for the annotators' questions (emotional framing vs. reasoning vs.
// distraction); only the topology and the leaf set matter to the algorithms.
// The grouping of a few borderline techniques (Slogans, Bandwagon, Repetition)
// is a transcription judgment call; swap in another config via --hierarchy to
// change it.
constexpr const char* kDefaultConfig = R"(# Default annotation decision tree: 7 internal nodes, 14 technique leaves.
# Two-space indentation, one node per line, leaves are exact technique names.
root
  emotional
    intensity
      Loaded_Language
      Exaggeration,Minimisation
      Repetition
    fear-pride
      Appeal_to_fear-prejudice
      Flag-Waving
    Name_Calling,Labeling
  rational
    simplification
      Causal_Oversimplification
      Black-and-White_Fallacy
      Thought-terminating_Cliches
    Appeal_to_Authority
    Slogans
    Bandwagon,Reductio_ad_hitlerum
  distraction
    Doubt
    Whataboutism,Straw_Men,Red_Herring
)";

}  // namespace

HierarchyTree HierarchyTree::parse(const std::string& text, TreeValidation validation) {
  HierarchyTree tree;
  std::istringstream in(text);
  std::string line;
  std::vector<int> stack;  // stack[d] = last node seen at depth d
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t indent = 0;
    while (indent < line.size() && line[indent] == ' ') ++indent;
    std::string name = line.substr(indent);
    if (name.empty() || name[0] == '#') continue;
    if (indent % 2 != 0) {
      throw DataError("hierarchy config line " + std::to_string(lineno) +
                      ": indentation must be a multiple of two spaces");
    }
    std::size_t depth = indent / 2;
    if (depth > stack.size()) {
      throw DataError("hierarchy config line " + std::to_string(lineno) +
                      ": indentation skips a level");
    }
    stack.resize(depth);
    int id = static_cast<int>(tree.nodes_.size());
    TreeNode node;
    node.name = name;
    if (depth == 0) {
      if (tree.root_ != -1) {
        throw DataError("hierarchy config line " + std::to_string(lineno) +
                        ": more than one root node");
      }
      tree.root_ = id;
    } else {
      int parent = stack[depth - 1];
      node.parent = parent;
      node.edge_in_parent = static_cast<int>(tree.nodes_[static_cast<std::size_t>(parent)].children.size());
      tree.nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
    }
    tree.nodes_.push_back(std::move(node));
    stack.push_back(id);
  }
  if (tree.root_ == -1) throw DataError("hierarchy config is empty");
  tree.finalize(validation);
  return tree;
}

HierarchyTree HierarchyTree::load_file(const std::string& path, TreeValidation validation) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open hierarchy config: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), validation);
}

HierarchyTree HierarchyTree::load_default() { return parse(kDefaultConfig); }

void HierarchyTree::finalize(TreeValidation validation) {
  internal_.clear();
  leaves_.clear();
  technique_to_leaf_.assign(kNumTechniques, -1);

  // Pre-order walk from the root; also detects unreachable nodes. The parser
  // cannot build a cycle or a duplicate parent, but parse-independent
  // construction paths go through here as well.
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<int> order;
  std::vector<int> work{root_};
  while (!work.empty()) {
    int id = work.back();
    work.pop_back();
    if (seen[static_cast<std::size_t>(id)]) throw DataError("hierarchy has a cycle or duplicate parent");
    seen[static_cast<std::size_t>(id)] = true;
    order.push_back(id);
    const auto& ch = nodes_[static_cast<std::size_t>(id)].children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) work.push_back(*it);
  }
  if (order.size() != nodes_.size()) throw DataError("hierarchy has unreachable nodes");

  std::vector<std::string> names;
  for (int id : order) {
    TreeNode& n = nodes_[static_cast<std::size_t>(id)];
    names.push_back(n.name);
    if (n.children.empty()) {
      n.kind = NodeKind::Leaf;
      leaves_.push_back(id);
    } else {
      n.kind = NodeKind::Internal;
      if (n.children.size() < 2) {
        throw DataError("internal node '" + n.name + "' has fewer than two children");
      }
      internal_.push_back(id);
    }
  }
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw DataError("duplicate node name in hierarchy (duplicate parent)");
  }

  if (validation == TreeValidation::Strict) {
    if (leaves_.size() != static_cast<std::size_t>(kNumTechniques)) {
      throw DataError("hierarchy must have exactly " + std::to_string(kNumTechniques) +
                      " leaves, got " + std::to_string(leaves_.size()));
    }
    for (int leaf : leaves_) {
      const auto& name = nodes_[static_cast<std::size_t>(leaf)].name;
      auto t = technique_from_name(name);
      if (!t) throw DataError("unknown technique name in hierarchy: '" + name + "'");
      technique_to_leaf_[static_cast<std::size_t>(*t)] = leaf;
    }
  } else {
    for (int leaf : leaves_) {
      auto t = technique_from_name(nodes_[static_cast<std::size_t>(leaf)].name);
      if (t && technique_to_leaf_[static_cast<std::size_t>(*t)] == -1) {
        technique_to_leaf_[static_cast<std::size_t>(*t)] = leaf;
      }
    }
  }
}

int HierarchyTree::find(const std::string& name) const {
  for (int i = 0; i < node_count(); ++i) {
    if (nodes_[static_cast<std::size_t>(i)].name == name) return i;
  }
  return -1;
}

int HierarchyTree::classifier_index(int node_id) const {
  auto it = std::find(internal_.begin(), internal_.end(), node_id);
  if (it == internal_.end()) throw DataError("node is not an internal classifier node");
  return static_cast<int>(it - internal_.begin());
}

LeafPath HierarchyTree::path_to_leaf(int leaf) const {
  const TreeNode& n = node(leaf);
  if (n.kind != NodeKind::Leaf) throw DataError("path_to_leaf: node '" + n.name + "' is internal");
  LeafPath path;
  int cur = leaf;
  while (cur != root_) {
    const TreeNode& c = node(cur);
    path.steps.emplace_back(c.parent, c.edge_in_parent);
    cur = c.parent;
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

int HierarchyTree::node_depth(int id) const {
  if (id < 0 || id >= node_count()) throw DataError("node_depth: unknown node");
  int depth = 1;
  for (int cur = id; cur != root_; cur = node(cur).parent) ++depth;
  return depth;
}

int HierarchyTree::lowest_common_ancestor(int a, int b) const {
  if (a < 0 || a >= node_count() || b < 0 || b >= node_count()) {
    throw DataError("lowest_common_ancestor: unknown node");
  }
  int da = node_depth(a), db = node_depth(b);
  while (da > db) { a = node(a).parent; --da; }
  while (db > da) { b = node(b).parent; --db; }
  while (a != b) { a = node(a).parent; b = node(b).parent; }
  return a;
}

double HierarchyTree::tree_f1(int gold, int pred) const {
  if (node(gold).kind != NodeKind::Leaf || node(pred).kind != NodeKind::Leaf) {
    throw DataError("tree_f1: gold and pred must be leaves");
  }
  int lca = lowest_common_ancestor(gold, pred);
  double lk = node_depth(lca);
  double precision = lk / node_depth(pred);
  double recall = lk / node_depth(gold);
  return 2.0 * precision * recall / (precision + recall);
}

HierarchyTree HierarchyTree::shuffle_leaves(std::uint64_t seed) const {
  HierarchyTree out = *this;
  std::vector<std::size_t> perm(leaves_.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, "hierarchy-shuffle");
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    out.nodes_[static_cast<std::size_t>(leaves_[i])].name =
        nodes_[static_cast<std::size_t>(leaves_[perm[i]])].name;
  }
  // Re-derive the technique -> leaf map for the permuted names.
  bool strict = std::none_of(technique_to_leaf_.begin(), technique_to_leaf_.end(),
                             [](int v) { return v == -1; });
  out.finalize(strict ? TreeValidation::Strict : TreeValidation::Relaxed);
  return out;
}

int HierarchyTree::leaf_for_technique(int technique) const {
  int leaf = technique_to_leaf_.at(static_cast<std::size_t>(technique));
  if (leaf == -1) throw DataError("technique not present as a leaf in this hierarchy");
  return leaf;
}

int HierarchyTree::technique_for_leaf(int leaf) const {
  auto t = technique_from_name(node(leaf).name);
  return t ? *t : -1;
}

std::string HierarchyTree::to_config_text() const {
  std::string out;
  struct Item { int id; int depth; };
  std::vector<Item> work{{root_, 0}};
  while (!work.empty()) {
    auto [id, depth] = work.back();
    work.pop_back();
    out.append(static_cast<std::size_t>(depth) * 2, ' ');
    out += node(id).name;
    out += '\n';
    const auto& ch = node(id).children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) work.push_back({*it, depth + 1});
  }
  return out;
}

}  // namespace miml
