#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace miml {

enum class NodeKind { Internal, Leaf };

struct TreeNode {
  std::string name;
  NodeKind kind = NodeKind::Leaf;
  int parent = -1;          // -1 for the root
  int edge_in_parent = -1;  // index of this node in parent's child list
  std::vector<int> children;
};

// Root-to-leaf path as (classifier node, outgoing edge index) pairs.
struct LeafPath {
  std::vector<std::pair<int, int>> steps;
};

enum class TreeValidation {
  Strict,   // leaves must be exactly the 14 technique names
  Relaxed,  // arbitrary leaf names (small test trees)
};

// The annotation decision tree. Immutable after construction; safe for
// concurrent reads.
class HierarchyTree {
 public:
  // Parses an indented-outline config: one node per line, two-space
  // indentation per level, '#' comment lines, leaves are lines without
  // children.
  static HierarchyTree parse(const std::string& text,
                             TreeValidation validation = TreeValidation::Strict);
  static HierarchyTree load_file(const std::string& path,
                                 TreeValidation validation = TreeValidation::Strict);
  // The tree shipped with the repo (also available as configs/hierarchy_default.txt).
  static HierarchyTree load_default();

  int root() const { return root_; }
  int node_count() const { return static_cast<int>(nodes_.size()); }
  const TreeNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  int find(const std::string& name) const;  // -1 when absent

  // Internal nodes in deterministic (pre-order) order; index in this list is
  // the classifier id k used by the model.
  const std::vector<int>& internal_nodes() const { return internal_; }
  const std::vector<int>& leaves() const { return leaves_; }
  int classifier_index(int node_id) const;  // k for an internal node
  int child_count(int node_id) const { return static_cast<int>(node(node_id).children.size()); }

  LeafPath path_to_leaf(int leaf) const;
  int lowest_common_ancestor(int a, int b) const;
  int node_depth(int id) const;  // root has depth 1
  double tree_f1(int gold, int pred) const;

  // Same topology, leaf names permuted by a seeded uniform permutation.
  HierarchyTree shuffle_leaves(std::uint64_t seed) const;

  // Leaf node id for a technique enum index; only valid for strict trees.
  int leaf_for_technique(int technique) const;
  // Inverse of leaf_for_technique; -1 for internal nodes or non-technique leaves.
  int technique_for_leaf(int leaf) const;

  std::string to_config_text() const;

 private:
  void finalize(TreeValidation validation);

  std::vector<TreeNode> nodes_;
  int root_ = -1;
  std::vector<int> internal_;
  std::vector<int> leaves_;
  std::vector<int> technique_to_leaf_;  // kNumTechniques entries, -1 when unmapped
};

}  // namespace miml
