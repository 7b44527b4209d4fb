#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mrg {

// 27-bit label vector aligned with KnowledgeGraph::nodes order.
using NodeLabelVector = std::vector<std::uint8_t>;

// Radiology-style knowledge graph: one root sentinel, 7 organ nodes and 20
// disease/finding nodes, each disease attached to exactly one organ. Node
// order in `nodes` is the canonical order used everywhere (label vectors,
// knowledge text, reports).
struct KnowledgeGraph {
  std::vector<std::string> nodes;
  std::unordered_map<std::string, std::string> organ_of;  // disease -> organ

  static constexpr int kNodeCount = 27;
  static constexpr int kOrganCount = 7;
  static constexpr int kDiseaseCount = 19;

  const std::string& root() const { return nodes.front(); }
  std::vector<std::string> organs() const;
  std::vector<std::string> diseases() const;
  bool is_disease(const std::string& name) const { return organ_of.count(name) > 0; }

  // Index in canonical order, or -1 when the name is not a node.
  int index_of(const std::string& name) const;

  // Throws ContractError if the 27-node structure is violated.
  void validate() const;

  // One node per line in canonical order; disease rows are "disease\torgan".
  static KnowledgeGraph load(const std::string& path);
  void save(const std::string& path) const;
};

// The fixed graph this corpus is built around (also shipped as
// data/knowledge_graph.txt). Node names are configuration, not hard-coded
// truth: loaders accept any graph with the same root/organ/disease structure.
KnowledgeGraph build_node_vocabulary();

int count_set(const NodeLabelVector& v);
std::vector<std::string> labels_to_names(const NodeLabelVector& v, const KnowledgeGraph& g);
NodeLabelVector names_to_labels(const std::vector<std::string>& names, const KnowledgeGraph& g);

}  // namespace mrg
