#include "mrg/graph.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

struct DiseaseRow {
  const char* name;
  const char* organ;
};

constexpr const char* kRoot = "normal";

constexpr const char* kOrgans[] = {"lung",  "pleural", "heart",      "mediastinum",
                                   "spine", "bone",    "airspace"};

// Ordered by intended head-to-tail frequency rank.
constexpr DiseaseRow kDiseases[] = {
    {"effusion", "pleural"},        {"opacity", "lung"},
    {"atelectasis", "lung"},        {"cardiomegaly", "heart"},
    {"pneumonia", "lung"},          {"pneumothorax", "pleural"},
    {"emphysema", "lung"},          {"edema", "lung"},
    {"calcinosis", "bone"},         {"nodule", "lung"},
    {"scoliosis", "spine"},         {"thickening", "pleural"},
    {"airspace disease", "airspace"}, {"arthritis", "spine"},
    {"hernia", "mediastinum"},      {"bone fractures", "bone"},
    {"hypoinflation", "lung"},      {"lesion", "lung"},
    {"foreign object", "lung"},
};

}  // namespace

std::vector<std::string> KnowledgeGraph::organs() const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (n != root() && !is_disease(n)) out.push_back(n);
  return out;
}

std::vector<std::string> KnowledgeGraph::diseases() const {
  std::vector<std::string> out;
  for (const auto& n : nodes)
    if (is_disease(n)) out.push_back(n);
  return out;
}

int KnowledgeGraph::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i] == name) return static_cast<int>(i);
  return -1;
}

void KnowledgeGraph::validate() const {
  if (static_cast<int>(nodes.size()) != kNodeCount)
    throw ContractError("knowledge graph must have 27 nodes, got " +
                        std::to_string(nodes.size()));
  std::set<std::string> seen(nodes.begin(), nodes.end());
  if (static_cast<int>(seen.size()) != kNodeCount)
    throw ContractError("knowledge graph node names are not unique");
  int n_diseases = 0;
  for (const auto& [disease, organ] : organ_of) {
    if (!seen.count(disease))
      throw ContractError("organ_of references unknown disease '" + disease + "'");
    if (!seen.count(organ)) throw ContractError("disease '" + disease + "' maps to unknown organ");
    ++n_diseases;
  }
  if (n_diseases != kDiseaseCount)
    throw ContractError("knowledge graph must map exactly " + std::to_string(kDiseaseCount) +
                        " diseases, got " + std::to_string(n_diseases));
  if (is_disease(root())) throw ContractError("root node cannot be a disease");
}

KnowledgeGraph KnowledgeGraph::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open knowledge graph file: " + path);
  KnowledgeGraph g;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      g.nodes.push_back(line);
    } else {
      const std::string disease = line.substr(0, tab);
      g.nodes.push_back(disease);
      g.organ_of[disease] = line.substr(tab + 1);
    }
  }
  g.validate();
  return g;
}

void KnowledgeGraph::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write knowledge graph file: " + path);
  for (const auto& n : nodes) {
    const auto it = organ_of.find(n);
    if (it == organ_of.end())
      out << n << "\n";
    else
      out << n << "\t" << it->second << "\n";
  }
}

KnowledgeGraph build_node_vocabulary() {
  KnowledgeGraph g;
  g.nodes.push_back(kRoot);
  for (const char* o : kOrgans) g.nodes.push_back(o);
  for (const auto& d : kDiseases) {
    g.nodes.push_back(d.name);
    g.organ_of[d.name] = d.organ;
  }
  g.validate();
  return g;
}

int count_set(const NodeLabelVector& v) {
  int n = 0;
  for (auto b : v) n += b ? 1 : 0;
  return n;
}

std::vector<std::string> labels_to_names(const NodeLabelVector& v, const KnowledgeGraph& g) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size() && i < g.nodes.size(); ++i)
    if (v[i]) out.push_back(g.nodes[i]);
  return out;
}

NodeLabelVector names_to_labels(const std::vector<std::string>& names, const KnowledgeGraph& g) {
  NodeLabelVector v(g.nodes.size(), 0);
  for (const auto& n : names) {
    const int i = g.index_of(n);
    if (i >= 0) v[i] = 1;
  }
  return v;
}

}  // namespace mrg
