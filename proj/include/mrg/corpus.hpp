#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrg/graph.hpp"
#include "mrg/vocab.hpp"

namespace mrg {

// Grayscale grid in [0, 1] with the disease glyphs that were planted into it.
// Each disease renders as a distinct glyph inside its organ's fixed region.
struct SyntheticImage {
  int height = 32;
  int width = 32;
  int channels = 1;
  std::vector<double> grid;  // height*width*channels, row-major
  std::vector<std::string> planted_findings;

  double at(int r, int c) const { return grid[static_cast<std::size_t>(r) * width + c]; }
};

struct Sample {
  SyntheticImage image;
  std::string report;  // normalized lowercase text
  NodeLabelVector node_labels;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Sentence templates keyed by disease; every variant mentions the disease and
// its organ so labels derived from the text include the organ chain.
const std::vector<std::string>& report_templates(const std::string& disease);
const std::vector<std::string>& normal_report_templates();
const std::vector<std::string>& closing_templates();

// Vocabulary over the full template lexicon plus node names.
Vocabulary build_report_vocabulary(const KnowledgeGraph& graph);

// Deterministic corpus with power-law disease prevalence: disease at rank i is
// drawn with weight (i+1)^-imbalance_exponent. Reports are a pure function of
// the drawn finding set, so node_labels == extract_nodes(report) always holds.
std::vector<Sample> generate_corpus(int n, std::uint64_t seed, double imbalance_exponent,
                                    const KnowledgeGraph& graph);

// Bit i is set iff node name i occurs as a contiguous word subsequence of the
// report. Mention only; negations are not interpreted.
NodeLabelVector extract_nodes(const std::vector<std::string>& report_words,
                              const KnowledgeGraph& graph);
NodeLabelVector extract_nodes(const std::string& report, const KnowledgeGraph& graph);

// Flips each bit independently with probability (1 - target_accuracy), so the
// expected per-bit agreement equals target_accuracy. target_accuracy in (0, 1].
NodeLabelVector corrupt_labels(const NodeLabelVector& labels, double target_accuracy,
                               std::uint64_t seed);

// Disjoint, exhaustive, seed-deterministic split. Ratios must sum to 1.
SplitIndices split_corpus(int n_samples, double train_ratio, double val_ratio, double test_ratio,
                          std::uint64_t seed);

// JSONL: one object per line with image {shape, grid}, report, nodes.
void save_corpus_jsonl(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_corpus_jsonl(const std::string& path, const KnowledgeGraph& graph);

void save_split_manifest(const std::string& path, const SplitIndices& split);
SplitIndices load_split_manifest(const std::string& path);

}  // namespace mrg
