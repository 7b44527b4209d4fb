#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrg/corpus.hpp"
#include "mrg/graph.hpp"
#include "mrg/model.hpp"
#include "mrg/tensor.hpp"
#include "mrg/vocab.hpp"

namespace mrg {

// Small three-stage convolutional node classifier: conv3x3 + gelu + 2x2 mean
// pool per stage, then a linear head to 27 independent sigmoids.
template <typename S>
struct NodeClassifier {
  int image_side = 32;
  Tensor<S> conv1_w, conv1_b;  // 8  x (1*3*3)
  Tensor<S> conv2_w, conv2_b;  // 16 x (8*3*3)
  Tensor<S> conv3_w, conv3_b;  // 32 x (16*3*3)
  Tensor<S> head_w, head_b;    // [32*(side/8)^2, 27]

  static NodeClassifier init(int image_side, std::uint64_t seed) {
    if (image_side % 8 != 0) throw ConfigError("classifier image side must be divisible by 8");
    Rng rng(hash_seed(seed, 0xC1A55));
    NodeClassifier c;
    c.image_side = image_side;
    c.conv1_w = detail::param<S>(rng, 8, 9, 9);
    c.conv1_b = detail::zeros_param<S>(1, 8);
    c.conv2_w = detail::param<S>(rng, 16, 8 * 9, 8 * 9);
    c.conv2_b = detail::zeros_param<S>(1, 16);
    c.conv3_w = detail::param<S>(rng, 32, 16 * 9, 16 * 9);
    c.conv3_b = detail::zeros_param<S>(1, 32);
    const int final_side = image_side / 8;
    c.head_w = detail::param<S>(rng, 32 * final_side * final_side, KnowledgeGraph::kNodeCount,
                                32 * final_side * final_side);
    c.head_b = detail::zeros_param<S>(1, KnowledgeGraph::kNodeCount);
    return c;
  }

  NamedParams<S> named_params() const {
    NamedParams<S> out;
    out.add("cls.conv1.w", conv1_w);
    out.add("cls.conv1.b", conv1_b);
    out.add("cls.conv2.w", conv2_w);
    out.add("cls.conv2.b", conv2_b);
    out.add("cls.conv3.w", conv3_w);
    out.add("cls.conv3.b", conv3_b);
    out.add("cls.head.w", head_w);
    out.add("cls.head.b", head_b);
    return out;
  }
};

template <typename S>
Tensor<S> image_as_row(const SyntheticImage& img) {
  MatrixOf<S> m(1, img.height * img.width);
  for (int i = 0; i < img.height * img.width; ++i) m(0, i) = S(img.grid[i]);
  return Tensor<S>(std::move(m));
}

template <typename S>
Tensor<S> classifier_logits(const Tensor<S>& image_row, const NodeClassifier<S>& c) {
  const int side = c.image_side;
  if (image_row.rows() != 1 || image_row.cols() != side * side)
    throw ContractError("classifier expects a [1, " + std::to_string(side * side) +
                        "] image, got " + image_row.shape_str());
  Tensor<S> x = image_row;
  int h = side;
  const Tensor<S>* ws[] = {&c.conv1_w, &c.conv2_w, &c.conv3_w};
  const Tensor<S>* bs[] = {&c.conv1_b, &c.conv2_b, &c.conv3_b};
  for (int stage = 0; stage < 3; ++stage) {
    x = gelu(conv2d(x, *ws[stage], *bs[stage], h, h, 3, 1, 1));
    x = avg_pool2d(x, h, h, 2);
    h /= 2;
  }
  x = reshape(x, 1, x.size());
  return linear(x, c.head_w, c.head_b);
}

// 27 independent per-node probabilities.
template <typename S>
Tensor<S> classify_nodes(const SyntheticImage& img, const NodeClassifier<S>& c) {
  if (img.height != c.image_side || img.width != c.image_side || img.channels != 1)
    throw ContractError("classifier expects a " + std::to_string(c.image_side) + "x" +
                        std::to_string(c.image_side) + "x1 image");
  return sigmoid(classifier_logits(image_as_row<S>(img), c));
}

// bit = 1 iff p >= threshold (inclusive).
inline NodeLabelVector threshold_to_labels(const MatrixOf<double>& probabilities_row,
                                           double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ContractError("threshold must be in (0, 1)");
  NodeLabelVector out(probabilities_row.size(), 0);
  for (Index i = 0; i < probabilities_row.size(); ++i)
    out[i] = probabilities_row(0, i) >= threshold ? 1 : 0;
  return out;
}

// Positive node names in canonical graph order joined by [SEP]; the empty set
// maps to the [MASK-NEG] sentinel so the knowledge encoder always has input.
inline std::vector<int> nodes_to_knowledge_text(const NodeLabelVector& labels,
                                                const KnowledgeGraph& graph,
                                                const Vocabulary& vocab) {
  std::vector<int> ids;
  for (std::size_t i = 0; i < labels.size() && i < graph.nodes.size(); ++i) {
    if (!labels[i]) continue;
    if (!ids.empty()) ids.push_back(Vocabulary::kSep);
    for (const auto& w : Vocabulary::split_words(graph.nodes[i])) ids.push_back(vocab.id(w));
  }
  if (ids.empty()) ids.push_back(Vocabulary::kMaskNeg);
  return ids;
}

inline std::string knowledge_text_string(const NodeLabelVector& labels,
                                         const KnowledgeGraph& graph, const Vocabulary& vocab) {
  return vocab.detokenize(nodes_to_knowledge_text(labels, graph, vocab));
}

}  // namespace mrg
