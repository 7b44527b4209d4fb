#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mrg/model.hpp"
#include "mrg/tensor.hpp"
#include "mrg/vocab.hpp"

namespace mrg {

// Causal forward over the decoder stack with cross-attention into the
// knowledge-enhanced visual features. tokens must start with [BOS]. Logits
// are tied to the token embedding table.
template <typename S>
Tensor<S> forward_causal(const std::vector<int>& tokens, const Tensor<S>& enhanced_visual,
                         const ReportModel<S>& m) {
  if (tokens.empty() || tokens[0] != Vocabulary::kBos)
    throw ContractError("decoder input must start with [BOS]");
  Tensor<S> x = embed_tokens(tokens, m);
  const Tensor<S> mask = causal_mask_bias<S>(static_cast<Index>(tokens.size()));
  for (const auto& layer : m.dec_layers)
    x = transformer_layer<S>(x, layer, &mask, &enhanced_visual);
  x = layer_norm_p(x, m.dec_final_ln);
  return matmul(x, transpose(m.tok_embed));
}

struct GenerationConfig {
  std::string strategy = "greedy";  // or "beam"
  int beam_width = 3;
  int max_len = 48;
};

struct Generation {
  std::vector<int> tokens;  // without [BOS]/[EOS]
  double log_prob = 0.0;    // raw sum of token log-probabilities (incl. [EOS])
  bool truncated = false;   // hit max_len before [EOS]
};

namespace detail {

template <typename S>
Eigen::Array<S, 1, Eigen::Dynamic> last_row_log_softmax(const Tensor<S>& logits) {
  const auto row = logits.value().row(logits.rows() - 1);
  const S m = row.maxCoeff();
  Eigen::Array<S, 1, Eigen::Dynamic> shifted = row.array() - m;
  return shifted - std::log(shifted.exp().sum());
}

}  // namespace detail

template <typename S>
Generation generate_greedy(const Tensor<S>& enhanced_visual, const ReportModel<S>& m,
                           int max_len) {
  Generation out;
  std::vector<int> seq = {Vocabulary::kBos};
  for (int step = 0; step < max_len; ++step) {
    const Tensor<S> logits = forward_causal(seq, enhanced_visual, m);
    const auto logp = detail::last_row_log_softmax(logits);
    Index best = 0;  // strict > keeps the lowest token id on ties
    for (Index t = 1; t < logp.size(); ++t)
      if (logp(t) > logp(best)) best = t;
    out.log_prob += double(logp(best));
    if (best == Vocabulary::kEos) return out;
    seq.push_back(static_cast<int>(best));
    out.tokens.push_back(static_cast<int>(best));
  }
  out.truncated = true;
  return out;
}

// Beam search: raw log-probability ordering while searching ([EOS] competes
// for beam slots, so beam(1) reduces exactly to greedy), length-normalized
// scores for the final pick, ties broken by the lexicographically smaller
// sequence so decoding is deterministic.
template <typename S>
Generation generate_beam(const Tensor<S>& enhanced_visual, const ReportModel<S>& m, int width,
                         int max_len) {
  struct Hyp {
    std::vector<int> seq;  // starts with [BOS]
    double log_prob = 0.0;
    bool finished = false;
    bool truncated = false;
  };
  auto raw_better = [](const Hyp& a, const Hyp& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.seq < b.seq;
  };
  auto emitted_len = [](const Hyp& h) { return std::max<std::size_t>(1, h.seq.size() - 1); };
  auto final_better = [&](const Hyp& a, const Hyp& b) {
    const double sa = a.log_prob / double(emitted_len(a));
    const double sb = b.log_prob / double(emitted_len(b));
    if (sa != sb) return sa > sb;
    return a.seq < b.seq;
  };

  std::vector<Hyp> beam = {Hyp{{Vocabulary::kBos}, 0.0, false, false}};
  for (int step = 0; step < max_len; ++step) {
    bool all_finished = true;
    std::vector<Hyp> expanded;
    for (const auto& h : beam) {
      if (h.finished) {
        expanded.push_back(h);
        continue;
      }
      all_finished = false;
      const Tensor<S> logits = forward_causal(h.seq, enhanced_visual, m);
      const auto logp = detail::last_row_log_softmax(logits);
      for (Index t = 0; t < logp.size(); ++t) {
        Hyp next = h;
        next.log_prob += double(logp(t));
        if (t == Vocabulary::kEos)
          next.finished = true;
        else
          next.seq.push_back(static_cast<int>(t));
        expanded.push_back(std::move(next));
      }
    }
    if (all_finished) break;
    std::sort(expanded.begin(), expanded.end(), raw_better);
    if (static_cast<int>(expanded.size()) > width) expanded.resize(width);
    beam = std::move(expanded);
  }
  for (auto& h : beam)
    if (!h.finished) h.truncated = true;
  const Hyp best =
      *std::min_element(beam.begin(), beam.end(),
                        [&](const Hyp& a, const Hyp& b) { return final_better(a, b); });
  Generation out;
  out.tokens.assign(best.seq.begin() + 1, best.seq.end());
  out.log_prob = best.log_prob;
  out.truncated = best.truncated;
  return out;
}

template <typename S>
Generation generate(const Tensor<S>& enhanced_visual, const ReportModel<S>& m,
                    const GenerationConfig& gen) {
  if (gen.max_len > m.cfg.max_len - 1)
    throw ContractError("generation max_len " + std::to_string(gen.max_len) +
                        " exceeds the position table");
  if (gen.strategy == "greedy") return generate_greedy(enhanced_visual, m, gen.max_len);
  if (gen.strategy == "beam") return generate_beam(enhanced_visual, m, gen.beam_width, gen.max_len);
  throw ConfigError("unknown generation strategy: " + gen.strategy);
}

}  // namespace mrg
