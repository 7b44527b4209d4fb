#pragma once

#include <array>
#include <string>
#include <vector>

namespace mrg {

using Tokens = std::vector<std::string>;

struct BleuResult {
  std::array<double, 4> bleu{0, 0, 0, 0};        // BLEU-1..4
  std::array<double, 4> precisions{0, 0, 0, 0};  // clipped n-gram precisions
  double brevity_penalty = 0.0;
  bool empty_candidate = false;
};

// Sentence BLEU with clipped n-gram precision against the max reference
// counts and the closest-reference-length brevity penalty. A zero precision
// at any order makes that BLEU-k (and higher) zero.
BleuResult bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n = 4);

// Corpus-level BLEU: clipped counts and lengths aggregate over all samples
// before the ratio is taken.
BleuResult corpus_bleu(const std::vector<Tokens>& candidates,
                       const std::vector<std::vector<Tokens>>& references, int max_n = 4);

// LCS-based F-score with recall weighted by beta.
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.2);

// Exact-match unigram METEOR: F_mean = 10PR / (R + 9P), fragmentation
// penalty 0.5 * (chunks / matches)^3. No stemming or synonymy, so absolute
// values are not comparable with resource-backed METEOR implementations.
double meteor_lite(const Tokens& candidate, const Tokens& reference);

enum class CiderVariant { kD, kPlain };

struct CiderResult {
  std::vector<double> per_sample;
  double mean = 0.0;
};

// Consensus TF-IDF n-gram similarity on the 0..10 scale. IDF comes from the
// reference corpus; kD adds count clipping and the gaussian length penalty.
CiderResult cider(const std::vector<Tokens>& candidates,
                  const std::vector<std::vector<Tokens>>& references,
                  CiderVariant variant = CiderVariant::kD, double sigma = 6.0);

}  // namespace mrg
