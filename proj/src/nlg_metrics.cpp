#include "mrg/nlg_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts count_ngrams(const Tokens& t, int n) {
  NgramCounts counts;
  if (static_cast<int>(t.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i)
    ++counts[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  return counts;
}

struct BleuTally {
  std::array<long, 4> clipped{0, 0, 0, 0};
  std::array<long, 4> total{0, 0, 0, 0};
  long candidate_len = 0;
  long reference_len = 0;  // closest reference length, summed over samples
};

void tally_sample(const Tokens& candidate, const std::vector<Tokens>& references, int max_n,
                  BleuTally& tally) {
  if (references.empty()) throw ContractError("bleu: at least one reference is required");
  tally.candidate_len += static_cast<long>(candidate.size());
  long best_ref = static_cast<long>(references[0].size());
  for (const auto& r : references) {
    const long len = static_cast<long>(r.size());
    const long c = static_cast<long>(candidate.size());
    if (std::abs(len - c) < std::abs(best_ref - c) ||
        (std::abs(len - c) == std::abs(best_ref - c) && len < best_ref))
      best_ref = len;
  }
  tally.reference_len += best_ref;
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts cand = count_ngrams(candidate, n);
    NgramCounts max_ref;
    for (const auto& r : references)
      for (const auto& [gram, count] : count_ngrams(r, n))
        max_ref[gram] = std::max(max_ref[gram], count);
    for (const auto& [gram, count] : cand) {
      tally.total[n - 1] += count;
      const auto it = max_ref.find(gram);
      if (it != max_ref.end()) tally.clipped[n - 1] += std::min(count, it->second);
    }
  }
}

BleuResult finish_bleu(const BleuTally& tally, int max_n) {
  BleuResult out;
  out.brevity_penalty =
      tally.candidate_len == 0
          ? 0.0
          : std::min(1.0, std::exp(1.0 - double(tally.reference_len) / double(tally.candidate_len)));
  for (int n = 1; n <= max_n; ++n)
    out.precisions[n - 1] =
        tally.total[n - 1] == 0 ? 0.0 : double(tally.clipped[n - 1]) / double(tally.total[n - 1]);
  for (int k = 1; k <= max_n; ++k) {
    double log_sum = 0.0;
    bool zero = false;
    for (int n = 1; n <= k; ++n) {
      if (out.precisions[n - 1] <= 0.0) {
        zero = true;
        break;
      }
      log_sum += std::log(out.precisions[n - 1]);
    }
    out.bleu[k - 1] = zero ? 0.0 : out.brevity_penalty * std::exp(log_sum / k);
  }
  return out;
}

}  // namespace

BleuResult bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n) {
  if (candidate.empty()) {
    BleuResult out;
    out.empty_candidate = true;
    return out;
  }
  BleuTally tally;
  tally_sample(candidate, references, max_n, tally);
  return finish_bleu(tally, max_n);
}

BleuResult corpus_bleu(const std::vector<Tokens>& candidates,
                       const std::vector<std::vector<Tokens>>& references, int max_n) {
  if (candidates.size() != references.size())
    throw ContractError("corpus_bleu: candidate/reference counts differ");
  BleuTally tally;
  bool any_empty = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].empty()) {
      any_empty = true;
      continue;
    }
    tally_sample(candidates[i], references[i], max_n, tally);
  }
  BleuResult out = finish_bleu(tally, max_n);
  out.empty_candidate = any_empty;
  return out;
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t n = candidate.size(), m = reference.size();
  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      dp[i][j] = candidate[i - 1] == reference[j - 1] ? dp[i - 1][j - 1] + 1
                                                      : std::max(dp[i - 1][j], dp[i][j - 1]);
  const double lcs = dp[n][m];
  if (lcs == 0.0) return 0.0;
  const double p = lcs / double(n), r = lcs / double(m);
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double meteor_lite(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;

  // greedy alignment in candidate order, preferring to extend the current
  // chunk (reference position prev+1), otherwise the leftmost unused match
  std::vector<bool> ref_used(reference.size(), false);
  int matches = 0, chunks = 0;
  long prev_ref = -2;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    long chosen = -1;
    const long next = prev_ref + 1;
    if (next >= 0 && next < static_cast<long>(reference.size()) && !ref_used[next] &&
        reference[next] == candidate[i]) {
      chosen = next;
    } else {
      for (std::size_t j = 0; j < reference.size(); ++j)
        if (!ref_used[j] && reference[j] == candidate[i]) {
          chosen = static_cast<long>(j);
          break;
        }
    }
    if (chosen < 0) {
      prev_ref = -2;
      continue;
    }
    ref_used[chosen] = true;
    ++matches;
    if (chosen != prev_ref + 1) ++chunks;
    prev_ref = chosen;
  }
  if (matches == 0) return 0.0;
  const double p = double(matches) / double(candidate.size());
  const double r = double(matches) / double(reference.size());
  const double f_mean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = double(chunks) / double(matches);
  const double penalty = 0.5 * frag * frag * frag;
  return f_mean * (1.0 - penalty);
}

CiderResult cider(const std::vector<Tokens>& candidates,
                  const std::vector<std::vector<Tokens>>& references, CiderVariant variant,
                  double sigma) {
  const std::size_t n_samples = candidates.size();
  if (n_samples != references.size())
    throw ContractError("cider: candidate/reference counts differ");
  if (n_samples < 2) throw ContractError("cider: needs a corpus of at least 2 samples for IDF");

  constexpr int kMaxN = 4;
  // document frequency per n-gram over the reference corpus
  std::array<NgramCounts, kMaxN> df;
  for (const auto& refs : references) {
    std::array<NgramCounts, kMaxN> seen;
    for (const auto& r : refs)
      for (int n = 1; n <= kMaxN; ++n)
        for (const auto& [gram, count] : count_ngrams(r, n)) seen[n - 1][gram] = 1;
    for (int n = 0; n < kMaxN; ++n)
      for (const auto& [gram, one] : seen[n]) df[n][gram] += one;
  }
  const double log_n = std::log(double(n_samples));

  struct TfIdf {
    std::array<NgramCounts, kMaxN> tf;
    std::array<double, kMaxN> norm{0, 0, 0, 0};
    long length = 0;
  };
  auto vectorize = [&](const Tokens& t) {
    TfIdf v;
    v.length = static_cast<long>(t.size());
    for (int n = 1; n <= kMaxN; ++n) {
      v.tf[n - 1] = count_ngrams(t, n);
      double sq = 0;
      for (const auto& [gram, count] : v.tf[n - 1]) {
        const auto it = df[n - 1].find(gram);
        const double idf = log_n - std::log(std::max(1.0, it == df[n - 1].end() ? 0.0 : it->second));
        const double w = count * idf;
        sq += w * w;
      }
      v.norm[n - 1] = std::sqrt(sq);
    }
    return v;
  };
  auto idf_of = [&](int n, const std::vector<std::string>& gram) {
    const auto it = df[n].find(gram);
    return log_n - std::log(std::max(1.0, it == df[n].end() ? 0.0 : double(it->second)));
  };

  CiderResult out;
  out.per_sample.resize(n_samples, 0.0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const TfIdf hyp = vectorize(candidates[i]);
    double score = 0.0;
    for (const auto& ref_tokens : references[i]) {
      const TfIdf ref = vectorize(ref_tokens);
      double per_ref = 0.0;
      for (int n = 0; n < kMaxN; ++n) {
        double val = 0.0;
        for (const auto& [gram, count] : hyp.tf[n]) {
          const auto it = ref.tf[n].find(gram);
          if (it == ref.tf[n].end()) continue;
          const double idf = idf_of(n, gram);
          const double h = count * idf, r = it->second * idf;
          val += (variant == CiderVariant::kD ? std::min(h, r) : h) * r;
        }
        if (hyp.norm[n] > 0 && ref.norm[n] > 0) val /= hyp.norm[n] * ref.norm[n];
        if (variant == CiderVariant::kD) {
          const double delta = double(hyp.length - ref.length);
          val *= std::exp(-delta * delta / (2.0 * sigma * sigma));
        }
        per_ref += val;
      }
      score += per_ref / kMaxN;
    }
    out.per_sample[i] = 10.0 * score / double(references[i].size());
    out.mean += out.per_sample[i];
  }
  out.mean /= double(n_samples);
  return out;
}

}  // namespace mrg
