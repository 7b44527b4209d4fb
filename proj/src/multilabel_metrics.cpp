#include "mrg/multilabel_metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

// Mann-Whitney AUC with midranks for tied scores.
double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  long positives = 0, negatives = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += mid_rank;
    i = j;
  }
  for (std::size_t k = 0; k < n; ++k)
    labels[k] ? ++positives : ++negatives;
  return (rank_sum_pos - 0.5 * double(positives) * double(positives + 1)) /
         (double(positives) * double(negatives));
}

// Mean over each positive's rank of precision at that rank; descending score,
// ties broken by lower sample index.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  long hits = 0, positives = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[order[k]]) {
      ++hits;
      ap += double(hits) / double(k + 1);
    }
  }
  for (int l : labels) positives += l;
  return positives == 0 ? 0.0 : ap / double(positives);
}

}  // namespace

MultilabelMetrics compute_multilabel_metrics(const MatrixOf<double>& probabilities,
                                             const MatrixOf<double>& labels, double threshold) {
  const Index n = probabilities.rows(), m = probabilities.cols();
  if (labels.rows() != n || labels.cols() != m)
    throw ContractError("multilabel metrics: probabilities and labels shapes differ");
  if (n < 2) throw ContractError("multilabel metrics: batch must be >= 2");
  long global_pos = 0, global_neg = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) labels(i, j) > 0.5 ? ++global_pos : ++global_neg;
  if (global_pos == 0 || global_neg == 0)
    throw ContractError("multilabel metrics: need at least one positive and one negative cell");

  MultilabelMetrics out;
  long correct_cells = 0;
  double auc_sum = 0, f1_sum = 0, ap_sum = 0;
  int included = 0;
  for (Index j = 0; j < m; ++j) {
    std::vector<double> scores(n);
    std::vector<int> y(n);
    long pos = 0;
    long tp = 0, fp = 0, fn = 0;
    for (Index i = 0; i < n; ++i) {
      scores[i] = probabilities(i, j);
      y[i] = labels(i, j) > 0.5 ? 1 : 0;
      pos += y[i];
      const bool pred = probabilities(i, j) >= threshold;
      if (pred == bool(y[i])) ++correct_cells;
      if (pred && y[i]) ++tp;
      if (pred && !y[i]) ++fp;
      if (!pred && y[i]) ++fn;
    }
    if (pos == 0 || pos == n) {
      ++out.excluded_labels;
      continue;
    }
    ++included;
    auc_sum += binary_auc(scores, y);
    f1_sum += (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * double(tp) / double(2 * tp + fp + fn);
    ap_sum += average_precision(scores, y);
  }
  out.a_acc = double(correct_cells) / double(n * m);
  if (included > 0) {
    out.a_auc = auc_sum / included;
    out.a_f1 = f1_sum / included;
    out.m_ap = ap_sum / included;
  }
  return out;
}

}  // namespace mrg
