#pragma once

#include "mrg/tensor.hpp"

namespace mrg {

// Long-tailed multi-label summary. aAUC / aF1 / mAP are macro averages over
// labels that have both classes present in the batch; labels with a single
// class are excluded from those averages (but still count in the micro aACC)
// and reported in excluded_labels. aACC is micro cell accuracy at the 0.5
// threshold.
struct MultilabelMetrics {
  double a_auc = 0.0;
  double a_f1 = 0.0;
  double a_acc = 0.0;
  double m_ap = 0.0;
  int excluded_labels = 0;
};

// probabilities and labels are [batch, n_labels]; labels hold 0/1.
MultilabelMetrics compute_multilabel_metrics(const MatrixOf<double>& probabilities,
                                             const MatrixOf<double>& labels,
                                             double threshold = 0.5);

}  // namespace mrg
