#pragma once

#include <deque>
#include <vector>

#include "mrg/graph.hpp"
#include "mrg/model.hpp"
#include "mrg/tensor.hpp"
#include "mrg/vocab.hpp"

namespace mrg {

// FIFO queues of momentum-encoded unit projections used as extra contrastive
// negatives. Capacity 0 reduces the loss to purely in-batch negatives.
template <typename S>
struct ContrastiveState {
  int capacity = 256;
  std::deque<MatrixOf<S>> image_queue, text_queue;  // each entry [1, proj_dim]

  void push(std::deque<MatrixOf<S>>& q, const MatrixOf<S>& rows) {
    for (Index r = 0; r < rows.rows(); ++r) {
      q.push_back(rows.row(r));
      while (static_cast<int>(q.size()) > capacity) q.pop_front();
    }
    if (capacity <= 0) q.clear();
  }
};

namespace detail {

template <typename S>
MatrixOf<S> stack_with_queue(const MatrixOf<S>& momentum_batch,
                             const std::deque<MatrixOf<S>>& queue) {
  MatrixOf<S> out(momentum_batch.rows() + static_cast<Index>(queue.size()),
                  momentum_batch.cols());
  out.topRows(momentum_batch.rows()) = momentum_batch;
  Index at = momentum_batch.rows();
  for (const auto& row : queue) out.row(at++) = row;
  return out;
}

}  // namespace detail

// Symmetric InfoNCE at temperature tau. For sample i the candidate set is the
// current batch's momentum projections plus the queue; the positive is its own
// momentum pair. Both directions are averaged; the queues are updated after
// the loss expression is built.
template <typename S>
Tensor<S> itc_loss(const Tensor<S>& image_proj, const Tensor<S>& text_proj,
                   const MatrixOf<S>& image_proj_momentum, const MatrixOf<S>& text_proj_momentum,
                   const Tensor<S>& tau, ContrastiveState<S>& state) {
  const Index n = image_proj.rows();
  if (n < 1 || text_proj.rows() != n || image_proj_momentum.rows() != n ||
      text_proj_momentum.rows() != n)
    throw ContractError("itc_loss: batch projections misaligned");
  if (!(tau.item() > S(0))) throw ContractError("itc_loss: temperature must be positive");

  const Tensor<S> text_candidates(detail::stack_with_queue<S>(text_proj_momentum,
                                                              state.text_queue));
  const Tensor<S> image_candidates(detail::stack_with_queue<S>(image_proj_momentum,
                                                               state.image_queue));
  std::vector<int> targets(n);
  for (Index i = 0; i < n; ++i) targets[i] = static_cast<int>(i);

  Tensor<S> inv_tau = reciprocal(tau);
  Tensor<S> i2t = row_cross_entropy(mul(matmul(image_proj, transpose(text_candidates)), inv_tau),
                                    targets);
  Tensor<S> t2i = row_cross_entropy(mul(matmul(text_proj, transpose(image_candidates)), inv_tau),
                                    targets);
  Tensor<S> loss = scale(add(i2t, t2i), S(0.5));

  state.push(state.text_queue, text_proj_momentum);
  state.push(state.image_queue, image_proj_momentum);
  return loss;
}

// Two-way classification of multimodal [CLS] rows; labels are 1 for a matched
// pair, 0 for a mismatched one.
template <typename S>
Tensor<S> itm_loss(const Tensor<S>& multimodal_cls, const std::vector<int>& labels,
                   const Tensor<S>& head_w, const Tensor<S>& head_b) {
  if (static_cast<Index>(labels.size()) != multimodal_cls.rows())
    throw ContractError("itm_loss: label count does not match [CLS] rows");
  return row_cross_entropy(linear(multimodal_cls, head_w, head_b), labels);
}

// Mean autoregressive cross-entropy over non-[PAD] target steps.
template <typename S>
Tensor<S> lm_loss(const Tensor<S>& logits, const std::vector<int>& targets) {
  std::vector<int> effective = targets;
  bool any = false;
  for (auto& t : effective) {
    if (t == Vocabulary::kPad)
      t = -1;
    else
      any = true;
  }
  if (!any) throw ContractError("lm_loss: target is all [PAD]");
  return row_cross_entropy(logits, effective);
}

// Mean over label slots of binary cross-entropy; probabilities are clamped to
// [1e-7, 1 - 1e-7] so saturated predictions stay finite. positive_weight > 1
// up-weights the positive term (a plain rebalancing knob; default 1 is the
// unweighted definition).
template <typename S>
Tensor<S> bce_loss(const Tensor<S>& probabilities, const NodeLabelVector& labels,
                   S positive_weight = S(1)) {
  if (static_cast<std::size_t>(probabilities.size()) != labels.size())
    throw ContractError("bce_loss: probability/label sizes differ");
  MatrixOf<S> y(probabilities.rows(), probabilities.cols());
  for (Index i = 0; i < y.size(); ++i) y(i / y.cols(), i % y.cols()) = S(labels[i]);
  const Tensor<S> y_t(y);
  const Tensor<S> one_minus_y(MatrixOf<S>(MatrixOf<S>::Ones(y.rows(), y.cols()) - y));
  Tensor<S> p = clamp(probabilities, S(1e-7), S(1) - S(1e-7));
  Tensor<S> one_minus_p = add_const(scale(p, S(-1)), S(1));
  Tensor<S> ll =
      add(scale(mul(y_t, log(p)), positive_weight), mul(one_minus_y, log(one_minus_p)));
  return scale(mean(ll), S(-1));
}

template <typename S>
struct LossBreakdown {
  S l_itc = S(0), l_itm = S(0), l_lm = S(0), total = S(0);
  Tensor<S> total_tensor;
};

// The training objective is the plain unweighted sum of the three parts.
template <typename S>
LossBreakdown<S> total_loss(const Tensor<S>& itc, const Tensor<S>& itm, const Tensor<S>& lm) {
  LossBreakdown<S> out;
  out.l_itc = itc.item();
  out.l_itm = itm.item();
  out.l_lm = lm.item();
  out.total_tensor = add(add(itc, itm), lm);
  out.total = out.total_tensor.item();
  return out;
}

}  // namespace mrg
