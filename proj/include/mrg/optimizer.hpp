#pragma once

#include <vector>

#include "mrg/model.hpp"
#include "mrg/tensor.hpp"

namespace mrg {

// Adam with decoupled weight decay. Parameters without a gradient this step
// are left untouched.
template <typename S>
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-5;
  };

  AdamW(NamedParams<S> params, Options opt) : params_(std::move(params)), opt_(opt) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_.items) {
      m_.push_back(MatrixOf<S>::Zero(p.rows(), p.cols()));
      v_.push_back(MatrixOf<S>::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_.items) p.zero_grad();
  }

  void step() {
    ++t_;
    const S bc1 = S(1) - S(std::pow(opt_.beta1, t_));
    const S bc2 = S(1) - S(std::pow(opt_.beta2, t_));
    for (std::size_t i = 0; i < params_.items.size(); ++i) {
      auto& p = params_.items[i].second;
      if (!p.has_grad()) continue;
      const MatrixOf<S>& g = p.grad();
      m_[i] = S(opt_.beta1) * m_[i] + S(1 - opt_.beta1) * g;
      v_[i] = (S(opt_.beta2) * v_[i].array() + S(1 - opt_.beta2) * g.array().square()).matrix();
      const auto m_hat = m_[i].array() / bc1;
      const auto v_hat = v_[i].array() / bc2;
      p.value().array() -=
          S(opt_.lr) * (m_hat / (v_hat.sqrt() + S(opt_.eps)) +
                        S(opt_.weight_decay) * p.value().array());
    }
  }

  const NamedParams<S>& params() const { return params_; }

 private:
  NamedParams<S> params_;
  Options opt_;
  long t_ = 0;
  std::vector<MatrixOf<S>> m_, v_;
};

}  // namespace mrg
