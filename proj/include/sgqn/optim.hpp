#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgqn/autodiff.hpp"
#include "sgqn/networks.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

// Adam over a subset of a ParamStore. Moments are kept in double so the
// update arithmetic is identical regardless of the parameter precision;
// loops run in fixed order for determinism.
template <typename T>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw std::invalid_argument("Adam: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw std::invalid_argument("Adam: betas must lie in [0,1)");
  }

  // Registers the parameter ids this optimizer owns and zero-initializes
  // their moment buffers.
  void attach(const ParamStore<T>& store, std::vector<size_t> ids) {
    ids_ = std::move(ids);
    m_.clear();
    v_.clear();
    for (size_t id : ids_) {
      if (id >= store.size())
        throw std::invalid_argument("Adam::attach: parameter id out of range");
      m_.push_back(Tensor<double>(store.tensors[id].shape));
      v_.push_back(Tensor<double>(store.tensors[id].shape));
    }
    t_ = 0;
  }

  // One update using gradients from `wrapped`, the store-aligned leaf vector
  // produced by Networks::wrap. A parameter whose leaf never received a
  // gradient is treated as having gradient zero.
  void step(ParamStore<T>& store, const std::vector<ad::Var<T>>& wrapped) {
    if (wrapped.size() != store.size())
      throw std::invalid_argument(
          "Adam::step: wrapped leaf vector does not match the store");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t k = 0; k < ids_.size(); ++k) {
      const size_t id = ids_[k];
      Tensor<T>& p = store.tensors[id];
      const ad::Var<T>& leaf = wrapped[id];
      const bool has_grad = leaf && leaf->grad_alloc;
      if (has_grad && leaf->grad.shape != p.shape)
        throw std::invalid_argument("Adam::step: gradient shape mismatch for " +
                                    store.names[id]);
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double g = has_grad ? double(leaf->grad[i]) : 0.0;
        double& m = m_[k][i];
        double& v = v_[k][i];
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p[i] = T(double(p[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  double lr() const { return lr_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  int64_t steps_taken() const { return t_; }
  const std::vector<size_t>& ids() const { return ids_; }

  // Moment state, exposed for checkpointing.
  std::vector<Tensor<double>>& moments_m() { return m_; }
  std::vector<Tensor<double>>& moments_v() { return v_; }
  const std::vector<Tensor<double>>& moments_m() const { return m_; }
  const std::vector<Tensor<double>>& moments_v() const { return v_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<size_t> ids_;
  std::vector<Tensor<double>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace sgqn
