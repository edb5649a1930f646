#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "asgcn/nn.hpp"
#include "asgcn/tape.hpp"

namespace asgcn {

// lr(epoch) = base * decay^floor(epoch / interval)
struct Schedule {
  double base_lr = 0.1;
  double decay = 0.1;
  std::size_t interval = 20;

  double lr(std::size_t epoch) const {
    return base_lr * std::pow(decay, static_cast<double>(epoch / interval));
  }
};

inline void require_finite_grads(const ParamList& params) {
  for (const Parameter* p : params)
    if (!p->grad.all_finite())
      throw NumericError("non-finite gradient in parameter '" + p->name + "'");
}

// Classical momentum: v <- mu v + g; w <- w - lr v.
class SgdOptimizer {
public:
  explicit SgdOptimizer(const ParamList& params, double momentum = 0.9)
      : momentum_(momentum) {
    for (const Parameter* p : params)
      velocity_.emplace_back(p->value.shape());
  }

  void step(const ParamList& params, double lr) {
    if (!(lr > 0.0)) throw ParameterError("sgd: lr must be positive");
    require_finite_grads(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      Tensor& v = velocity_[i];
      for (std::size_t k = 0; k < v.numel(); ++k) {
        v[k] = momentum_ * v[k] + p.grad[k];
        p.value[k] -= lr * v[k];
      }
    }
    ++step_count_;
  }

  std::size_t step_count() const { return step_count_; }
  std::vector<Tensor>& velocity() { return velocity_; }
  void set_step_count(std::size_t s) { step_count_ = s; }

private:
  double momentum_;
  std::vector<Tensor> velocity_;
  std::size_t step_count_ = 0;
};

// Adam with bias correction; defaults follow the usual constants.
class AdamOptimizer {
public:
  explicit AdamOptimizer(const ParamList& params, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(const ParamList& params, double lr) {
    if (!(lr > 0.0)) throw ParameterError("adam: lr must be positive");
    require_finite_grads(params);
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(beta1_, t);
    const double bc2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      for (std::size_t k = 0; k < p.value.numel(); ++k) {
        const double g = p.grad[k];
        m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
        v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        p.value[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::size_t step_count() const { return step_count_; }
  void set_step_count(std::size_t s) { step_count_ = s; }
  std::vector<Tensor>& m() { return m_; }
  std::vector<Tensor>& v() { return v_; }

private:
  double beta1_, beta2_, eps_;
  std::vector<Tensor> m_, v_;
  std::size_t step_count_ = 0;
};

}  // namespace asgcn
