#pragma once

#include <cmath>
#include <vector>

#include "ridgegen/autodiff.hpp"

namespace ridgegen {

// Adam with moment buffers exposed for checkpointing. Defaults follow common
// GAN practice (no first-moment smoothing, heavy second-moment smoothing).
template <typename T>
class Adam {
 public:
  Adam() = default;

  explicit Adam(std::vector<Var<T>> params, double lr, double beta1 = 0.0, double beta2 = 0.99,
                double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.push_back(Tensor<T>::zeros(p.shape()));
      v_.push_back(Tensor<T>::zeros(p.shape()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      const Tensor<T>& g = params_[i].grad();
      if (!g.defined()) continue;
      Tensor<T>& p = params_[i].mutable_value();
      T* pm = m_[i].data();
      T* pv = v_[i].data();
      T* pp = p.data();
      const T* pg = g.data();
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        const double gj = static_cast<double>(pg[j]);
        const double mj = beta1_ * pm[j] + (1.0 - beta1_) * gj;
        const double vj = beta2_ * pv[j] + (1.0 - beta2_) * gj * gj;
        pm[j] = static_cast<T>(mj);
        pv[j] = static_cast<T>(vj);
        pp[j] -= static_cast<T>(lr_ * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  const std::vector<Var<T>>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  double lr_ = 1e-3;
  double beta1_ = 0.0;
  double beta2_ = 0.99;
  double eps_ = 1e-8;
  int64_t t_ = 0;
};

}  // namespace ridgegen
