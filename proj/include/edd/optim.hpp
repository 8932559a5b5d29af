#pragma once

#include <edd/autodiff.hpp>

#include <cmath>
#include <vector>

namespace edd {

/// SGD with heavy-ball momentum: v = mu v + g; w -= lr v. A positive
/// `max_norm` rescales the joint gradient to at most that L2 norm.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Parameter<double>*> params, double lr, double momentum, double max_norm = 0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), max_norm_(max_norm) {
    for (auto* p : params_) velocity_.push_back(Tensor<double>::Vector::Zero(p->value.size()));
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    double scale = 1;
    if (max_norm_ > 0) {
      double sq = 0;
      for (auto* p : params_) sq += p->grad.values().squaredNorm();
      if (sq > max_norm_ * max_norm_) scale = max_norm_ / std::sqrt(sq);
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& v = velocity_[k];
      v = momentum_ * v + scale * params_[k]->grad.values();
      params_[k]->value.values() -= lr_ * v;
    }
  }

  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Parameter<double>*> params_;
  std::vector<Tensor<double>::Vector> velocity_;
  double lr_;
  double momentum_;
  double max_norm_;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::vector<Parameter<double>*> params, std::vector<double> lrs, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lrs_(std::move(lrs)), b1_(beta1), b2_(beta2), eps_(eps) {
    if (lrs_.size() != params_.size()) throw Error("adam: one learning rate per parameter");
    for (auto* p : params_) {
      m_.push_back(Tensor<double>::Vector::Zero(p->value.size()));
      v_.push_back(Tensor<double>::Vector::Zero(p->value.size()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_), c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto& g = params_[k]->grad.values();
      m_[k] = b1_ * m_[k] + (1 - b1_) * g;
      v_[k] = b2_ * v_[k] + (1 - b2_) * g.cwiseAbs2();
      auto mhat = m_[k].array() / c1;
      auto vhat = v_[k].array() / c2;
      params_[k]->value.values().array() -= lrs_[k] * mhat / (vhat.sqrt() + eps_);
    }
  }

 private:
  std::vector<Parameter<double>*> params_;
  std::vector<double> lrs_;
  std::vector<Tensor<double>::Vector> m_, v_;
  double b1_, b2_, eps_;
  int t_ = 0;
};

}  // namespace edd
