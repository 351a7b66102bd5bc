// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "datadream/autodiff.hpp"
#include "datadream/types.hpp"

#include <cmath>
#include <vector>

namespace datadream {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// lr(t) = lr0 * 0.5 * (1 + cos(pi * t / total)), reaching 0 at the last step
inline double cosine_annealed_lr(double base_lr, long step, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(frac, 1.0)));
}

// Decoupled-weight-decay Adam over a fixed list of leaf variables.
template <class S>
class AdamW {
 public:
  AdamW(std::vector<ag::Variable<S>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      m_.push_back(MatX<S>::Zero(p.rows(), p.cols()));
      v_.push_back(MatX<S>::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const MatX<S>& g = p.grad();
      m_[i] = static_cast<S>(cfg_.beta1) * m_[i] + static_cast<S>(1.0 - cfg_.beta1) * g;
      v_[i] = (static_cast<S>(cfg_.beta2) * v_[i].array() +
               static_cast<S>(1.0 - cfg_.beta2) * g.array().square())
                  .matrix();
      const auto mhat = (m_[i] / static_cast<S>(bc1)).array();
      const auto vhat = (v_[i] / static_cast<S>(bc2)).array();
      p.value().array() -= static_cast<S>(lr) * (mhat / (vhat.sqrt() + static_cast<S>(cfg_.eps)));
      if (cfg_.weight_decay > 0.0)
        p.value().array() -= static_cast<S>(lr * cfg_.weight_decay) * p.value().array();
    }
  }

  const std::vector<ag::Variable<S>>& params() const { return params_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<ag::Variable<S>> params_;
  AdamWConfig cfg_;
  std::vector<MatX<S>> m_, v_;
  long t_ = 0;
};

}  // namespace datadream
