#include "dspl/optim.hpp"

#include <cmath>

namespace dspl {

void Sgd::step(std::span<Tensor* const> params) {
  if (velocity_.size() != params.size()) velocity_.assign(params.size(), {});
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    if (momentum_ == 0.0) {
      for (std::size_t i = 0; i < g.size(); ++i) p[i] -= lr_ * g[i];
      continue;
    }
    auto& vel = velocity_[k];
    if (vel.empty()) vel.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      p[i] -= lr_ * vel[i];
    }
  }
}

void Adam::step(std::span<Tensor* const> params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    if (m_[k].empty()) {
      m_[k].assign(g.size(), 0.0);
      v_[k].assign(g.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
    }
  }
}

}  // namespace dspl
