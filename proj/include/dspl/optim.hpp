#pragma once

#include <span>
#include <vector>

#include "dspl/tensor.hpp"

namespace dspl {

class Optimizer {
 public:
  explicit Optimizer(double lr) : lr_(lr) {}
  virtual ~Optimizer() = default;

  /// Updates every parameter that carries a gradient; others are skipped.
  /// The parameter list must be the same (same order) on every call.
  virtual void step(std::span<Tensor* const> params) = 0;

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 protected:
  double lr_;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr, double momentum = 0.0) : Optimizer(lr), momentum_(momentum) {}
  void step(std::span<Tensor* const> params) override;

 private:
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<Tensor* const> params) override;

 private:
  double beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dspl
