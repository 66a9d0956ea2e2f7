#pragma once

#include <vector>

#include "wplus/ad/var.hpp"

namespace wplus::optim {

/// Interface over a fixed set of leaves; step() consumes their accumulated grads.
template <typename T>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  virtual double learning_rate() const = 0;
  virtual void set_learning_rate(double lr) = 0;

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  const std::vector<ad::Var<T>>& params() const { return params_; }

 protected:
  explicit Optimizer(std::vector<ad::Var<T>> params) : params_(std::move(params)) {}
  std::vector<ad::Var<T>> params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam final : public Optimizer<T> {
 public:
  Adam(std::vector<ad::Var<T>> params, AdamOptions opt = {});
  void step() override;
  double learning_rate() const override { return opt_.lr; }
  void set_learning_rate(double lr) override { opt_.lr = lr; }

 private:
  AdamOptions opt_;
  long step_ = 0;
  std::vector<ad::Array<T>> m_, v_;
};

struct RangerOptions {
  double lr = 1e-3;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps = 1e-5;
  double weight_decay = 0.0;
  int lookahead_k = 6;
  double lookahead_alpha = 0.5;
};

/// Rectified Adam inner steps with lookahead averaging of slow weights.
template <typename T>
class Ranger final : public Optimizer<T> {
 public:
  Ranger(std::vector<ad::Var<T>> params, RangerOptions opt = {});
  void step() override;
  double learning_rate() const override { return opt_.lr; }
  void set_learning_rate(double lr) override { opt_.lr = lr; }
  long steps() const { return step_; }

 private:
  RangerOptions opt_;
  long step_ = 0;
  std::vector<ad::Array<T>> m_, v_, slow_;
};

extern template class Adam<float>;
extern template class Adam<double>;
extern template class Ranger<float>;
extern template class Ranger<double>;

}  // namespace wplus::optim
