#include "wplus/optim.hpp"

#include <cmath>

namespace wplus::optim {

template <typename T>
Adam<T>::Adam(std::vector<ad::Var<T>> params, AdamOptions opt) : Optimizer<T>(std::move(params)), opt_(opt) {
  for (const auto& p : this->params_) {
    m_.push_back(ad::Array<T>::Zero(p.size()));
    v_.push_back(ad::Array<T>::Zero(p.size()));
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  const T b1 = T(opt_.beta1), b2 = T(opt_.beta2);
  const T c1 = T(1 - std::pow(opt_.beta1, double(step_)));
  const T c2 = T(1 - std::pow(opt_.beta2, double(step_)));
  for (std::size_t i = 0; i < this->params_.size(); ++i) {
    auto& p = this->params_[i];
    if (p.node()->grad.size() == 0) continue;
    const auto& g = p.grad();
    m_[i] = b1 * m_[i] + (1 - b1) * g;
    v_[i] = b2 * v_[i] + (1 - b2) * g.square();
    p.value() -= T(opt_.lr) * (m_[i] / c1) / ((v_[i] / c2).sqrt() + T(opt_.eps));
  }
}

template <typename T>
Ranger<T>::Ranger(std::vector<ad::Var<T>> params, RangerOptions opt) : Optimizer<T>(std::move(params)), opt_(opt) {
  for (const auto& p : this->params_) {
    m_.push_back(ad::Array<T>::Zero(p.size()));
    v_.push_back(ad::Array<T>::Zero(p.size()));
    slow_.push_back(p.value());
  }
}

template <typename T>
void Ranger<T>::step() {
  ++step_;
  const double t = double(step_);
  const double b1 = opt_.beta1, b2 = opt_.beta2;
  const double b2t = std::pow(b2, t);
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  const double c1 = 1.0 - std::pow(b1, t);
  const bool rectified = rho_t > 5.0;
  double r = 0.0;
  if (rectified)
    r = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

  for (std::size_t i = 0; i < this->params_.size(); ++i) {
    auto& p = this->params_[i];
    if (p.node()->grad.size() == 0) continue;
    const auto& g = p.grad();
    m_[i] = T(b1) * m_[i] + T(1 - b1) * g;
    v_[i] = T(b2) * v_[i] + T(1 - b2) * g.square();
    if (opt_.weight_decay > 0) p.value() *= T(1 - opt_.lr * opt_.weight_decay);
    if (rectified) {
      const T denom_scale = T(std::sqrt(1.0 - b2t));
      p.value() -= T(opt_.lr * r / c1) * m_[i] / (v_[i].sqrt() / denom_scale + T(opt_.eps));
    } else {
      p.value() -= T(opt_.lr / c1) * m_[i];
    }
  }

  if (step_ % opt_.lookahead_k == 0) {
    for (std::size_t i = 0; i < this->params_.size(); ++i) {
      auto& p = this->params_[i];
      slow_[i] += T(opt_.lookahead_alpha) * (p.value() - slow_[i]);
      p.value() = slow_[i];
    }
  }
}

template class Adam<float>;
template class Adam<double>;
template class Ranger<float>;
template class Ranger<double>;

}  // namespace wplus::optim
