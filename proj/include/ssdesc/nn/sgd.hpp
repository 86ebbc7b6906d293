#pragma once

#include <span>
#include <vector>

#include "ssdesc/nn/tensor.hpp"

namespace ssdesc::nn {

/// Classical momentum: v <- momentum * v - lr * g; w <- w + v.
template <typename T>
void sgd_momentum_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, T lr, T momentum) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw ShapeError("sgd step: weights, gradients and velocity differ in length");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grads[i];
    weights[i] += velocity[i];
  }
}

/// Owns the velocity buffers for a fixed parameter list.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(T lr, T momentum) : lr_(lr), momentum_(momentum) {}

  T learning_rate() const noexcept { return lr_; }
  void set_learning_rate(T lr) noexcept { lr_ = lr; }
  T momentum() const noexcept { return momentum_; }

  void step(std::span<Tensor<T>* const> params) {
    if (velocity_.empty()) {
      for (auto* p : params) velocity_.emplace_back(p->size(), T(0));
    }
    if (velocity_.size() != params.size()) throw ShapeError("sgd step: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      sgd_momentum_step<T>(params[i]->values(), params[i]->grad(), velocity_[i], lr_, momentum_);
    }
  }

  const std::vector<std::vector<T>>& velocity() const noexcept { return velocity_; }

 private:
  T lr_;
  T momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace ssdesc::nn
