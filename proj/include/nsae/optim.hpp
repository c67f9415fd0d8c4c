#pragma once

#include <vector>

#include "nsae/tensor.hpp"

namespace nsae {

/// SGD with momentum. Weight decay is folded into the gradient before the
/// momentum update:
///   g' = g + weight_decay * p;  v = momentum * v + g';  p = p - lr * v
template <class T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, T lr, T momentum = T(0),
      T weight_decay = T(0))
      : params_(std::move(params)), lr_(lr), momentum_(momentum),
        weight_decay_(weight_decay) {
    if (!(lr > T(0))) throw ConfigError("sgd: learning rate must be positive");
    if (momentum < T(0) || momentum >= T(1))
      throw ConfigError("sgd: momentum must be in [0, 1)");
    if (weight_decay < T(0))
      throw ConfigError("sgd: weight decay must be non-negative");
    velocity_.reserve(params_.size());
    for (const auto& p : params_)
      velocity_.emplace_back(p.size(), T(0));
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// One update over all parameters from their accumulated gradients.
  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].values();
      const auto& g = params_[i].grad();
      if (g.size() != p.size())
        throw NumericalError("sgd: parameter has no gradient");
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const T gj = g[j] + weight_decay_ * p[j];
        v[j] = momentum_ * v[j] + gj;
        p[j] -= lr_ * v[j];
      }
    }
  }

  const std::vector<Tensor<T>>& params() const { return params_; }
  T lr() const { return lr_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  T lr_, momentum_, weight_decay_;
};

}  // namespace nsae
