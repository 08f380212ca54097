#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "meshtex/autodiff.hpp"
#include "meshtex/errors.hpp"

namespace meshtex {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Parameters are leaf Vars updated in place.
template <typename T>
class Adam {
 public:
  Adam(std::vector<ad::Var<T>> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      first_.emplace_back(p.rows(), p.cols());
      second_.emplace_back(p.rows(), p.cols());
    }
  }

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }
  long steps() const { return step_; }

  void step(std::span<const ad::Var<T>> grads) {
    if (grads.size() != params_.size()) throw ShapeError("Adam::step: one gradient per parameter required");
    ++step_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    const T lr = static_cast<T>(options_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(options_.epsilon);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const ad::Matrix<T>& g = grads[i].value();
      ad::Matrix<T>& value = params_[i].mutable_value();
      if (g.size() != value.size()) throw ShapeError("Adam::step: gradient shape mismatch");
      ad::Matrix<T>& m = first_[i];
      ad::Matrix<T>& v = second_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        value[j] -= lr * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
      }
    }
  }

 private:
  std::vector<ad::Var<T>> params_;
  AdamOptions options_;
  std::vector<ad::Matrix<T>> first_;
  std::vector<ad::Matrix<T>> second_;
  long step_ = 0;
};

}  // namespace meshtex
