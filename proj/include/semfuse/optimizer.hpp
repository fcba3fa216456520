#pragma once

#include <cmath>
#include <vector>

#include "semfuse/parameters.hpp"

namespace semfuse {

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moments over a fixed list of parameters.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, AdamSettings settings) : params_(std::move(params)), settings_(settings) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value().size(), 0.0);
      v_.emplace_back(p.value().size(), 0.0);
    }
  }

  const AdamSettings& settings() const { return settings_; }
  long steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// One update from the gradients currently held by the parameters.
  void step() {
    ++t_;
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].mutable_value();
      const auto& grad = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = grad[j];
        m[j] = b1 * m[j] + (1.0 - b1) * g;
        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
        const double mhat = m[j] / c1, vhat = v[j] / c2;
        value[j] = static_cast<T>(value[j] - settings_.lr * mhat / (std::sqrt(vhat) + settings_.eps));
      }
    }
  }

  /// Euclidean norm of all gradients together.
  double grad_norm() const {
    double acc = 0.0;
    for (const auto& p : params_)
      for (T g : p.grad().values()) acc += static_cast<double>(g) * g;
    return std::sqrt(acc);
  }

  /// Rescales gradients so their global norm is at most `max_norm`; returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (max_norm > 0 && norm > max_norm) {
      const T s = static_cast<T>(max_norm / norm);
      for (auto& p : params_)
        for (auto& g : p.mutable_grad().storage()) g *= s;
    }
    return norm;
  }

 private:
  std::vector<Var<T>> params_;
  AdamSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

template <typename T>
std::vector<Var<T>> parameter_vars(const ParameterSet<T>& set) {
  std::vector<Var<T>> out;
  for (const auto& p : set.items()) out.push_back(p.var);
  return out;
}

}  // namespace semfuse
