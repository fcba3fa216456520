#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/autograd.hpp"
#include "semfuse/random.hpp"

namespace semfuse {

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
};

/// Ordered collection of named trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("duplicate parameter name " + name);
    auto v = Var<T>::parameter(std::move(init));
    params_.push_back({std::move(name), v});
    return v;
  }

  std::vector<NamedParameter<T>>& items() { return params_; }
  const std::vector<NamedParameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  Var<T> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.var;
    throw ConfigError("no parameter named " + name);
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.var.value().all_finite()) return false;
    return true;
  }

 private:
  std::vector<NamedParameter<T>> params_;
};

/// Uniform(-bound, bound) with bound = gain * sqrt(3 / fan_in).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  Tensor<T> t(std::move(shape));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Gain of a leaky rectifier with the given negative slope.
inline double leaky_gain(double slope) { return std::sqrt(2.0 / (1.0 + slope * slope)); }

}  // namespace semfuse
