#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "semfuse/semfuse.hpp"

namespace semfuse::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// Values bounded away from zero, so a step of `gap` never crosses a kink at 0.
inline Tensor<double> random_off_zero(const Shape& shape, Rng& rng, double gap = 0.05) {
  Tensor<double> t(shape);
  for (auto& v : t.storage()) {
    const double m = rng.uniform(gap, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

inline Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.pixels()) v = rng.uniform();
  return img;
}

inline ImagePair random_pair(std::size_t size, Rng& rng, int classes = 4, const std::string& id = "p") {
  Image ir = random_image(size, size, rng);
  RgbImage vis(size, size);
  for (auto& v : vis.data()) v = rng.uniform();
  LabelMap labels(size, size);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(rng.integer(0, classes - 1));
  return ImagePair(id, std::move(ir), std::move(vis), std::move(labels));
}

struct GradCheckResult {
  double analytic = 0.0;
  double numeric = 0.0;
  bool crosses_kink = false;  // the stencil straddles a branch change of some non-smooth op
  double relative_error() const {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    return scale == 0.0 ? 0.0 : std::abs(analytic - numeric) / scale;
  }
};

/// Central difference of `loss` with respect to entry `index` of `param`, beside the analytic value.
inline GradCheckResult check_entry(const std::function<Var<double>()>& loss, Var<double> param, std::size_t index,
                                   double step = 1e-3) {
  param.zero_grad();
  GradCheckResult r;
  std::vector<std::uint32_t> branches[3];
  double& x = param.mutable_value()[index];
  const double saved = x;
  double values[3];
  const double at[3] = {saved, saved + step, saved - step};
  for (int i = 0; i < 3; ++i) {
    x = at[i];
    ops::BranchTrace trace;
    const auto l = loss();
    values[i] = l.item();
    branches[i] = trace.branches();
    if (i == 0) {
      backward(l);
      r.analytic = param.grad()[index];
    }
  }
  x = saved;
  r.numeric = (values[1] - values[2]) / (2.0 * step);
  r.crosses_kink = branches[1] != branches[0] || branches[2] != branches[0];
  return r;
}

/// Largest relative error over every entry of every parameter.
inline double max_relative_error(const std::function<Var<double>()>& loss, const std::vector<Var<double>>& params,
                                 double step = 1e-5, double floor = 1e-8) {
  double worst = 0.0;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.value().size(); ++i) {
      const auto r = check_entry(loss, p, i, step);
      if (std::max(std::abs(r.analytic), std::abs(r.numeric)) > floor) worst = std::max(worst, r.relative_error());
    }
  return worst;
}

/// Scalar probe sum(x * weights) that gives every output element a distinct gradient.
inline Var<double> probe(const Var<double>& x, const Tensor<double>& weights) {
  return ops::mean(ops::mul(x, Var<double>::constant(weights)));
}

}  // namespace semfuse::testing
