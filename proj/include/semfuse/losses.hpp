#pragma once

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "semfuse/ops.hpp"
#include "semfuse/types.hpp"

namespace semfuse {

inline constexpr double kCorrEpsilon = 1e-8;
inline constexpr double kRegDenominatorFloor = 1e-3;

/// Scalar objective with a named breakdown of its parts.
template <typename T>
struct LossValue {
  Var<T> total;
  std::map<std::string, double> components;

  double value() const { return static_cast<double>(total.item()); }
};

/// Mean absolute deviation of `fused` from a fixed target of the same shape.
template <typename T>
Var<T> mean_abs_deviation(const Var<T>& fused, const Tensor<T>& target) {
  fused.value().require_same_shape(target, "mean_abs_deviation");
  const std::size_t n = target.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(fused.value()[i] - target[i]));
  if (auto* trace = ops::BranchTrace::active())
    for (std::size_t i = 0; i < n; ++i) {
      const T d = fused.value()[i] - target[i];
      trace->record(d > T{0} ? 2u : d < T{0} ? 0u : 1u);
    }
  Tensor<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(n)));
  return make_result<T>(std::move(out), {fused}, [target, n](Node<T>& node) {
    auto& p = node.parent(0);
    auto& g = p.ensure_grad();
    const T share = node.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = p.value[i] - target[i];
      if (d > T{0}) g[i] += share;
      else if (d < T{0}) g[i] -= share;
    }
  });
}

/// Warm-start objective toward the pixel-wise average of the sources.
template <typename T>
LossValue<T> l_ws_average(const Var<T>& fused, const Var<T>& ir, const Var<T>& vis) {
  ir.value().require_same_shape(vis.value(), "l_ws_average");
  Tensor<T> target = ir.value();
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (ir.value()[i] + vis.value()[i]) / T{2};
  LossValue<T> out{mean_abs_deviation(fused, target), {}};
  out.components["ws"] = out.value();
  return out;
}

/// Warm-start objective toward the pixel-wise maximum of the sources.
template <typename T>
LossValue<T> l_ws_max(const Var<T>& fused, const Var<T>& ir, const Var<T>& vis) {
  ir.value().require_same_shape(vis.value(), "l_ws_max");
  Tensor<T> target = ir.value();
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = std::max(ir.value()[i], vis.value()[i]);
  LossValue<T> out{mean_abs_deviation(fused, target), {}};
  out.components["ws"] = out.value();
  return out;
}

template <typename T>
LossValue<T> l_ws(WarmStartRule rule, const Var<T>& fused, const Var<T>& ir, const Var<T>& vis) {
  return rule == WarmStartRule::AVERAGE ? l_ws_average(fused, ir, vis) : l_ws_max(fused, ir, vis);
}

/// Per-image Pearson correlation of two (B, ...) tensors, returned as a (B) tensor.
///
/// r = cov(a, b) / (sqrt(var_a + eps) * sqrt(var_b + eps)), population moments.
template <typename T>
Var<T> correlation(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "correlation");
  const std::size_t batch = a.dim(0), n = a.value().size() / batch;
  struct Stats {
    double mean_a, mean_b, var_a, var_b, r;
  };
  std::vector<Stats> stats(batch);
  Tensor<T> out(Shape{batch});
  for (std::size_t i = 0; i < batch; ++i) {
    const T* pa = a.value().data() + i * n;
    const T* pb = b.value().data() + i * n;
    double ma = 0, mb = 0;
    for (std::size_t j = 0; j < n; ++j) {
      ma += pa[j];
      mb += pb[j];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double va = 0, vb = 0, cov = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double da = pa[j] - ma, db = pb[j] - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
    va /= static_cast<double>(n);
    vb /= static_cast<double>(n);
    cov /= static_cast<double>(n);
    const double r = cov / (std::sqrt(va + kCorrEpsilon) * std::sqrt(vb + kCorrEpsilon));
    stats[i] = {ma, mb, va, vb, r};
    out[i] = static_cast<T>(r);
  }
  return make_result<T>(std::move(out), {a, b}, [a, b, batch, n, stats](Node<T>& node) {
    for (std::size_t i = 0; i < batch; ++i) {
      const Stats& s = stats[i];
      const double g = node.grad[i];
      if (g == 0.0) continue;
      const double sa = std::sqrt(s.var_a + kCorrEpsilon), sb = std::sqrt(s.var_b + kCorrEpsilon);
      const T* pa = a.value().data() + i * n;
      const T* pb = b.value().data() + i * n;
      const double inv_n = 1.0 / static_cast<double>(n);
      if (a.requires_grad()) {
        T* ga = a.node()->ensure_grad().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double da = pa[j] - s.mean_a, db = pb[j] - s.mean_b;
          ga[j] += static_cast<T>(g * inv_n * (db / (sa * sb) - s.r * da / (s.var_a + kCorrEpsilon)));
        }
      }
      if (b.requires_grad()) {
        T* gb = b.node()->ensure_grad().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double da = pa[j] - s.mean_a, db = pb[j] - s.mean_b;
          gb[j] += static_cast<T>(g * inv_n * (da / (sa * sb) - s.r * db / (s.var_b + kCorrEpsilon)));
        }
      }
    }
  });
}

/// Pearson correlation of two images.
inline double corr(const Image& a, const Image& b) {
  if (!a.same_size(b)) throw ShapeMismatch("corr: image sizes differ");
  const auto va = Var<double>::constant(stack_images<double>({&a}));
  const auto vb = Var<double>::constant(stack_images<double>({&b}));
  return correlation(va, vb).item();
}

/// Per-image sum Corr(ir, f) + Corr(vis, f), shape (B).
template <typename T>
Var<T> correlation_sum(const Var<T>& fused, const Var<T>& ir, const Var<T>& vis) {
  return ops::add(correlation(ir, fused), correlation(vis, fused));
}

/// Correlation regularizer 1 / max(Corr(ir, f) + Corr(vis, f), delta), averaged over the batch.
template <typename T>
LossValue<T> l_reg(const Var<T>& fused, const Var<T>& ir, const Var<T>& vis) {
  for (const Var<T>* v : {&fused, &ir, &vis})
    if (!v->value().all_finite()) throw NonFiniteLoss("l_reg: non-finite input");
  const Var<T> denom = ops::clamp_min(correlation_sum(fused, ir, vis), static_cast<T>(kRegDenominatorFloor));
  LossValue<T> out{ops::mean(ops::reciprocal(denom)), {}};
  out.components["reg"] = out.value();
  return out;
}

/// Labels of a batch, one map per item.
using LabelBatch = std::vector<LabelMap>;

/// Mean cross-entropy over pixels whose label is not in `mask`.
template <typename T>
LossValue<T> l_sem(const Var<T>& logits, std::span<const LabelMap> labels, const std::set<int>& mask) {
  if (logits.shape().size() != 4 || logits.dim(0) != labels.size())
    throw ShapeMismatch("l_sem: logits " + shape_string(logits.shape()) + " vs " + std::to_string(labels.size()) +
                        " label maps");
  const std::size_t batch = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<int> flat(batch * hw, -1);
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b].height() != logits.dim(2) || labels[b].width() != logits.dim(3))
      throw ShapeMismatch("l_sem: label map size differs from logits");
    for (std::size_t j = 0; j < hw; ++j) {
      const int c = labels[b][j];
      if (c < 0 || static_cast<std::size_t>(c) >= k) throw LabelError("l_sem: label " + std::to_string(c) + " out of range");
      if (mask.count(c)) continue;
      flat[b * hw + j] = c;
      ++count;
    }
  }
  if (count == 0) throw MaskError("l_sem: every pixel is masked");

  // Softmax probabilities are kept for the backward pass.
  Tensor<T> probs(logits.shape());
  double acc = 0.0;
  const T* z = logits.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < hw; ++j) {
      const int c = flat[b * hw + j];
      if (c < 0) continue;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t q = 0; q < k; ++q) mx = std::max(mx, static_cast<double>(z[(b * k + q) * hw + j]));
      double sum = 0.0;
      for (std::size_t q = 0; q < k; ++q) sum += std::exp(static_cast<double>(z[(b * k + q) * hw + j]) - mx);
      for (std::size_t q = 0; q < k; ++q)
        probs[(b * k + q) * hw + j] = static_cast<T>(std::exp(static_cast<double>(z[(b * k + q) * hw + j]) - mx) / sum);
      acc += mx + std::log(sum) - static_cast<double>(z[(b * k + c) * hw + j]);
    }
  }
  Tensor<T> value(Shape{1}, static_cast<T>(acc / static_cast<double>(count)));
  auto total = make_result<T>(std::move(value), {logits},
                              [probs = std::move(probs), flat = std::move(flat), batch, k, hw, count](Node<T>& node) {
                                auto& g = node.parent(0).ensure_grad();
                                const T share = node.grad[0] / static_cast<T>(count);
                                for (std::size_t b = 0; b < batch; ++b)
                                  for (std::size_t j = 0; j < hw; ++j) {
                                    const int c = flat[b * hw + j];
                                    if (c < 0) continue;
                                    for (std::size_t q = 0; q < k; ++q) {
                                      const std::size_t idx = (b * k + q) * hw + j;
                                      g[idx] += share * (probs[idx] - (static_cast<int>(q) == c ? T{1} : T{0}));
                                    }
                                  }
                              });
  LossValue<T> out{total, {}};
  out.components["sem"] = out.value();
  return out;
}

/// Semantic-training objective L_sem + lambda * L_reg.
template <typename T>
LossValue<T> l_st(const Var<T>& logits, std::span<const LabelMap> labels, const Var<T>& fused, const Var<T>& ir,
                  const Var<T>& vis, double lambda, const std::set<int>& mask) {
  const auto sem = l_sem(logits, labels, mask);
  const auto reg = l_reg(fused, ir, vis);
  LossValue<T> out;
  if (lambda == 0.0) {
    out.total = sem.total;
  } else {
    out.total = ops::weighted_sum<T>({sem.total, reg.total}, {T{1}, static_cast<T>(lambda)});
  }
  out.components["sem"] = sem.value();
  out.components["reg"] = reg.value();
  return out;
}

}  // namespace semfuse
