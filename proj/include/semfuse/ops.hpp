#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "semfuse/autograd.hpp"

// Differentiable primitives over Var<T>. Feature maps are (B, C, H, W); token
// matrices are (B, N, C).
namespace semfuse::ops {

/// While alive, collects the branch taken by every non-smooth op run on this thread. Two
/// evaluations with equal traces lie on the same differentiable piece of the graph.
class BranchTrace {
 public:
  BranchTrace() : previous_(slot()) { slot() = this; }
  ~BranchTrace() { slot() = previous_; }
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  static BranchTrace* active() { return slot(); }
  void record(std::uint32_t branch) { branches_.push_back(branch); }
  const std::vector<std::uint32_t>& branches() const { return branches_; }

 private:
  static BranchTrace*& slot() {
    thread_local BranchTrace* current = nullptr;
    return current;
  }
  BranchTrace* previous_;
  std::vector<std::uint32_t> branches_;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank)
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  auto& pg = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
}

// Column matrix of shape (C*k*k, H*W) for a stride-1 convolution with symmetric zero padding.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t k, std::size_t pad,
            T* col) {
  const long h = static_cast<long>(height), w = static_cast<long>(width), p = static_cast<long>(pad);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* xc = x + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * height * width;
        const long dy = static_cast<long>(ky) - p, dx = static_cast<long>(kx) - p;
        for (long y = 0; y < h; ++y) {
          const long sy = y + dy;
          T* out = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, T{0});
            continue;
          }
          const T* src = xc + sy * w;
          for (long xx = 0; xx < w; ++xx) {
            const long sx = xx + dx;
            out[xx] = (sx >= 0 && sx < w) ? src[sx] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t k,
                std::size_t pad, T* x) {
  const long h = static_cast<long>(height), w = static_cast<long>(width), p = static_cast<long>(pad);
  for (std::size_t c = 0; c < channels; ++c) {
    T* xc = x + c * height * width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * height * width;
        const long dy = static_cast<long>(ky) - p, dx = static_cast<long>(kx) - p;
        for (long y = 0; y < h; ++y) {
          const long sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const T* in = row + y * w;
          T* dst = xc + sy * w;
          const long lo = std::max(0L, -dx), hi = std::min(w, w - dx);
          for (long xx = lo; xx < hi; ++xx) dst[xx + dx] += in[xx];
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& p : n.parents) detail::accumulate(*p, n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const bool a_grad = a.requires_grad(), b_grad = b.requires_grad();
  return make_result<T>(std::move(out), {a, b}, [a_grad, b_grad](Node<T>& n) {
    if (a_grad) detail::accumulate(n.parent(0), n.grad);
    if (b_grad) {
      auto& pg = n.parent(1).ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pg[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a.requires_grad()) {
      auto& g = a.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      auto& g = b.node()->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a.value()[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
  });
}

/// Element-wise mean of two equally shaped tensors.
template <typename T>
Var<T> average(const Var<T>& a, const Var<T>& b) {
  return scale(add(a, b), T{0.5});
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope = T{0.2}) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v > T{0} ? v : slope * v;
  if (auto* trace = BranchTrace::active())
    for (const T v : x.value().values()) trace->record(v > T{0});
  return make_result<T>(std::move(out), {x}, [slope](Node<T>& n) {
    auto& p = n.parent(0);
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p.value[i] > T{0} ? n.grad[i] : slope * n.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T{0});
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = T{1} / (T{1} + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i] * (T{1} - n.value[i]);
  });
}

template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = std::max(v, lo);
  if (auto* trace = BranchTrace::active())
    for (const T v : x.value().values()) trace->record(v > lo);
  return make_result<T>(std::move(out), {x}, [lo](Node<T>& n) {
    auto& p = n.parent(0);
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > lo) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> reciprocal(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = T{1} / v;
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i] * n.value[i] * n.value[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

/// Mean over all elements, as a one-element tensor.
template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t count = x.value().size();
  T acc{0};
  for (T v : x.value().values()) acc += v;
  Tensor<T> out(Shape{1}, acc / static_cast<T>(count));
  return make_result<T>(std::move(out), {x}, [count](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    const T share = n.grad[0] / static_cast<T>(count);
    for (auto& v : g.storage()) v += share;
  });
}

/// Weighted sum of one-element tensors.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  T acc{0};
  for (std::size_t i = 0; i < terms.size(); ++i) acc += weights[i] * terms[i].item();
  Tensor<T> out(Shape{1}, acc);
  std::vector<bool> live;
  for (const auto& t : terms) live.push_back(t.requires_grad());
  return make_result<T>(std::move(out), terms, [weights, live](Node<T>& n) {
    for (std::size_t i = 0; i < live.size(); ++i)
      if (live[i]) n.parent(i).ensure_grad()[0] += weights[i] * n.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Convolution and resampling

/// Stride-1 2-D convolution with zero padding. weight (Cout, Cin, k, k), bias (Cout).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t pad) {
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k)
    throw ShapeMismatch("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                        shape_string(x.shape()));
  if (bias.value().size() != cout) throw ShapeMismatch("conv2d: bias size mismatch");
  if (h + 2 * pad < k || w + 2 * pad < k || 2 * pad + 1 != k)
    throw ShapeMismatch("conv2d: only same-size convolutions are supported");

  const std::size_t hw = h * w, patch = cin * k * k;
  Tensor<T> out(Shape{batch, cout, h, w});
  AlignedVector<T> col(patch * hw);
  detail::ConstMatMap<T> wmat(weight.value().data(), cout, patch);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x.value().data() + b * cin * hw;
    T* ob = out.data() + b * cout * hw;
    detail::MatMap<T> omat(ob, cout, hw);
    if (k == 1) {
      omat.noalias() = wmat * detail::ConstMatMap<T>(xb, cin, hw);
    } else {
      detail::im2col(xb, cin, h, w, k, pad, col.data());
      omat.noalias() = wmat * detail::ConstMatMap<T>(col.data(), patch, hw);
    }
    for (std::size_t c = 0; c < cout; ++c) omat.row(c).array() += bias.value()[c];
  }

  return make_result<T>(std::move(out), {x, weight, bias}, [x, weight, bias, batch, cin, cout, h, w, k, pad](Node<T>& n) {
    const std::size_t hw = h * w, patch = cin * k * k;
    AlignedVector<T> col(k == 1 ? 0 : patch * hw), dcol(patch * hw);
    detail::ConstMatMap<T> wmat(weight.value().data(), cout, patch);
    T* dw = weight.requires_grad() ? weight.node()->ensure_grad().data() : nullptr;
    T* db = bias.requires_grad() ? bias.node()->ensure_grad().data() : nullptr;
    T* dx = x.requires_grad() ? x.node()->ensure_grad().data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      detail::ConstMatMap<T> gmat(n.grad.data() + b * cout * hw, cout, hw);
      const T* xb = x.value().data() + b * cin * hw;
      if (dw) {
        detail::MatMap<T> dwmat(dw, cout, patch);
        if (k == 1) {
          dwmat.noalias() += gmat * detail::ConstMatMap<T>(xb, cin, hw).transpose();
        } else {
          detail::im2col(xb, cin, h, w, k, pad, col.data());
          dwmat.noalias() += gmat * detail::ConstMatMap<T>(col.data(), patch, hw).transpose();
        }
      }
      if (db)
        for (std::size_t c = 0; c < cout; ++c) db[c] += gmat.row(c).sum();
      if (dx) {
        if (k == 1) {
          detail::MatMap<T>(dx + b * cin * hw, cin, hw).noalias() += wmat.transpose() * gmat;
        } else {
          detail::MatMap<T>(dcol.data(), patch, hw).noalias() = wmat.transpose() * gmat;
          detail::col2im_add(dcol.data(), cin, h, w, k, pad, dx + b * cin * hw);
        }
      }
    }
  });
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in raster order.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "max_pool2");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeMismatch("max_pool2: spatial dims must be even, got " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  const T* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = p * h * w + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * h * w + (2 * y + dy) * w + 2 * xx + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (auto* trace = BranchTrace::active())
    for (const auto a : argmax) trace->record(a);
  return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += n.grad[i];
  });
}

namespace detail {
// Source taps of a 2x bilinear upsample with half-pixel centers, clamped at the borders.
struct UpsampleTap {
  std::size_t lo, hi;
  double w_lo, w_hi;
};

inline std::vector<UpsampleTap> upsample_taps(std::size_t in) {
  std::vector<UpsampleTap> taps(2 * in);
  for (std::size_t o = 0; o < 2 * in; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::max(src, 0.0);
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[o] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}
}  // namespace detail

/// Bilinear 2x upsampling (half-pixel centers, edge clamped).
template <typename T>
Var<T> upsample_bilinear2(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "upsample_bilinear2");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto ty = detail::upsample_taps(h);
  const auto tx = detail::upsample_taps(w);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), oh, ow});
  const T* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* ip = in + p * h * w;
    T* op = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const auto& a = ty[y];
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const auto& b = tx[xx];
        op[y * ow + xx] = static_cast<T>(a.w_lo * (b.w_lo * ip[a.lo * w + b.lo] + b.w_hi * ip[a.lo * w + b.hi]) +
                                         a.w_hi * (b.w_lo * ip[a.hi * w + b.lo] + b.w_hi * ip[a.hi * w + b.hi]));
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [planes, h, w, ty, tx](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    const std::size_t oh = 2 * h, ow = 2 * w;
    for (std::size_t p = 0; p < planes; ++p) {
      T* gp = g.data() + p * h * w;
      const T* op = n.grad.data() + p * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        const auto& a = ty[y];
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const auto& b = tx[xx];
          const T v = op[y * ow + xx];
          gp[a.lo * w + b.lo] += static_cast<T>(a.w_lo * b.w_lo) * v;
          gp[a.lo * w + b.hi] += static_cast<T>(a.w_lo * b.w_hi) * v;
          gp[a.hi * w + b.lo] += static_cast<T>(a.w_hi * b.w_lo) * v;
          gp[a.hi * w + b.hi] += static_cast<T>(a.w_hi * b.w_hi) * v;
        }
      }
    }
  });
}

/// Channel concatenation of two maps with equal batch and spatial dims.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a.shape(), 4, "concat_channels");
  detail::require_rank(b.shape(), 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeMismatch("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{batch, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(a.value().data() + n * ca * hw, ca * hw, out.data() + n * (ca + cb) * hw);
    std::copy_n(b.value().data() + n * cb * hw, cb * hw, out.data() + n * (ca + cb) * hw + ca * hw);
  }
  return make_result<T>(std::move(out), {a, b}, [a, b, batch, ca, cb, hw](Node<T>& n) {
    for (std::size_t i = 0; i < batch; ++i) {
      const T* g = n.grad.data() + i * (ca + cb) * hw;
      if (a.requires_grad()) {
        T* ga = a.node()->ensure_grad().data() + i * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) ga[j] += g[j];
      }
      if (b.requires_grad()) {
        T* gb = b.node()->ensure_grad().data() + i * cb * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) gb[j] += g[ca * hw + j];
      }
    }
  });
}

/// Replicates a single-channel map `copies` times along the channel axis.
template <typename T>
Var<T> repeat_channels(const Var<T>& x, std::size_t copies) {
  detail::require_rank(x.shape(), 4, "repeat_channels");
  if (x.dim(1) != 1) throw ShapeMismatch("repeat_channels expects one channel");
  const std::size_t batch = x.dim(0), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, copies, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < copies; ++c)
      std::copy_n(x.value().data() + b * hw, hw, out.data() + (b * copies + c) * hw);
  return make_result<T>(std::move(out), {x}, [batch, copies, hw](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < copies; ++c)
        for (std::size_t i = 0; i < hw; ++i) g[b * hw + i] += n.grad[(b * copies + c) * hw + i];
  });
}

// ---------------------------------------------------------------------------
// Token-matrix operations

/// (B, C, h, w) -> (B, N, C) with N = h*w.
template <typename T>
Var<T> to_tokens(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "to_tokens");
  const std::size_t batch = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, n, c});
  for (std::size_t b = 0; b < batch; ++b)
    detail::MatMap<T>(out.data() + b * n * c, n, c) =
        detail::ConstMatMap<T>(x.value().data() + b * c * n, c, n).transpose();
  return make_result<T>(std::move(out), {x}, [batch, c, n](Node<T>& node) {
    auto& g = node.parent(0).ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      detail::MatMap<T>(g.data() + b * c * n, c, n) +=
          detail::ConstMatMap<T>(node.grad.data() + b * n * c, n, c).transpose();
  });
}

/// (B, N, C) -> (B, C, h, w). Inverse of to_tokens.
template <typename T>
Var<T> from_tokens(const Var<T>& x, std::size_t h, std::size_t w) {
  detail::require_rank(x.shape(), 3, "from_tokens");
  const std::size_t batch = x.dim(0), n = x.dim(1), c = x.dim(2);
  if (n != h * w) throw ShapeMismatch("from_tokens: token count does not match h*w");
  Tensor<T> out(Shape{batch, c, h, w});
  for (std::size_t b = 0; b < batch; ++b)
    detail::MatMap<T>(out.data() + b * c * n, c, n) =
        detail::ConstMatMap<T>(x.value().data() + b * n * c, n, c).transpose();
  return make_result<T>(std::move(out), {x}, [batch, c, n](Node<T>& node) {
    auto& g = node.parent(0).ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      detail::MatMap<T>(g.data() + b * n * c, n, c) +=
          detail::ConstMatMap<T>(node.grad.data() + b * c * n, c, n).transpose();
  });
}

/// Per-token affine map: (B, N, Cin) x (Cin, Cout) + bias(Cout).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  detail::require_rank(x.shape(), 3, "linear input");
  detail::require_rank(weight.shape(), 2, "linear weight");
  const std::size_t batch = x.dim(0), n = x.dim(1), cin = x.dim(2), cout = weight.dim(1);
  if (weight.dim(0) != cin || bias.value().size() != cout)
    throw ShapeMismatch("linear: weight " + shape_string(weight.shape()) + " incompatible with " +
                        shape_string(x.shape()));
  Tensor<T> out(Shape{batch, n, cout});
  detail::ConstMatMap<T> wmat(weight.value().data(), cin, cout);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bvec(bias.value().data(), cout);
  detail::MatMap<T> omat(out.data(), batch * n, cout);
  omat.noalias() = detail::ConstMatMap<T>(x.value().data(), batch * n, cin) * wmat;
  omat.rowwise() += bvec;
  return make_result<T>(std::move(out), {x, weight, bias}, [x, weight, bias, batch, n, cin, cout](Node<T>& node) {
    detail::ConstMatMap<T> g(node.grad.data(), batch * n, cout);
    if (weight.requires_grad())
      detail::MatMap<T>(weight.node()->ensure_grad().data(), cin, cout).noalias() +=
          detail::ConstMatMap<T>(x.value().data(), batch * n, cin).transpose() * g;
    if (bias.requires_grad()) {
      auto& gb = bias.node()->ensure_grad();
      for (std::size_t c = 0; c < cout; ++c) gb[c] += g.col(c).sum();
    }
    if (x.requires_grad())
      detail::MatMap<T>(x.node()->ensure_grad().data(), batch * n, cin).noalias() +=
          g * detail::ConstMatMap<T>(weight.value().data(), cin, cout).transpose();
  });
}

/// Softmax over the token axis (axis 1) of a (B, N, C) tensor: each column sums to one.
template <typename T>
Var<T> softmax_tokens(const Var<T>& x) {
  detail::require_rank(x.shape(), 3, "softmax_tokens");
  const std::size_t batch = x.dim(0), n = x.dim(1), c = x.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    detail::ConstMatMap<T> in(x.value().data() + b * n * c, n, c);
    detail::MatMap<T> o(out.data() + b * n * c, n, c);
    for (std::size_t j = 0; j < c; ++j) {
      const T mx = in.col(j).maxCoeff();
      o.col(j) = (in.col(j).array() - mx).exp();
      o.col(j) /= o.col(j).sum();
    }
  }
  return make_result<T>(std::move(out), {x}, [batch, n, c](Node<T>& node) {
    auto& g = node.parent(0).ensure_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      detail::ConstMatMap<T> y(node.value.data() + b * n * c, n, c);
      detail::ConstMatMap<T> dy(node.grad.data() + b * n * c, n, c);
      detail::MatMap<T> dx(g.data() + b * n * c, n, c);
      for (std::size_t j = 0; j < c; ++j) {
        const T dot = y.col(j).dot(dy.col(j));
        dx.col(j).array() += y.col(j).array() * (dy.col(j).array() - dot);
      }
    }
  });
}

/// Batched matrix product of (B, M, K) and (B, K, P), with optional transposes.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  detail::require_rank(a.shape(), 3, "bmm");
  detail::require_rank(b.shape(), 3, "bmm");
  const std::size_t batch = a.dim(0);
  const std::size_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const std::size_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const std::size_t kb = trans_b ? bc : br, p = trans_b ? br : bc;
  if (b.dim(0) != batch || k != kb)
    throw ShapeMismatch("bmm: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> out(Shape{batch, m, p});
  for (std::size_t i = 0; i < batch; ++i) {
    detail::ConstMatMap<T> am(a.value().data() + i * ar * ac, ar, ac);
    detail::ConstMatMap<T> bm(b.value().data() + i * br * bc, br, bc);
    detail::MatMap<T> om(out.data() + i * m * p, m, p);
    if (!trans_a && !trans_b) om.noalias() = am * bm;
    else if (trans_a && !trans_b) om.noalias() = am.transpose() * bm;
    else if (!trans_a && trans_b) om.noalias() = am * bm.transpose();
    else om.noalias() = am.transpose() * bm.transpose();
  }
  return make_result<T>(std::move(out), {a, b}, [a, b, batch, ar, ac, br, bc, m, p, trans_a, trans_b](Node<T>& node) {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::ConstMatMap<T> g(node.grad.data() + i * m * p, m, p);
      detail::ConstMatMap<T> am(a.value().data() + i * ar * ac, ar, ac);
      detail::ConstMatMap<T> bm(b.value().data() + i * br * bc, br, bc);
      // Gradients of op(A) and op(B), mapped back through the transposes.
      if (a.requires_grad()) {
        detail::MatMap<T> ga(a.node()->ensure_grad().data() + i * ar * ac, ar, ac);
        if (!trans_a && !trans_b) ga.noalias() += g * bm.transpose();
        else if (!trans_a && trans_b) ga.noalias() += g * bm;
        else if (trans_a && !trans_b) ga.noalias() += bm * g.transpose();
        else ga.noalias() += bm.transpose() * g.transpose();
      }
      if (b.requires_grad()) {
        detail::MatMap<T> gb(b.node()->ensure_grad().data() + i * br * bc, br, bc);
        if (!trans_a && !trans_b) gb.noalias() += am.transpose() * g;
        else if (trans_a && !trans_b) gb.noalias() += am * g;
        else if (!trans_a && trans_b) gb.noalias() += g.transpose() * am;
        else gb.noalias() += g.transpose() * am.transpose();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling and gating helpers for the channel/spatial attention variants

/// Global average pool: (B, C, h, w) -> (B, 1, C).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, 1, c});
  for (std::size_t i = 0; i < batch * c; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < hw; ++j) acc += x.value()[i * hw + j];
    out[i] = acc / static_cast<T>(hw);
  }
  return make_result<T>(std::move(out), {x}, [batch, c, hw](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t i = 0; i < batch * c; ++i) {
      const T share = n.grad[i] / static_cast<T>(hw);
      for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += share;
    }
  });
}

/// Broadcasts a per-channel gate (B, 1, C) to (B, C, h, w).
template <typename T>
Var<T> expand_channel_gate(const Var<T>& gate, std::size_t h, std::size_t w) {
  detail::require_rank(gate.shape(), 3, "expand_channel_gate");
  const std::size_t batch = gate.dim(0), c = gate.dim(2), hw = h * w;
  Tensor<T> out(Shape{batch, c, h, w});
  for (std::size_t i = 0; i < batch * c; ++i) std::fill_n(out.data() + i * hw, hw, gate.value()[i]);
  return make_result<T>(std::move(out), {gate}, [batch, c, hw](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t i = 0; i < batch * c; ++i) {
      T acc{0};
      for (std::size_t j = 0; j < hw; ++j) acc += n.grad[i * hw + j];
      g[i] += acc;
    }
  });
}

/// Channel-wise mean and max stacked into (B, 2, h, w).
template <typename T>
Var<T> channel_mean_max(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "channel_mean_max");
  const std::size_t batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{batch, 2, x.dim(2), x.dim(3)});
  std::vector<std::uint32_t> argmax(batch * hw);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < hw; ++j) {
      T acc{0};
      std::size_t best = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T v = x.value()[(b * c + ch) * hw + j];
        acc += v;
        if (v > x.value()[(b * c + best) * hw + j]) best = ch;
      }
      out[(b * 2) * hw + j] = acc / static_cast<T>(c);
      out[(b * 2 + 1) * hw + j] = x.value()[(b * c + best) * hw + j];
      argmax[b * hw + j] = static_cast<std::uint32_t>(best);
    }
  }
  if (auto* trace = BranchTrace::active())
    for (const auto a : argmax) trace->record(a);
  return make_result<T>(std::move(out), {x}, [batch, c, hw, argmax = std::move(argmax)](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < hw; ++j) {
        const T share = n.grad[(b * 2) * hw + j] / static_cast<T>(c);
        for (std::size_t ch = 0; ch < c; ++ch) g[(b * c + ch) * hw + j] += share;
        g[(b * c + argmax[b * hw + j]) * hw + j] += n.grad[(b * 2 + 1) * hw + j];
      }
  });
}

/// Broadcasts a spatial gate (B, 1, h, w) across `channels`.
template <typename T>
Var<T> expand_spatial_gate(const Var<T>& gate, std::size_t channels) {
  detail::require_rank(gate.shape(), 4, "expand_spatial_gate");
  if (gate.dim(1) != 1) throw ShapeMismatch("expand_spatial_gate expects one channel");
  const std::size_t batch = gate.dim(0), hw = gate.dim(2) * gate.dim(3);
  Tensor<T> out(Shape{batch, channels, gate.dim(2), gate.dim(3)});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(gate.value().data() + b * hw, hw, out.data() + (b * channels + c) * hw);
  return make_result<T>(std::move(out), {gate}, [batch, channels, hw](Node<T>& n) {
    auto& g = n.parent(0).ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < hw; ++j) g[b * hw + j] += n.grad[(b * channels + c) * hw + j];
  });
}

}  // namespace semfuse::ops
