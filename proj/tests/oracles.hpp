#pragma once

// Plain-loop reference implementations, written independently of the library kernels.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "semfuse/semfuse.hpp"

namespace semfuse::oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix project(const Matrix& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t n = x.size(), cin = w.dim(0), cout = w.dim(1);
  Matrix out(n, std::vector<double>(cout));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = b[o];
      for (std::size_t c = 0; c < cin; ++c) acc += x[i][c] * w[c * cout + o];
      out[i][o] = acc;
    }
  return out;
}

/// Efficient attention of one image's tokens `x` (N x C): keys normalized column-wise by an
/// explicit exp/sum, then the N x N affinity Q K^T is formed and applied to V.
inline Matrix attention(const Matrix& x, const AttentionProjection<double>& p) {
  const Matrix q = project(x, p.w_q.value(), p.b_q.value());
  Matrix k = project(x, p.w_k.value(), p.b_k.value());
  const Matrix v = project(x, p.w_v.value(), p.b_v.value());
  const std::size_t n = x.size(), c = k[0].size();
  for (std::size_t j = 0; j < c; ++j) {
    double mx = -1e300;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, k[i][j]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(k[i][j] - mx);
    for (std::size_t i = 0; i < n; ++i) k[i][j] = std::exp(k[i][j] - mx) / z;
  }
  Matrix affinity(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < c; ++j) affinity[a][b] += q[a][j] * k[b][j];
  const std::size_t cv = v[0].size();
  Matrix out(n, std::vector<double>(cv, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t j = 0; j < cv; ++j) out[a][j] += affinity[a][b] * v[b][j];
  return out;
}

/// Tokens of image `b` of a (B, C, h, w) tensor: row = y * w + x.
inline Matrix tokens(const Tensor<double>& f, std::size_t b) {
  const std::size_t c = f.dim(1), h = f.dim(2), w = f.dim(3);
  Matrix out(h * w, std::vector<double>(c));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[y * w + x][ch] = f.at(b, ch, y, x);
  return out;
}

inline double l_ws_average(const Image& f, const Image& ir, const Image& vis) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += std::fabs(f[i] - 0.5 * (ir[i] + vis[i]));
  return acc / static_cast<double>(f.size());
}

inline double l_ws_max(const Image& f, const Image& ir, const Image& vis) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += std::fabs(f[i] - (ir[i] > vis[i] ? ir[i] : vis[i]));
  return acc / static_cast<double>(f.size());
}

/// Pearson correlation with population moments and eps added to each variance.
inline double corr(const Image& a, const Image& b, double eps = 1e-8) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return (sab / n) / (std::sqrt(saa / n + eps) * std::sqrt(sbb / n + eps));
}

inline double l_reg(const std::vector<Image>& f, const std::vector<Image>& ir, const std::vector<Image>& vis) {
  double acc = 0.0;
  for (std::size_t b = 0; b < f.size(); ++b) acc += 1.0 / std::max(oracle::corr(ir[b], f[b]) + oracle::corr(vis[b], f[b]), 1e-3);
  return acc / static_cast<double>(f.size());
}

/// Mean of -log softmax(logits)[label] over pixels whose label is not masked.
inline double l_sem(const Tensor<double>& logits, const std::vector<LabelMap>& labels, const std::set<int>& mask) {
  const std::size_t k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const int c = labels[b](y, x);
        if (mask.count(c)) continue;
        double z = 0.0;
        for (std::size_t q = 0; q < k; ++q) z += std::exp(logits.at(b, q, y, x));
        acc += -std::log(std::exp(logits.at(b, static_cast<std::size_t>(c), y, x)) / z);
        ++count;
      }
  return acc / static_cast<double>(count);
}

}  // namespace semfuse::oracle
