#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "semfuse/types.hpp"

namespace semfuse {

/// Spatial frequency sqrt(RF^2 + CF^2) of neighbor differences along rows (RF) and columns (CF).
inline double spatial_frequency(const Image& img) {
  const std::size_t h = img.height(), w = img.width();
  if (h < 2 || w < 2) throw ShapeMismatch("spatial_frequency needs an image of at least 2x2");
  double rf = 0.0, cf = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 1; x < w; ++x) {
      const double d = img(y, x) - img(y, x - 1);
      rf += d * d;
    }
  for (std::size_t y = 1; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double d = img(y, x) - img(y - 1, x);
      cf += d * d;
    }
  rf /= static_cast<double>(h * (w - 1));
  cf /= static_cast<double>((h - 1) * w);
  return std::sqrt(rf + cf);
}

/// Average gradient: mean of sqrt((dx^2 + dy^2) / 2) with forward differences over the (H-1)x(W-1) interior.
inline double average_gradient(const Image& img) {
  const std::size_t h = img.height(), w = img.width();
  if (h < 2 || w < 2) throw ShapeMismatch("average_gradient needs an image of at least 2x2");
  double acc = 0.0;
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double dx = img(y, x + 1) - img(y, x);
      const double dy = img(y + 1, x) - img(y, x);
      acc += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return acc / static_cast<double>((h - 1) * (w - 1));
}

struct CurvePoint {
  double x;  // fraction of images
  double y;  // value not exceeded by that fraction
};

/// Empirical CDF, transposed: sorted v_1..v_n become (k/n, v_k).
inline std::vector<CurvePoint> cumulative_curve(std::vector<double> values) {
  if (values.empty()) throw EmptyDataset("cumulative_curve: empty value list");
  std::sort(values.begin(), values.end());
  std::vector<CurvePoint> out;
  out.reserve(values.size());
  const double n = static_cast<double>(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) out.push_back({static_cast<double>(k + 1) / n, values[k]});
  return out;
}

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count = 0)
      : k_(class_count), counts_(static_cast<std::size_t>(class_count) * class_count, 0) {}

  int class_count() const { return k_; }
  std::uint64_t operator()(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
  std::uint64_t& operator()(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw ShapeMismatch("confusion matrices of different class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

/// Adds one image's pixels to `cm`. Pixels whose truth equals `ignore_index` are skipped.
inline ConfusionMatrix& accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth,
                                   std::optional<int> ignore_index = std::nullopt) {
  if (pred.height() != truth.height() || pred.width() != truth.width())
    throw ShapeMismatch("accumulate: prediction and truth sizes differ");
  const int k = cm.class_count();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (ignore_index && t == *ignore_index) continue;
    if (t < 0 || t >= k || p < 0 || p >= k) throw LabelError("accumulate: class index out of range");
    ++cm(t, p);
  }
  return cm;
}

struct ClassScore {
  int class_index;
  double acc;  // recall TP / (TP + FN)
  double iou;  // TP / (TP + FP + FN)
  bool scored;  // false when the class has neither truth nor predicted pixels
};

struct SegmentationScores {
  std::vector<ClassScore> per_class;
  double macc = 0.0;
  double miou = 0.0;
};

/// Per-class recall and IoU, with means over the scored classes that occur in truth or prediction.
inline SegmentationScores class_scores(const ConfusionMatrix& cm, const std::vector<int>& scored_classes) {
  SegmentationScores out;
  const int k = cm.class_count();
  double acc_sum = 0.0, iou_sum = 0.0;
  int counted = 0;
  for (int c : scored_classes) {
    if (c < 0 || c >= k) throw LabelError("class_scores: class index out of range");
    std::uint64_t tp = cm(c, c), fn = 0, fp = 0;
    for (int j = 0; j < k; ++j) {
      if (j == c) continue;
      fn += cm(c, j);
      fp += cm(j, c);
    }
    ClassScore s{c, 0.0, 0.0, false};
    if (tp + fn + fp > 0) {
      s.scored = true;
      s.acc = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      s.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      acc_sum += s.acc;
      iou_sum += s.iou;
      ++counted;
    }
    out.per_class.push_back(s);
  }
  if (counted > 0) {
    out.macc = acc_sum / counted;
    out.miou = iou_sum / counted;
  }
  return out;
}

}  // namespace semfuse
