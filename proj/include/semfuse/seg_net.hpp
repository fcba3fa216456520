#pragma once

#include <string>
#include <vector>

#include "semfuse/fusion_net.hpp"

namespace semfuse {

/// Small stride-8 encoder-decoder producing per-pixel class logits from a fused image.
///
/// The single-channel input is replicated to three channels. Widths are
/// w, 2w, 4w at the encoder levels and 8w at the bottleneck.
template <typename T>
class SegModel {
 public:
  static constexpr std::size_t kStride = 8;
  static constexpr int kLevels = 3;

  SegModel(int class_count, int width, std::uint64_t seed) : class_count_(class_count), width_(width) {
    if (class_count < 2) throw ConfigError("segmentation needs at least two classes");
    if (width < 1) throw ConfigError("segmentation width must be >= 1");
    Rng rng = Rng::derive(seed, 2);
    std::size_t cin = 3;
    for (int l = 0; l < kLevels; ++l) {
      encoder_.push_back(make_conv_block<T>(cin, level_channels(l), "seg.enc.l" + std::to_string(l), params_, rng));
      cin = level_channels(l);
    }
    bottleneck_ = make_conv_block<T>(cin, level_channels(kLevels), "seg.bottleneck", params_, rng);
    for (int l = 0; l < kLevels; ++l)
      decoder_.push_back(make_conv_block<T>(level_channels(l + 1) + level_channels(l), level_channels(l),
                                            "seg.dec.l" + std::to_string(l), params_, rng));
    const std::size_t k = static_cast<std::size_t>(class_count);
    head_w_ = params_.add("seg.head.weight", fan_in_uniform<T>({k, level_channels(0), 1, 1}, level_channels(0), rng));
    head_b_ = params_.add("seg.head.bias", Tensor<T>({k}));
  }

  explicit SegModel(const TrainConfig& config) : SegModel(config.class_count, config.seg_width, config.seed) {}

  SegModel(SegModel&&) noexcept = default;
  SegModel& operator=(SegModel&&) noexcept = default;
  SegModel(const SegModel&) = delete;
  SegModel& operator=(const SegModel&) = delete;

  SegModel clone(std::uint64_t seed = 0) const {
    SegModel copy(class_count_, width_, seed);
    for (std::size_t i = 0; i < params_.size(); ++i)
      copy.params_.items()[i].var.mutable_value() = params_.items()[i].var.value();
    return copy;
  }

  int class_count() const { return class_count_; }
  int width() const { return width_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  std::size_t level_channels(int level) const { return static_cast<std::size_t>(width_) << level; }

  /// Logits (B, K, H, W) for a fused batch (B, 1, H, W). Differentiable w.r.t. the input.
  Var<T> forward(const Var<T>& fused) const {
    if (fused.shape().size() != 4 || fused.dim(1) != 1)
      throw ShapeMismatch("seg forward expects (B,1,H,W), got " + shape_string(fused.shape()));
    if (fused.dim(2) % kStride || fused.dim(3) % kStride)
      throw ShapeMismatch("seg forward: spatial dims must be divisible by 8, got " + shape_string(fused.shape()));
    std::vector<Var<T>> skips;
    Var<T> x = ops::repeat_channels(fused, 3);
    for (int l = 0; l < kLevels; ++l) {
      x = apply_conv_block(x, encoder_[l]);
      skips.push_back(x);
      x = ops::max_pool2(x);
    }
    x = apply_conv_block(x, bottleneck_);
    for (int l = kLevels - 1; l >= 0; --l)
      x = apply_conv_block(ops::concat_channels(ops::upsample_bilinear2(x), skips[l]), decoder_[l]);
    return ops::conv2d(x, head_w_, head_b_, 0);
  }

 private:
  int class_count_;
  int width_;
  ParameterSet<T> params_;
  std::vector<ConvBlock<T>> encoder_;
  ConvBlock<T> bottleneck_;
  std::vector<ConvBlock<T>> decoder_;
  Var<T> head_w_, head_b_;
};

/// Per-pixel argmax of (K, H, W) logits for batch item `b`; ties go to the lower class index.
template <typename T>
LabelMap predict(const Tensor<T>& logits, std::size_t b = 0) {
  if (logits.rank() != 4) throw ShapeMismatch("predict expects (B,K,H,W) logits");
  const std::size_t k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  LabelMap out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (logits.at(b, c, y, x) > logits.at(b, best, y, x)) best = c;
      out(y, x) = static_cast<int>(best);
    }
  return out;
}

}  // namespace semfuse
