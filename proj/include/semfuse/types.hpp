#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/error.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

/// Single-channel image with pixel values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), pixels_(height * width, fill) {}
  Image(std::size_t height, std::size_t width, std::vector<double> pixels)
      : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (pixels_.size() != height_ * width_) throw ShapeMismatch("image pixel count does not match its size");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  double& operator()(std::size_t y, std::size_t x) { return pixels_[y * width_ + x]; }
  double operator()(std::size_t y, std::size_t x) const { return pixels_[y * width_ + x]; }
  double& operator[](std::size_t i) { return pixels_[i]; }
  double operator[](std::size_t i) const { return pixels_[i]; }
  const std::vector<double>& pixels() const { return pixels_; }
  std::vector<double>& pixels() { return pixels_; }

  bool same_size(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

/// Three-channel image, interleaved RGB, values in [0, 1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t height, std::size_t width) : height_(height), width_(width), data_(3 * height * width, 0.0) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  double& operator()(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * width_ + x) * 3 + c]; }
  double operator()(std::size_t y, std::size_t x, std::size_t c) const { return data_[(y * width_ + x) * 3 + c]; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

/// Per-pixel class indices.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, int fill = 0) : height_(height), width_(width), labels_(height * width, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return labels_.size(); }
  int& operator()(std::size_t y, std::size_t x) { return labels_[y * width_ + x]; }
  int operator()(std::size_t y, std::size_t x) const { return labels_[y * width_ + x]; }
  int& operator[](std::size_t i) { return labels_[i]; }
  int operator[](std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<int> labels_;
};

/// ITU-R BT.601 luma, clamped to [0, 1]. Gray pixels map to themselves exactly.
inline Image rgb_to_luma(const RgbImage& rgb) {
  Image out(rgb.height(), rgb.width());
  for (std::size_t y = 0; y < rgb.height(); ++y)
    for (std::size_t x = 0; x < rgb.width(); ++x) {
      const double r = rgb(y, x, 0), g = rgb(y, x, 1), b = rgb(y, x, 2);
      const double v = r == g && g == b ? r : 0.299 * r + 0.587 * g + 0.114 * b;
      out(y, x) = std::clamp(v, 0.0, 1.0);
    }
  return out;
}

/// Registered infrared/visible pair. The luminance channel is derived from the RGB input.
struct ImagePair {
  std::string id;
  Image ir;
  RgbImage vis_rgb;
  Image vis_luma;
  std::optional<LabelMap> label;

  ImagePair() = default;
  ImagePair(std::string id_, Image ir_, RgbImage vis, std::optional<LabelMap> label_ = std::nullopt)
      : id(std::move(id_)), ir(std::move(ir_)), vis_rgb(std::move(vis)), vis_luma(rgb_to_luma(vis_rgb)),
        label(std::move(label_)) {}

  std::size_t height() const { return ir.height(); }
  std::size_t width() const { return ir.width(); }

  friend bool operator==(const ImagePair&, const ImagePair&) = default;
};

struct LabelPalette {
  std::vector<std::string> class_names;
  std::optional<int> ignore_index;

  int class_count() const { return static_cast<int>(class_names.size()); }

  /// Index of a class by case-insensitive name.
  std::optional<int> find(const std::string& name) const {
    auto lower = [](std::string s) {
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      return s;
    };
    for (std::size_t i = 0; i < class_names.size(); ++i)
      if (lower(class_names[i]) == lower(name)) return static_cast<int>(i);
    return std::nullopt;
  }

  void validate() const {
    if (class_names.empty()) throw ConfigError("palette has no classes");
    std::set<std::string> seen(class_names.begin(), class_names.end());
    if (seen.size() != class_names.size()) throw ConfigError("palette class names must be unique");
  }

  /// Classes scored by default: everything except class 0 (unlabeled/background) and ignore_index.
  std::vector<int> foreground_classes() const {
    std::vector<int> out;
    for (int k = 1; k < class_count(); ++k)
      if (!ignore_index || *ignore_index != k) out.push_back(k);
    return out;
  }

  static LabelPalette synthetic() { return {{"background", "hot-target", "cold-structure", "glare-zone"}, std::nullopt}; }
  static LabelPalette mfnet() {
    return {{"unlabeled", "car", "person", "bike", "curve", "car_stop", "color_cone", "bump"}, std::nullopt};
  }
};

enum class AttentionVariant { SLA, CHA, SPA, NONE };
enum class WarmStartRule { AVERAGE, MAX };

inline std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::SLA: return "SLA";
    case AttentionVariant::CHA: return "CHA";
    case AttentionVariant::SPA: return "SPA";
    case AttentionVariant::NONE: return "NONE";
  }
  return "?";
}

inline std::string to_string(WarmStartRule r) { return r == WarmStartRule::AVERAGE ? "AVERAGE" : "MAX"; }

namespace detail {
inline std::string to_upper(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return s;
}
}  // namespace detail

inline AttentionVariant parse_attention(const std::string& raw) {
  const std::string s = detail::to_upper(raw);
  if (s == "SLA") return AttentionVariant::SLA;
  if (s == "CHA") return AttentionVariant::CHA;
  if (s == "SPA") return AttentionVariant::SPA;
  if (s == "NONE") return AttentionVariant::NONE;
  throw ConfigError("unknown attention variant '" + raw + "' (expected SLA, CHA, SPA or NONE)");
}

inline WarmStartRule parse_warm_start_rule(const std::string& raw) {
  const std::string s = detail::to_upper(raw);
  if (s == "AVERAGE") return WarmStartRule::AVERAGE;
  if (s == "MAX") return WarmStartRule::MAX;
  throw ConfigError("unknown warm-start rule '" + raw + "' (expected AVERAGE or MAX)");
}

/// Every hyperparameter of the two-phase strategy.
struct TrainConfig {
  // model
  int scales = 3;
  int base_channels = 16;
  AttentionVariant attention = AttentionVariant::SLA;
  int seg_width = 16;
  int class_count = 4;
  // train
  WarmStartRule warm_start_rule = WarmStartRule::AVERAGE;
  double lambda = 1.0;
  std::set<int> class_mask;
  int warm_start_epochs = 20;
  int semantic_epochs = 40;
  double warm_start_lr = 1e-3;
  double semantic_lr = 1e-4;
  int batch_size = 1;
  std::uint64_t seed = 2023;
  bool skip_warm_start = false;
  bool drop_semantic_loss = false;
  double clip_norm = 5.0;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
    if (scales < 2 || scales > 4) throw ConfigError("scales must be in [2, 4]");
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (seg_width < 1) throw ConfigError("seg_width must be >= 1");
    if (class_count < 2) throw ConfigError("class_count must be >= 2");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (warm_start_epochs < 0 || semantic_epochs < 0) throw ConfigError("epoch counts must be >= 0");
    if (!(warm_start_lr > 0) || !(semantic_lr > 0)) throw ConfigError("learning rates must be > 0");
    if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
    for (int k : class_mask)
      if (k < 0 || k >= class_count) throw ConfigError("class_mask entry " + std::to_string(k) + " out of range");
  }

  /// Spatial dims must be multiples of this value.
  std::size_t spatial_multiple() const { return std::size_t{1} << (scales - 1); }
};

/// Returns the pair unchanged when every pair invariant holds under `config`.
inline const ImagePair& validate_pair(const ImagePair& pair, const TrainConfig& config) {
  const std::size_t h = pair.ir.height(), w = pair.ir.width();
  if (pair.vis_rgb.height() != h || pair.vis_rgb.width() != w || !pair.vis_luma.same_size(pair.ir))
    throw ShapeMismatch(pair.id + ": infrared " + std::to_string(h) + "x" + std::to_string(w) + " vs visible " +
                        std::to_string(pair.vis_rgb.height()) + "x" + std::to_string(pair.vis_rgb.width()));
  if (pair.label && (pair.label->height() != h || pair.label->width() != w))
    throw ShapeMismatch(pair.id + ": label size differs from image size");
  const std::size_t m = config.spatial_multiple();
  if (h < 8 || w < 8 || h % m || w % m)
    throw ShapeMismatch(pair.id + ": size " + std::to_string(h) + "x" + std::to_string(w) +
                        " must be >= 8 and divisible by " + std::to_string(m));
  auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!std::all_of(pair.ir.pixels().begin(), pair.ir.pixels().end(), in_range))
    throw RangeError(pair.id + ": infrared pixel outside [0,1]");
  if (!std::all_of(pair.vis_rgb.data().begin(), pair.vis_rgb.data().end(), in_range))
    throw RangeError(pair.id + ": visible pixel outside [0,1]");
  if (pair.label)
    for (int v : pair.label->labels())
      if (v < 0 || v >= config.class_count)
        throw LabelError(pair.id + ": label " + std::to_string(v) + " outside [0," + std::to_string(config.class_count) +
                         ")");
  return pair;
}

/// Stacks images into a (B, 1, H, W) tensor.
template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw EmptyDataset("stack_images: no images");
  const std::size_t h = images[0]->height(), w = images[0]->width();
  Tensor<T> out(Shape{images.size(), 1, h, w});
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->height() != h || images[b]->width() != w) throw ShapeMismatch("stack_images: sizes differ");
    for (std::size_t i = 0; i < h * w; ++i) out[b * h * w + i] = static_cast<T>((*images[b])[i]);
  }
  return out;
}

/// Extracts image `b` of a (B, 1, H, W) tensor.
template <typename T>
Image unstack_image(const Tensor<T>& t, std::size_t b) {
  const std::size_t h = t.dim(2), w = t.dim(3);
  Image out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = static_cast<double>(t[b * h * w + i]);
  return out;
}

}  // namespace semfuse
