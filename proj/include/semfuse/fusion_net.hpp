#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "semfuse/attention.hpp"
#include "semfuse/ops.hpp"
#include "semfuse/parameters.hpp"
#include "semfuse/random.hpp"
#include "semfuse/types.hpp"

namespace semfuse {

inline constexpr double kHiddenSlope = 0.2;

enum class Modality { IR = 0, VIS = 1 };

inline const char* modality_name(Modality m) { return m == Modality::IR ? "ir" : "vis"; }

/// Two 3x3 convolutions, each followed by a leaky rectifier.
template <typename T>
struct ConvBlock {
  Var<T> w1, b1, w2, b2;
};

template <typename T>
ConvBlock<T> make_conv_block(std::size_t cin, std::size_t cout, const std::string& prefix, ParameterSet<T>& params,
                             Rng& rng) {
  const double gain = leaky_gain(kHiddenSlope);
  ConvBlock<T> b;
  b.w1 = params.add(prefix + ".conv1.weight", fan_in_uniform<T>({cout, cin, 3, 3}, cin * 9, rng, gain));
  b.b1 = params.add(prefix + ".conv1.bias", Tensor<T>({cout}));
  b.w2 = params.add(prefix + ".conv2.weight", fan_in_uniform<T>({cout, cout, 3, 3}, cout * 9, rng, gain));
  b.b2 = params.add(prefix + ".conv2.bias", Tensor<T>({cout}));
  return b;
}

template <typename T>
Var<T> apply_conv_block(const Var<T>& x, const ConvBlock<T>& b) {
  const T slope = static_cast<T>(kHiddenSlope);
  const Var<T> h = ops::leaky_relu(ops::conv2d(x, b.w1, b.b1, 1), slope);
  return ops::leaky_relu(ops::conv2d(h, b.w2, b.b2, 1), slope);
}

/// Multi-scale attention fusion network mapping (infrared, visible luminance) to a fused image.
///
/// Parameters are aliased by Var handles, so the model is move-only; use clone()
/// for an independent copy.
template <typename T>
class FusionModel {
 public:
  explicit FusionModel(const TrainConfig& config) : config_(config) {
    config_.validate();
    Rng rng = Rng::derive(config_.seed, 1);
    const std::size_t base = static_cast<std::size_t>(config_.base_channels);
    const int scales = config_.scales;
    for (Modality m : {Modality::IR, Modality::VIS}) {
      auto& enc = encoders_[static_cast<int>(m)];
      for (int s = 0; s < scales; ++s) {
        const std::size_t cin = s == 0 ? 1 : channels(s - 1);
        enc.push_back(make_conv_block<T>(cin, channels(s),
                                         std::string("fusion.enc.") + modality_name(m) + ".s" + std::to_string(s),
                                         params_, rng));
      }
    }
    for (int s = 0; s < scales; ++s)
      for (Modality m : {Modality::IR, Modality::VIS})
        gates_[static_cast<int>(m)].push_back(make_gate_params<T>(
            config_.attention, channels(s), "fusion.fuse.s" + std::to_string(s) + "." + modality_name(m), params_, rng));
    for (int s = 0; s + 1 < scales; ++s)
      decoder_.push_back(make_conv_block<T>(channels(s + 1) + channels(s), channels(s),
                                            "fusion.dec.s" + std::to_string(s), params_, rng));
    head_w_ = params_.add("fusion.head.weight", fan_in_uniform<T>({1, base, 1, 1}, base, rng));
    head_b_ = params_.add("fusion.head.bias", Tensor<T>({1}));
  }

  FusionModel(FusionModel&&) noexcept = default;
  FusionModel& operator=(FusionModel&&) noexcept = default;
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;

  FusionModel clone() const {
    FusionModel copy(config_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      copy.params_.items()[i].var.mutable_value() = params_.items()[i].var.value();
    return copy;
  }

  const TrainConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  std::size_t channels(int scale) const { return static_cast<std::size_t>(config_.base_channels) << scale; }

  /// Feature pyramid of one modality: S maps, scale s at (H/2^s, W/2^s) with base*2^s channels.
  std::vector<Var<T>> encode(const Var<T>& image, Modality modality) const {
    if (image.shape().size() != 4 || image.dim(1) != 1)
      throw ShapeMismatch("encode expects a (B,1,H,W) image, got " + shape_string(image.shape()));
    const std::size_t m = config_.spatial_multiple();
    if (image.dim(2) % m || image.dim(3) % m)
      throw ShapeMismatch("encode: spatial dims " + shape_string(image.shape()) + " not divisible by " +
                          std::to_string(m));
    const auto& enc = encoders_[static_cast<int>(modality)];
    std::vector<Var<T>> maps;
    Var<T> x = image;
    for (int s = 0; s < config_.scales; ++s) {
      if (s > 0) x = ops::max_pool2(x);
      x = apply_conv_block(x, enc[s]);
      maps.push_back(x);
    }
    return maps;
  }

  /// Per-branch strengthening followed by the element-wise average of the two branches.
  Var<T> fuse_block(const Var<T>& f_ir, const Var<T>& f_vis, int scale) const {
    f_ir.value().require_same_shape(f_vis.value(), "fuse_block");
    const auto ir = make_variant(gates_[0].at(scale));
    const auto vis = make_variant(gates_[1].at(scale));
    return ops::average(ir(f_ir), vis(f_vis));
  }

  /// Coarse-to-fine decoding of the fused pyramid into a single-channel image in [0, 1].
  Var<T> decode(const std::vector<Var<T>>& fused) const {
    if (fused.size() != static_cast<std::size_t>(config_.scales)) throw ShapeMismatch("decode: wrong pyramid depth");
    Var<T> d = fused.back();
    for (int s = config_.scales - 2; s >= 0; --s)
      d = apply_conv_block(ops::concat_channels(ops::upsample_bilinear2(d), fused[s]), decoder_[s]);
    return ops::sigmoid(ops::conv2d(d, head_w_, head_b_, 0));
  }

  /// Fused image (B,1,H,W) from infrared and visible-luminance batches.
  Var<T> forward(const Var<T>& ir, const Var<T>& vis) const {
    ir.value().require_same_shape(vis.value(), "forward");
    const auto f_ir = encode(ir, Modality::IR);
    const auto f_vis = encode(vis, Modality::VIS);
    std::vector<Var<T>> fused;
    for (int s = 0; s < config_.scales; ++s) fused.push_back(fuse_block(f_ir[s], f_vis[s], s));
    return decode(fused);
  }

  Image forward(const ImagePair& pair) const {
    const auto ir = Var<T>::constant(stack_images<T>({&pair.ir}));
    const auto vis = Var<T>::constant(stack_images<T>({&pair.vis_luma}));
    return unstack_image(forward(ir, vis).value(), 0);
  }

  /// Exchanges the values of every infrared parameter with its visible counterpart.
  void swap_modalities() {
    for (auto& p : params_.items()) {
      const auto pos = p.name.find(".ir.");
      if (pos == std::string::npos) continue;
      std::string other = p.name;
      other.replace(pos, 4, ".vis.");
      auto q = params_.find(other);
      std::swap(p.var.mutable_value(), q.mutable_value());
    }
  }

 private:
  TrainConfig config_;
  ParameterSet<T> params_;
  std::array<std::vector<ConvBlock<T>>, 2> encoders_;
  std::array<std::vector<GateParams<T>>, 2> gates_;
  std::vector<ConvBlock<T>> decoder_;
  Var<T> head_w_, head_b_;
};

}  // namespace semfuse
