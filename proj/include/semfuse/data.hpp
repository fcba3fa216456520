#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "semfuse/image_io.hpp"
#include "semfuse/random.hpp"
#include "semfuse/types.hpp"

namespace semfuse {

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthSpec {
  std::size_t size = 64;
  std::size_t images = 32;
  int class_count = 4;
  std::uint64_t seed = 7;
  double glare_probability = 0.5;
  int blob_min = 1;
  int blob_max = 4;
  std::string id_prefix = "synth";

  void validate() const {
    if (size < 8 || size % 8) throw ConfigError("synthetic size must be a multiple of 8 and >= 8");
    if (images < 1) throw ConfigError("synthetic image count must be >= 1");
    if (class_count < 4) throw ConfigError("synthetic scenes need at least 4 classes");
    if (glare_probability < 0 || glare_probability > 1) throw ConfigError("glare_probability must be in [0,1]");
    if (blob_min < 1 || blob_max < blob_min) throw ConfigError("blob count range must satisfy 1 <= min <= max");
  }
};

namespace synth_class {
inline constexpr int kBackground = 0;
inline constexpr int kHotTarget = 1;
inline constexpr int kColdStructure = 2;
inline constexpr int kGlare = 3;
}  // namespace synth_class

/// Geometric content of one synthetic scene, prior to rasterization.
struct SceneDescription {
  struct Blob {
    double cx, cy, rx, ry, ir_level, vis_level;
  };
  struct Rect {
    double x0, y0, x1, y1;
    double period, phase, lo, hi;
    bool vertical;
    double tint[3];
  };
  struct Glare {
    double cx, cy, radius;
  };

  double ir_base, ir_slope_x, ir_slope_y;
  double vis_base, vis_slope_x, vis_slope_y;
  double vis_tint[3];
  std::vector<Rect> rects;
  std::vector<Blob> blobs;
  std::optional<Glare> glare;
  std::uint64_t noise_seed;

  /// Pixel-center membership tests.
  static bool in_blob(const Blob& b, double px, double py) {
    const double dx = (px - b.cx) / b.rx, dy = (py - b.cy) / b.ry;
    return dx * dx + dy * dy <= 1.0;
  }
  static bool in_rect(const Rect& r, double px, double py) { return px >= r.x0 && px < r.x1 && py >= r.y0 && py < r.y1; }
  static bool in_glare(const Glare& g, double px, double py) {
    const double dx = px - g.cx, dy = py - g.cy;
    return dx * dx + dy * dy <= g.radius * g.radius;
  }
};

inline SceneDescription describe_scene(const SynthSpec& spec, std::size_t index) {
  Rng rng = Rng::derive(spec.seed, index);
  const double n = static_cast<double>(spec.size);
  SceneDescription d{};
  d.ir_base = rng.uniform(0.08, 0.22);
  d.ir_slope_x = rng.uniform(-0.08, 0.08);
  d.ir_slope_y = rng.uniform(-0.08, 0.08);
  d.vis_base = rng.uniform(0.35, 0.6);
  d.vis_slope_x = rng.uniform(-0.2, 0.2);
  d.vis_slope_y = rng.uniform(-0.2, 0.2);
  for (double& t : d.vis_tint) t = rng.uniform(0.85, 1.0);

  const int rect_count = static_cast<int>(rng.integer(1, 3));
  for (int i = 0; i < rect_count; ++i) {
    SceneDescription::Rect r{};
    const double w = rng.uniform(0.15, 0.35) * n, h = rng.uniform(0.15, 0.35) * n;
    r.x0 = rng.uniform(0, n - w);
    r.y0 = rng.uniform(0, n - h);
    r.x1 = r.x0 + w;
    r.y1 = r.y0 + h;
    r.period = static_cast<double>(rng.integer(2, 4));
    r.phase = rng.uniform(0, r.period);
    r.lo = rng.uniform(0.1, 0.25);
    r.hi = rng.uniform(0.75, 0.9);
    r.vertical = rng.bernoulli(0.5);
    for (double& t : r.tint) t = rng.uniform(0.6, 1.0);
    d.rects.push_back(r);
  }
  const int blob_count = static_cast<int>(rng.integer(spec.blob_min, spec.blob_max));
  for (int i = 0; i < blob_count; ++i) {
    SceneDescription::Blob b{};
    b.rx = rng.uniform(0.05, 0.12) * n;
    b.ry = rng.uniform(0.05, 0.12) * n;
    b.cx = rng.uniform(b.rx, n - b.rx);
    b.cy = rng.uniform(b.ry, n - b.ry);
    b.ir_level = rng.uniform(0.8, 0.95);
    b.vis_level = rng.uniform(0.05, 0.15);
    d.blobs.push_back(b);
  }
  if (rng.bernoulli(spec.glare_probability)) {
    const double r = rng.uniform(0.15, 0.28) * n;
    d.glare = SceneDescription::Glare{rng.uniform(r * 0.5, n - r * 0.5), rng.uniform(r * 0.5, n - r * 0.5), r};
  }
  d.noise_seed = rng.next();
  return d;
}

/// Label raster: cold structures, then glare (occludes them), then hot targets (visible through glare in IR).
inline LabelMap rasterize_labels(const SceneDescription& d, std::size_t size) {
  LabelMap labels(size, size, synth_class::kBackground);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      int c = synth_class::kBackground;
      for (const auto& r : d.rects)
        if (SceneDescription::in_rect(r, px, py)) c = synth_class::kColdStructure;
      if (d.glare && SceneDescription::in_glare(*d.glare, px, py)) c = synth_class::kGlare;
      for (const auto& b : d.blobs)
        if (SceneDescription::in_blob(b, px, py)) c = synth_class::kHotTarget;
      labels(y, x) = c;
    }
  return labels;
}

inline double quantize_unit(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

/// Renders a scene to an 8-bit-quantized pair.
inline ImagePair render_scene(const SceneDescription& d, std::size_t size, std::string id) {
  Rng noise(d.noise_seed);
  const double n = static_cast<double>(size);
  Image ir(size, size);
  RgbImage vis(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double u = px / n - 0.5, v = py / n - 0.5;
      double ir_v = d.ir_base + d.ir_slope_x * u + d.ir_slope_y * v;
      double vis_l = d.vis_base + d.vis_slope_x * u + d.vis_slope_y * v;
      double tint[3] = {d.vis_tint[0], d.vis_tint[1], d.vis_tint[2]};
      for (const auto& r : d.rects) {
        if (!SceneDescription::in_rect(r, px, py)) continue;
        const double coord = r.vertical ? (px - r.x0) : (py - r.y0);
        const bool on = std::fmod(coord + r.phase, r.period) < r.period / 2.0;
        vis_l = on ? r.hi : r.lo;
        std::copy(std::begin(r.tint), std::end(r.tint), tint);
      }
      for (const auto& b : d.blobs) {
        if (!SceneDescription::in_blob(b, px, py)) continue;
        ir_v = b.ir_level;
        vis_l = b.vis_level;
      }
      ir_v += 0.01 * noise.normal();
      vis_l += 0.01 * noise.normal();
      ir(y, x) = quantize_unit(ir_v);
      const bool glare = d.glare && SceneDescription::in_glare(*d.glare, px, py);
      for (int c = 0; c < 3; ++c)
        vis(y, x, c) = glare ? 1.0 : quantize_unit(std::min(vis_l * tint[c], 0.95));
    }
  return ImagePair(std::move(id), std::move(ir), std::move(vis), rasterize_labels(d, size));
}

inline std::string synthetic_id(const SynthSpec& spec, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return spec.id_prefix + "_" + buf;
}

/// Seeded scenes: pure function of the SynthSpec.
inline std::vector<ImagePair> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::vector<ImagePair> out;
  out.reserve(spec.images);
  for (std::size_t i = 0; i < spec.images; ++i)
    out.push_back(render_scene(describe_scene(spec, i), spec.size, synthetic_id(spec, i)));
  return out;
}

// ---------------------------------------------------------------------------
// On-disk datasets: root/{split}/{ir,vis,labels}/<id>.png

struct ManifestEntry {
  std::string id;
  std::filesystem::path ir;
  std::filesystem::path vis;
  std::optional<std::filesystem::path> label;
};

struct RejectedEntry {
  std::string id;
  std::string reason;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<ManifestEntry> entries;
  std::vector<RejectedEntry> rejected;
  LabelPalette palette;

  /// One line per entry: id, ir path, vis path, label path (or '-').
  std::string to_text() const {
    std::string out;
    for (const auto& e : entries)
      out += e.id + '\t' + e.ir.string() + '\t' + e.vis.string() + '\t' + (e.label ? e.label->string() : "-") + '\n';
    return out;
  }
};

inline ImagePair load_pair(const ManifestEntry& e) {
  std::optional<LabelMap> label;
  if (e.label) label = io::read_labels(*e.label);
  return ImagePair(e.id, io::read_gray(e.ir), io::read_rgb(e.vis), std::move(label));
}

namespace detail {
inline std::map<std::string, std::filesystem::path> png_stems(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& f : std::filesystem::directory_iterator(dir))
    if (f.is_regular_file() && f.path().extension() == ".png") out[f.path().stem().string()] = f.path();
  return out;
}
}  // namespace detail

/// Lists and validates the pairs of one split. Entries that fail are moved to `rejected`
/// with a reason naming the error kind and file; with `strict` the first failure is thrown.
inline DatasetManifest scan_dataset(const std::filesystem::path& root, const std::string& split,
                                    const LabelPalette& palette, const TrainConfig& config, bool strict = false) {
  DatasetManifest m{root, split, {}, {}, palette};
  const auto base = root / split;
  if (!std::filesystem::is_directory(base)) throw EmptyDataset("EmptyDataset: no directory " + base.string());
  const auto irs = detail::png_stems(base / "ir");
  const auto viss = detail::png_stems(base / "vis");
  const auto labels = detail::png_stems(base / "labels");
  std::map<std::string, bool> stems;
  for (const auto& [k, _] : irs) stems[k] = true;
  for (const auto& [k, _] : viss) stems[k] = true;

  TrainConfig check = config;
  check.class_count = palette.class_count();
  for (const auto& [id, _] : stems) {
    const auto ir = irs.find(id);
    const auto vis = viss.find(id);
    if (ir == irs.end() || vis == viss.end()) {
      const std::string reason = std::string("missing ") + (ir == irs.end() ? "ir" : "vis") + " image";
      if (strict) throw IoError(id + ": " + reason);
      m.rejected.push_back({id, reason});
      continue;
    }
    ManifestEntry e{id, ir->second, vis->second, std::nullopt};
    if (const auto l = labels.find(id); l != labels.end()) e.label = l->second;
    try {
      validate_pair(load_pair(e), check);
    } catch (const LabelError& err) {
      if (strict) throw LabelError("LabelError: " + (e.label ? e.label->string() : id) + ": " + err.what());
      m.rejected.push_back({id, std::string("LabelError: ") + (e.label ? e.label->string() : id) + ": " + err.what()});
      continue;
    } catch (const ShapeMismatch& err) {
      if (strict) throw;
      m.rejected.push_back({id, std::string("ShapeMismatch: ") + err.what()});
      continue;
    } catch (const Error& err) {
      if (strict) throw;
      m.rejected.push_back({id, err.what()});
      continue;
    }
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw EmptyDataset("EmptyDataset: no valid pairs under " + base.string());
  return m;
}

inline std::vector<ImagePair> load_dataset(const DatasetManifest& m) {
  std::vector<ImagePair> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_pair(e));
  return out;
}

/// Writes pairs under root/split in the layout scan_dataset reads.
inline void save_dataset(const std::vector<ImagePair>& pairs, const std::filesystem::path& root,
                         const std::string& split) {
  const auto base = root / split;
  std::error_code ec;
  for (const char* sub : {"ir", "vis", "labels"}) {
    std::filesystem::create_directories(base / sub, ec);
    if (ec) throw IoError("cannot create " + (base / sub).string() + ": " + ec.message());
  }
  for (const auto& p : pairs) {
    io::write_gray(base / "ir" / (p.id + ".png"), p.ir);
    io::write_rgb(base / "vis" / (p.id + ".png"), p.vis_rgb);
    if (p.label) io::write_labels(base / "labels" / (p.id + ".png"), *p.label);
  }
}

// ---------------------------------------------------------------------------
// Batching

/// Index batches of one epoch. The permutation depends only on (seed, epoch); the last batch may be partial.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                           std::uint64_t seed, std::size_t epoch, bool shuffle) {
  if (count == 0) throw EmptyDataset("epoch_batches: empty source");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  if (shuffle) {
    Rng rng = Rng::derive(seed, 1000 + epoch);
    for (std::size_t i = count - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += batch_size)
    out.emplace_back(order.begin() + i, order.begin() + std::min(count, i + batch_size));
  return out;
}

/// Stream of batches over a list of pairs, reshuffled deterministically every epoch.
class BatchIterator {
 public:
  BatchIterator(const std::vector<ImagePair>& source, std::size_t batch_size, std::uint64_t seed, bool shuffle)
      : source_(&source), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
    if (source.empty()) throw EmptyDataset("BatchIterator: empty source");
  }

  std::vector<std::vector<const ImagePair*>> epoch(std::size_t index) const {
    std::vector<std::vector<const ImagePair*>> out;
    for (const auto& idx : epoch_batches(source_->size(), batch_size_, seed_, index, shuffle_)) {
      auto& batch = out.emplace_back();
      for (std::size_t i : idx) batch.push_back(&(*source_)[i]);
    }
    return out;
  }

 private:
  const std::vector<ImagePair>* source_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
};

}  // namespace semfuse
