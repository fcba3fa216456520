#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "semfuse/metrics.hpp"

namespace semfuse {

struct ImageMetrics {
  std::string id;
  double sf = 0.0;
  double ag = 0.0;
  double corr_ir = 0.0;
  double corr_vis = 0.0;
};

/// Fusion statistics per image plus segmentation scores over a labeled set.
struct EvalReport {
  std::vector<ImageMetrics> images;
  std::vector<std::string> class_names;
  std::optional<SegmentationScores> segmentation;
  std::optional<ConfusionMatrix> confusion;

  std::vector<CurvePoint> sf_curve() const { return cumulative_curve(collect(&ImageMetrics::sf)); }
  std::vector<CurvePoint> ag_curve() const { return cumulative_curve(collect(&ImageMetrics::ag)); }

  double mean(double ImageMetrics::*field) const {
    if (images.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& m : images) acc += m.*field;
    return acc / static_cast<double>(images.size());
  }

  std::string class_name(int k) const {
    return k >= 0 && static_cast<std::size_t>(k) < class_names.size() ? class_names[k] : "class" + std::to_string(k);
  }

  /// Key = value summary followed by one `image.<id>.<metric>` line per image.
  std::string to_text() const {
    std::string out;
    auto line = [&out](const std::string& key, double v) { out += key + " = " + format(v, 6) + "\n"; };
    out += "images = " + std::to_string(images.size()) + "\n";
    line("mean_sf", mean(&ImageMetrics::sf));
    line("mean_ag", mean(&ImageMetrics::ag));
    line("mean_corr_ir", mean(&ImageMetrics::corr_ir));
    line("mean_corr_vis", mean(&ImageMetrics::corr_vis));
    if (segmentation) {
      line("macc", segmentation->macc);
      line("miou", segmentation->miou);
      for (const auto& c : segmentation->per_class) {
        if (!c.scored) continue;
        line("class." + class_name(c.class_index) + ".acc", c.acc);
        line("class." + class_name(c.class_index) + ".iou", c.iou);
      }
    }
    for (const auto& m : images) {
      line("image." + m.id + ".sf", m.sf);
      line("image." + m.id + ".ag", m.ag);
      line("image." + m.id + ".corr_ir", m.corr_ir);
      line("image." + m.id + ".corr_vis", m.corr_vis);
    }
    return out;
  }

  /// Tab-separated class table in percent: class, Acc, IoU; then mAcc and mIoU rows.
  std::string class_table() const {
    std::string out = "class\tAcc\tIoU\n";
    if (!segmentation) return out;
    for (const auto& c : segmentation->per_class)
      out += class_name(c.class_index) + "\t" + (c.scored ? percent(c.acc) : "-") + "\t" +
             (c.scored ? percent(c.iou) : "-") + "\n";
    out += "mAcc\t" + percent(segmentation->macc) + "\t\n";
    out += "mIoU\t\t" + percent(segmentation->miou) + "\n";
    return out;
  }

  static std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::string out = "fraction,value\n";
    for (const auto& p : curve) out += format(p.x, 6) + "," + format(p.y, 6) + "\n";
    return out;
  }

  static std::string percent(double fraction) { return format(100.0 * fraction, 2); }

  static std::string format(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
  }

 private:
  std::vector<double> collect(double ImageMetrics::*field) const {
    std::vector<double> out;
    for (const auto& m : images) out.push_back(m.*field);
    return out;
  }
};

}  // namespace semfuse
