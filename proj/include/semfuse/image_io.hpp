#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semfuse/error.hpp"
#include "semfuse/types.hpp"

// 8-bit PNG reading and writing through libpng's simplified API.
namespace semfuse::io {

namespace detail {

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, std::size_t& height,
                                          std::size_t& width) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw IoError("UnreadableFile: " + path.string() + ": " + image.message);
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("UnreadableFile: " + path.string() + ": " + image.message);
  }
  height = image.height;
  width = image.width;
  return buffer;
}

inline void write_png(const std::filesystem::path& path, std::uint32_t format, std::size_t height, std::size_t width,
                      const std::vector<std::uint8_t>& buffer) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + image.message);
}

}  // namespace detail

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Grayscale image, 8-bit values divided by 255.
inline Image read_gray(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_GRAY, h, w);
  Image out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = buf[i] / 255.0;
  return out;
}

inline RgbImage read_rgb(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_RGB, h, w);
  RgbImage out(h, w);
  for (std::size_t i = 0; i < 3 * h * w; ++i) out.data()[i] = buf[i] / 255.0;
  return out;
}

/// Label map stored as 8-bit grayscale whose value is the class index.
inline LabelMap read_labels(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto buf = detail::read_png(path, PNG_FORMAT_GRAY, h, w);
  LabelMap out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = buf[i];
  return out;
}

/// Writes round(255 * p) per pixel.
inline void write_gray(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buf[i] = quantize8(img[i]);
  detail::write_png(path, PNG_FORMAT_GRAY, img.height(), img.width(), buf);
}

inline void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<std::uint8_t> buf(img.data().size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize8(img.data()[i]);
  detail::write_png(path, PNG_FORMAT_RGB, img.height(), img.width(), buf);
}

inline void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<std::uint8_t> buf(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 255) throw LabelError("label value does not fit in 8 bits");
    buf[i] = static_cast<std::uint8_t>(labels[i]);
  }
  detail::write_png(path, PNG_FORMAT_GRAY, labels.height(), labels.width(), buf);
}

/// Replaces the luminance of `vis` with `fused`, keeping its BT.601 chrominance.
inline RgbImage reattach_chroma(const Image& fused, const RgbImage& vis) {
  if (fused.height() != vis.height() || fused.width() != vis.width())
    throw ShapeMismatch("reattach_chroma: sizes differ");
  RgbImage out(vis.height(), vis.width());
  for (std::size_t y = 0; y < vis.height(); ++y)
    for (std::size_t x = 0; x < vis.width(); ++x) {
      const double r = vis(y, x, 0), g = vis(y, x, 1), b = vis(y, x, 2);
      const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
      const double cb = 0.564 * (b - luma), cr = 0.713 * (r - luma);
      const double yv = fused(y, x);
      out(y, x, 0) = std::clamp(yv + 1.403 * cr, 0.0, 1.0);
      out(y, x, 1) = std::clamp(yv - 0.344 * cb - 0.714 * cr, 0.0, 1.0);
      out(y, x, 2) = std::clamp(yv + 1.773 * cb, 0.0, 1.0);
    }
  return out;
}

}  // namespace semfuse::io
