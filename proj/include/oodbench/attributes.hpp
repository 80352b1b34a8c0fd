#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"

namespace oodbench {

/// Decoded 8-bit RGB raster, interleaved row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  static RgbImage filled(std::size_t width, std::size_t height, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    RgbImage img{width, height, 3, {}};
    img.pixels.reserve(width * height * 3);
    for (std::size_t i = 0; i < width * height; ++i) img.pixels.insert(img.pixels.end(), {r, g, b});
    return img;
  }

  std::size_t pixel_count() const { return width * height; }

  void validate() const {
    require(channels == 3, "raster must have 3 (RGB) channels, has " + std::to_string(channels));
    require(pixel_count() >= 1, "raster has zero pixels");
    require(pixels.size() == pixel_count() * 3, "raster buffer size does not match width x height x 3");
  }
};

namespace detail {

struct ColorTerms {
  double luma;
  double saturation;
  double temperature;
  std::optional<double> hue;  // in [0,1); empty for achromatic colors
};

inline ColorTerms color_terms(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
  ColorTerms t{};
  t.luma = 0.299 * r + 0.587 * g + 0.114 * b;
  t.temperature = r - b;
  const std::uint8_t mx = std::max({r8, g8, b8});
  const std::uint8_t mn = std::min({r8, g8, b8});
  t.saturation = mx == 0 ? 0.0 : static_cast<double>(mx - mn) / mx;
  if (mx != mn) {
    const double delta = static_cast<double>(mx - mn);
    double h = 0.0;
    if (mx == r8) {
      h = (static_cast<double>(g8) - b8) / delta;
      if (h < 0.0) h += 6.0;
    } else if (mx == g8) {
      h = (static_cast<double>(b8) - r8) / delta + 2.0;
    } else {
      h = (static_cast<double>(r8) - g8) / delta + 4.0;
    }
    t.hue = h / 6.0;
  }
  return t;
}

inline double wrap_unit(double h) {
  h -= std::floor(h);
  return h >= 1.0 ? 0.0 : h;
}

}  // namespace detail

/// All five attributes, indexed like kAttributeKinds.
///
/// intensity   mean luma Y = 0.299R + 0.587G + 0.114B
/// contrast    population std of per-pixel luma (RMS contrast)
/// saturation  mean HSV saturation (max-min)/max, 0 for black
/// temperature mean of R - B
/// hue         circular mean of HSV hue over chromatic pixels, in [0,1);
///             0 when no pixel is chromatic
///
/// Sums run over distinct colors in sorted order, so the result depends only
/// on the pixel multiset.
inline std::array<double, 5> compute_attributes(const RgbImage& image) {
  image.validate();
  std::vector<std::uint32_t> colors(image.pixel_count());
  for (std::size_t i = 0; i < colors.size(); ++i) {
    const std::uint8_t* p = &image.pixels[3 * i];
    colors[i] = (std::uint32_t{p[0]} << 16) | (std::uint32_t{p[1]} << 8) | p[2];
  }
  std::sort(colors.begin(), colors.end());

  struct Run {
    detail::ColorTerms terms;
    double count;
  };
  std::vector<Run> runs;
  for (std::size_t i = 0; i < colors.size();) {
    std::size_t j = i;
    while (j < colors.size() && colors[j] == colors[i]) ++j;
    const std::uint32_t c = colors[i];
    runs.push_back({detail::color_terms(static_cast<std::uint8_t>(c >> 16), static_cast<std::uint8_t>(c >> 8),
                                        static_cast<std::uint8_t>(c)),
                    static_cast<double>(j - i)});
    i = j;
  }

  const double n = static_cast<double>(colors.size());
  double luma = 0.0, sat = 0.0, temp = 0.0, hx = 0.0, hy = 0.0;
  double chromatic = 0.0;
  for (const Run& run : runs) {
    luma += run.count * run.terms.luma;
    sat += run.count * run.terms.saturation;
    temp += run.count * run.terms.temperature;
    if (run.terms.hue) {
      const double angle = 2.0 * std::numbers::pi * *run.terms.hue;
      hx += run.count * std::cos(angle);
      hy += run.count * std::sin(angle);
      chromatic += run.count;
    }
  }
  const double intensity = std::clamp(luma / n, 0.0, 1.0);
  double var = 0.0;
  for (const Run& run : runs) var += run.count * (run.terms.luma - intensity) * (run.terms.luma - intensity);

  double hue = 0.0;
  if (chromatic > 0.0 && std::hypot(hx, hy) > 1e-12 * chromatic) {
    hue = detail::wrap_unit(std::atan2(hy, hx) / (2.0 * std::numbers::pi));
  }

  std::array<double, 5> out{};
  out[static_cast<std::size_t>(AttributeKind::Hue)] = hue;
  out[static_cast<std::size_t>(AttributeKind::Saturation)] = sat / n;
  out[static_cast<std::size_t>(AttributeKind::Intensity)] = intensity;
  out[static_cast<std::size_t>(AttributeKind::Temperature)] = temp / n;
  out[static_cast<std::size_t>(AttributeKind::Contrast)] = std::sqrt(var / n);
  return out;
}

inline double compute_attribute(const RgbImage& image, AttributeKind kind) {
  return compute_attributes(image)[static_cast<std::size_t>(kind)];
}

}  // namespace oodbench
