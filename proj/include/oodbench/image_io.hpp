#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "oodbench/attributes.hpp"
#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"
#include "oodbench/parallel.hpp"

namespace oodbench {

/// Decodes PNG, JPEG, BMP (anything OpenCV reads) into an 8-bit RGB raster.
inline RgbImage decode_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode image " + path.string() + ": " + e.what());
  }
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  if (bgr.depth() != CV_8U || bgr.channels() != 3) throw IoError("image " + path.string() + " is not 8-bit RGB");
  RgbImage img;
  img.width = static_cast<std::size_t>(bgr.cols);
  img.height = static_cast<std::size_t>(bgr.rows);
  img.pixels.resize(img.width * img.height * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      std::uint8_t* out = &img.pixels[(static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3];
      out[0] = row[x][2];
      out[1] = row[x][1];
      out[2] = row[x][0];
    }
  }
  return img;
}

/// Writes a raster losslessly; the format follows the file extension.
inline void write_image(const std::filesystem::path& path, const RgbImage& image) {
  image.validate();
  cv::Mat bgr(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3);
  for (std::size_t y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* p = &image.pixels[(y * image.width + x) * 3];
      row[x] = cv::Vec3b(p[2], p[1], p[0]);
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write image " + path.string());
}

/// Decodes every image of the session and returns its attribute table.
/// Any decode failure aborts the whole table.
inline AttributeTable compute_all_attributes(const SessionDataset& session, std::size_t workers = 1) {
  require(!session.image_paths.empty(), "session '" + session.session_id + "' has no image paths");
  require(session.image_paths.size() == session.image_count(),
          "session '" + session.session_id + "' image path count does not match image count");
  AttributeTable table = AttributeTable::with_rows(session.image_paths.size());
  parallel_for(session.image_paths.size(), workers, [&](std::size_t i) {
    table.set_row(i, compute_attributes(decode_image(session.image_paths[i])));
  });
  return table;
}

/// compute_all_attributes, written back into the session.
inline void compute_all(SessionDataset& session, std::size_t workers = 1) {
  session.attributes = compute_all_attributes(session, workers);
}

}  // namespace oodbench
