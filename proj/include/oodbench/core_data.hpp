#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oodbench/error.hpp"

namespace oodbench {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-image feature vectors from one extractor. Stored as float32, which is
/// exactly what the interchange payload holds.
struct FeatureMatrix {
  RowMatrixF data;
  std::string source_tag;

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(data.cols()); }

  void validate() const {
    require(!source_tag.empty(), "feature matrix has an empty source_tag");
    require(data.rows() >= 2, "feature matrix '" + source_tag + "' needs at least 2 rows, has " +
                                  std::to_string(data.rows()));
    require(data.cols() >= 1, "feature matrix '" + source_tag + "' has no columns");
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      for (Eigen::Index c = 0; c < data.cols(); ++c) {
        if (!std::isfinite(data(r, c))) {
          throw ValidationError("feature matrix '" + source_tag + "' has a non-finite value at row " +
                                std::to_string(r) + ", column " + std::to_string(c));
        }
      }
    }
  }

  /// Selected rows promoted to double.
  RowMatrix rows_of(std::span<const std::size_t> indices) const {
    RowMatrix out(static_cast<Eigen::Index>(indices.size()), data.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] < rows(), "row index out of range");
      out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(indices[i])).cast<double>();
    }
    return out;
  }

  RowMatrix as_double() const { return data.cast<double>(); }
};

/// Ragged per-trial firing rates. Every image carries its own trial count,
/// shared by all neurons. Values are laid out image-major, then trial, then
/// neuron: value(n, t, e) = values[(offset(n) + t) * neurons + e].
class ResponseTensor {
 public:
  ResponseTensor() = default;

  ResponseTensor(std::size_t neuron_count, std::vector<std::uint32_t> trial_counts, std::vector<float> values)
      : neurons_(neuron_count), trial_counts_(std::move(trial_counts)), values_(std::move(values)) {
    require(neurons_ >= 1, "response tensor needs at least one neuron");
    require(!trial_counts_.empty(), "response tensor needs at least one image");
    offsets_.resize(trial_counts_.size() + 1, 0);
    for (std::size_t n = 0; n < trial_counts_.size(); ++n) {
      if (trial_counts_[n] == 0) {
        throw ValidationError("image " + std::to_string(n) + " has no trials");
      }
      offsets_[n + 1] = offsets_[n] + trial_counts_[n];
    }
    const std::size_t expected = offsets_.back() * neurons_;
    if (values_.size() != expected) {
      throw ValidationError("response payload holds " + std::to_string(values_.size()) + " values but trial counts x " +
                            std::to_string(neurons_) + " neurons require " + std::to_string(expected));
    }
    for (std::size_t n = 0; n < trial_counts_.size(); ++n) {
      for (std::size_t t = 0; t < trial_counts_[n]; ++t) {
        for (std::size_t e = 0; e < neurons_; ++e) {
          const float v = values_[(offsets_[n] + t) * neurons_ + e];
          if (!std::isfinite(v) || v < 0.0f) {
            throw ValidationError("response value at image " + std::to_string(n) + ", trial " + std::to_string(t) +
                                  ", neuron " + std::to_string(e) + " is " + std::to_string(v) +
                                  " (must be finite and >= 0)");
          }
        }
      }
    }
  }

  std::size_t image_count() const { return trial_counts_.size(); }
  std::size_t neuron_count() const { return neurons_; }
  std::size_t trial_count(std::size_t image) const { return trial_counts_.at(image); }
  const std::vector<std::uint32_t>& trial_counts() const { return trial_counts_; }
  const std::vector<float>& values() const { return values_; }

  float value(std::size_t image, std::size_t trial, std::size_t neuron) const {
    return values_[(offsets_[image] + trial) * neurons_ + neuron];
  }

  std::vector<double> trials(std::size_t image, std::size_t neuron) const {
    std::vector<double> out(trial_counts_.at(image));
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = value(image, t, neuron);
    return out;
  }

  bool operator==(const ResponseTensor&) const = default;

 private:
  std::size_t neurons_ = 0;
  std::vector<std::uint32_t> trial_counts_;
  std::vector<std::size_t> offsets_;
  std::vector<float> values_;
};

/// N x E matrix of per-cell trial means.
inline RowMatrix trial_average(const ResponseTensor& responses) {
  const auto n_images = static_cast<Eigen::Index>(responses.image_count());
  const auto n_neurons = static_cast<Eigen::Index>(responses.neuron_count());
  RowMatrix out = RowMatrix::Zero(n_images, n_neurons);
  for (Eigen::Index n = 0; n < n_images; ++n) {
    const std::size_t trials = responses.trial_count(static_cast<std::size_t>(n));
    require(trials >= 1, "image " + std::to_string(n) + " has an empty trial list");
    for (std::size_t t = 0; t < trials; ++t) {
      for (Eigen::Index e = 0; e < n_neurons; ++e) {
        out(n, e) += responses.value(static_cast<std::size_t>(n), t, static_cast<std::size_t>(e));
      }
    }
    out.row(n) /= static_cast<double>(trials);
  }
  return out;
}

enum class AttributeKind { Hue, Saturation, Intensity, Temperature, Contrast };

inline constexpr std::array<AttributeKind, 5> kAttributeKinds = {
    AttributeKind::Hue, AttributeKind::Saturation, AttributeKind::Intensity, AttributeKind::Temperature,
    AttributeKind::Contrast};

inline std::string to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::Hue: return "hue";
    case AttributeKind::Saturation: return "saturation";
    case AttributeKind::Intensity: return "intensity";
    case AttributeKind::Temperature: return "temperature";
    case AttributeKind::Contrast: return "contrast";
  }
  return "unknown";
}

inline AttributeKind parse_attribute_kind(const std::string& name) {
  for (AttributeKind kind : kAttributeKinds) {
    if (to_string(kind) == name) return kind;
  }
  throw ValidationError("unknown attribute '" + name + "'");
}

/// Per-image attribute values, one column per AttributeKind.
struct AttributeTable {
  std::array<std::vector<double>, 5> columns;

  static AttributeTable with_rows(std::size_t n) {
    AttributeTable table;
    for (auto& c : table.columns) c.assign(n, 0.0);
    return table;
  }

  std::size_t rows() const { return columns[0].size(); }

  std::vector<double>& column(AttributeKind kind) { return columns[static_cast<std::size_t>(kind)]; }
  const std::vector<double>& column(AttributeKind kind) const { return columns[static_cast<std::size_t>(kind)]; }

  void set_row(std::size_t row, const std::array<double, 5>& values) {
    for (std::size_t k = 0; k < 5; ++k) columns[k].at(row) = values[k];
  }

  void validate(std::size_t expected_rows) const {
    for (std::size_t k = 0; k < 5; ++k) {
      require(columns[k].size() == expected_rows,
              "attribute column '" + to_string(kAttributeKinds[k]) + "' has " + std::to_string(columns[k].size()) +
                  " rows, expected " + std::to_string(expected_rows));
      for (std::size_t i = 0; i < columns[k].size(); ++i) {
        if (!std::isfinite(columns[k][i])) {
          throw ValidationError("attribute '" + to_string(kAttributeKinds[k]) + "' is non-finite at image " +
                                std::to_string(i));
        }
      }
    }
  }

  bool operator==(const AttributeTable&) const = default;
};

/// One recording session: the unit within which everything is fit.
struct SessionDataset {
  std::string session_id;
  std::map<std::string, FeatureMatrix> features;  // keyed by source_tag
  ResponseTensor responses;
  std::optional<AttributeTable> attributes;
  std::vector<std::string> image_paths;  // empty when the session carries no rasters

  std::size_t image_count() const { return responses.image_count(); }

  const FeatureMatrix& feature(const std::string& tag) const {
    auto it = features.find(tag);
    if (it == features.end()) {
      throw ValidationError("session '" + session_id + "' has no features with source_tag '" + tag + "'");
    }
    return it->second;
  }

  void validate() const {
    require(!session_id.empty(), "session_id is empty");
    require(!features.empty(), "session '" + session_id + "' has no feature matrices");
    const std::size_t n = responses.image_count();
    for (const auto& [tag, fm] : features) {
      require(tag == fm.source_tag, "feature key '" + tag + "' does not match its source_tag '" + fm.source_tag + "'");
      fm.validate();
      if (fm.rows() != n) {
        throw ValidationError("session '" + session_id + "': features '" + tag + "' have " + std::to_string(fm.rows()) +
                              " rows but responses declare " + std::to_string(n) + " images");
      }
    }
    if (attributes) attributes->validate(n);
    if (!image_paths.empty()) {
      require(image_paths.size() == n, "session '" + session_id + "' lists " + std::to_string(image_paths.size()) +
                                           " image paths for " + std::to_string(n) + " images");
    }
  }
};

}  // namespace oodbench
