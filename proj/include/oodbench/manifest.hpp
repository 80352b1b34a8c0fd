#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"
#include "oodbench/tensor_io.hpp"

namespace oodbench {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kManifestFormat = "oodbench-manifest/1";
inline constexpr const char* kAttributeCsvHeader = "image_index,hue,saturation,intensity,temperature,contrast";

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_attribute_csv(const fs::path& path, const AttributeTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kAttributeCsvHeader << '\n';
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out << i;
    for (const auto& column : table.columns) out << ',' << format_double(column[i]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline AttributeTable read_attribute_csv(const fs::path& path, std::size_t expected_rows) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kAttributeCsvHeader) {
    throw IoError(path.string() + ": expected header '" + std::string(kAttributeCsvHeader) + "'");
  }
  AttributeTable table = AttributeTable::with_rows(expected_rows);
  std::vector<bool> seen(expected_rows, false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 6 columns");
    std::size_t index = 0;
    try {
      index = std::stoul(cells[0]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad image_index '" + cells[0] + "'");
    }
    if (index >= expected_rows || seen[index]) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": image_index " + cells[0] +
                    " out of range or duplicated");
    }
    seen[index] = true;
    for (std::size_t k = 0; k < 5; ++k) {
      char* end = nullptr;
      const double v = std::strtod(cells[k + 1].c_str(), &end);
      if (end == cells[k + 1].c_str() || !std::isfinite(v)) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": non-finite value in column '" +
                      to_string(kAttributeKinds[k]) + "'");
      }
      table.columns[k][index] = v;
    }
  }
  for (std::size_t i = 0; i < expected_rows; ++i) {
    if (!seen[i]) throw IoError(path.string() + ": no row for image_index " + std::to_string(i));
  }
  return table;
}

inline std::string tag_to_filename(const std::string& tag) {
  std::string out;
  for (char c : tag) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

/// Writes the manifest, binary payloads and (when present) the attribute CSV
/// into `dir`. Returns the manifest path.
inline fs::path save_session(const SessionDataset& session, const fs::path& dir) {
  session.validate();
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = kManifestFormat;
  manifest["session_id"] = session.session_id;
  manifest["image_count"] = session.image_count();
  manifest["neuron_count"] = session.responses.neuron_count();

  json features = json::array();
  for (const auto& [tag, fm] : session.features) {
    const std::string file = "features_" + tag_to_filename(tag) + ".bin";
    const std::vector<std::uint64_t> dims = {fm.rows(), fm.cols()};
    io::write_tensor(dir / file, dims, std::span<const float>(fm.data.data(), static_cast<std::size_t>(fm.data.size())));
    features.push_back({{"source_tag", tag}, {"file", file}, {"dims", dims}});
  }
  manifest["features"] = features;

  const auto& values = session.responses.values();
  const std::vector<std::uint64_t> rdims = {values.size()};
  io::write_tensor(dir / "responses.bin", rdims, values);
  manifest["responses"] = {{"file", "responses.bin"}, {"trial_counts", session.responses.trial_counts()}};

  if (!session.image_paths.empty()) {
    json paths = json::array();
    const fs::path base = fs::absolute(dir);
    for (const auto& p : session.image_paths) {
      const fs::path abs = fs::absolute(p);
      const fs::path rel = abs.lexically_relative(base);
      paths.push_back((!rel.empty() && *rel.begin() != "..") ? rel.generic_string() : abs.generic_string());
    }
    manifest["image_paths"] = paths;
  }
  if (session.attributes) {
    write_attribute_csv(dir / "attributes.csv", *session.attributes);
    manifest["attributes"] = "attributes.csv";
  }

  const fs::path manifest_path = dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest_path.string() + " for writing");
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

namespace detail {

inline SessionDataset load_session_unchecked(const fs::path& manifest_path);

}  // namespace detail

inline SessionDataset load_session(const fs::path& manifest_path) {
  try {
    return detail::load_session_unchecked(manifest_path);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
}

inline SessionDataset detail::load_session_unchecked(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing file: " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  const std::string where = manifest_path.string();

  SessionDataset session;
  std::size_t image_count = 0, neuron_count = 0;
  try {
    session.session_id = manifest.at("session_id").get<std::string>();
    image_count = manifest.at("image_count").get<std::size_t>();
    neuron_count = manifest.at("neuron_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw IoError(where + ": " + e.what());
  }

  const json& responses = manifest.at("responses");
  auto trial_counts = responses.at("trial_counts").get<std::vector<std::uint32_t>>();
  if (trial_counts.size() != image_count) {
    throw ValidationError(where + ": trial_counts lists " + std::to_string(trial_counts.size()) +
                          " images but image_count is " + std::to_string(image_count));
  }
  const fs::path response_file = base / responses.at("file").get<std::string>();
  io::Tensor rt = io::read_tensor(response_file);
  if (rt.dims.size() != 1) throw ValidationError(response_file.string() + ": responses must be a rank-1 payload");
  try {
    session.responses = ResponseTensor(neuron_count, std::move(trial_counts), std::move(rt.values));
  } catch (const ValidationError& e) {
    throw ValidationError(response_file.string() + ": " + e.what());
  }

  for (const json& entry : manifest.at("features")) {
    FeatureMatrix fm;
    fm.source_tag = entry.at("source_tag").get<std::string>();
    const fs::path file = base / entry.at("file").get<std::string>();
    const auto declared = entry.at("dims").get<std::vector<std::uint64_t>>();
    io::Tensor t = io::read_tensor(file);
    if (t.dims != declared || t.dims.size() != 2) {
      std::string got, want;
      for (auto d : t.dims) got += std::to_string(d) + " ";
      for (auto d : declared) want += std::to_string(d) + " ";
      throw ValidationError(file.string() + ": payload dims [ " + got + "] do not match manifest dims [ " + want + "]");
    }
    if (t.dims[0] != image_count) {
      throw ValidationError(file.string() + ": feature file has " + std::to_string(t.dims[0]) +
                            " rows but responses declare " + std::to_string(image_count) + " images");
    }
    fm.data = Eigen::Map<const RowMatrixF>(t.values.data(), static_cast<Eigen::Index>(t.dims[0]),
                                           static_cast<Eigen::Index>(t.dims[1]));
    try {
      fm.validate();
    } catch (const ValidationError& e) {
      throw ValidationError(file.string() + ": " + e.what());
    }
    if (session.features.contains(fm.source_tag)) {
      throw ValidationError(where + ": duplicate source_tag '" + fm.source_tag + "'");
    }
    session.features.emplace(fm.source_tag, std::move(fm));
  }

  if (manifest.contains("image_paths")) {
    for (const json& p : manifest.at("image_paths")) {
      fs::path path = p.get<std::string>();
      session.image_paths.push_back((path.is_absolute() ? path : base / path).string());
    }
  }
  if (manifest.contains("attributes")) {
    session.attributes = read_attribute_csv(base / manifest.at("attributes").get<std::string>(), image_count);
  }
  session.validate();
  return session;
}

}  // namespace oodbench
