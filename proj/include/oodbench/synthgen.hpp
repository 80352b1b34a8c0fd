#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "oodbench/attributes.hpp"
#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"
#include "oodbench/image_io.hpp"
#include "oodbench/manifest.hpp"
#include "oodbench/rng.hpp"
#include "oodbench/tensor_io.hpp"

namespace oodbench::synth {

enum class GroundTruthKind { Linear, Nonlinear };
enum class ImageMode { FeaturesOnly, ProceduralRasters };

struct SynthConfig {
  std::string session_id = "synth";
  std::string source_tag = "synth/features";
  std::size_t n_images = 800;
  std::size_t dim = 32;
  std::size_t n_neurons = 24;
  std::size_t trials = 4;
  std::size_t trial_jitter = 0;  // each image gets trials + U{0..jitter} trials
  GroundTruthKind ground_truth = GroundTruthKind::Nonlinear;
  std::size_t hidden_width = 16;
  double hidden_gain = 2.0;  // pre-activation scale; larger saturates the tanh more
  double noise_sigma = 1.0;
  double noise_sigma_spread = 0.0;  // per-neuron sigma drawn from [sigma, sigma + spread]
  std::size_t n_components = 6;
  double component_spread = 2.5;  // std of mixture means around the global offset
  double offset = 4.0;            // shared offset so rows point into one orthant-like cone
  double baseline_rate = 12.0;
  double rate_gain = 3.0;
  ImageMode image_mode = ImageMode::FeaturesOnly;
  std::size_t raster_size = 16;
  std::uint64_t seed = 0;

  void validate() const {
    require(!session_id.empty(), "synth: empty session_id");
    require(n_images >= 2 && dim >= 1 && n_neurons >= 1 && trials >= 1, "synth: all counts must be >= 1 (images >= 2)");
    require(n_components >= 1 && hidden_width >= 1, "synth: component and hidden counts must be >= 1");
    require(noise_sigma >= 0.0 && noise_sigma_spread >= 0.0, "synth: noise sigma must be >= 0");
    require(raster_size >= 2, "synth: raster_size must be >= 2");
  }
};

enum class Pattern { Uniform, Stripes, Gradient, Noise };

/// Colors and pixel counts of one procedural image.
struct Palette {
  Pattern pattern = Pattern::Uniform;
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<std::size_t> counts;
};

struct GroundTruth {
  std::vector<std::size_t> component;  // mixture component per image
  RowMatrix response_mean;             // N x E noiseless rates
  std::vector<double> noise_sigma;     // per neuron
  AttributeTable attributes;           // from palettes, not from pixels
  std::vector<Palette> palettes;
};

namespace detail {

// Attribute values from a palette's colors and counts. Mirrors the definitions
// of the attributes module but works on the palette, not on pixels.
inline std::array<double, 5> palette_attributes(const Palette& palette) {
  double total = 0.0, luma = 0.0, sat = 0.0, temp = 0.0, hx = 0.0, hy = 0.0, chroma_w = 0.0;
  std::vector<double> lumas;
  for (std::size_t i = 0; i < palette.colors.size(); ++i) {
    const double w = static_cast<double>(palette.counts[i]);
    const auto [r8, g8, b8] = palette.colors[i];
    const double r = r8 / 255.0, g = g8 / 255.0, b = b8 / 255.0;
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    lumas.push_back(y);
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    total += w;
    luma += w * y;
    sat += w * (mx > 0.0 ? (mx - mn) / mx : 0.0);
    temp += w * (r - b);
    if (mx > mn) {
      double h;
      if (r8 >= g8 && r8 >= b8) h = std::fmod((g - b) / (mx - mn) + 6.0, 6.0);
      else if (g8 >= b8) h = (b - r) / (mx - mn) + 2.0;
      else h = (r - g) / (mx - mn) + 4.0;
      hx += w * std::cos(2.0 * std::numbers::pi * h / 6.0);
      hy += w * std::sin(2.0 * std::numbers::pi * h / 6.0);
      chroma_w += w;
    }
  }
  const double mean_luma = luma / total;
  double var = 0.0;
  for (std::size_t i = 0; i < lumas.size(); ++i) {
    var += static_cast<double>(palette.counts[i]) * (lumas[i] - mean_luma) * (lumas[i] - mean_luma);
  }
  double hue = 0.0;
  if (chroma_w > 0.0 && std::hypot(hx, hy) > 1e-12 * chroma_w) {
    hue = std::atan2(hy, hx) / (2.0 * std::numbers::pi);
    if (hue < 0.0) hue += 1.0;
    if (hue >= 1.0) hue = 0.0;
  }
  std::array<double, 5> out{};
  out[static_cast<std::size_t>(AttributeKind::Hue)] = hue;
  out[static_cast<std::size_t>(AttributeKind::Saturation)] = sat / total;
  out[static_cast<std::size_t>(AttributeKind::Intensity)] = std::clamp(mean_luma, 0.0, 1.0);
  out[static_cast<std::size_t>(AttributeKind::Temperature)] = temp / total;
  out[static_cast<std::size_t>(AttributeKind::Contrast)] = std::sqrt(var / total);
  return out;
}

inline std::array<std::uint8_t, 3> hsv_to_rgb8(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  auto q = [](double u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0)); };
  return {q(r + m), q(g + m), q(b + m)};
}

inline std::array<std::uint8_t, 3> scale_color(const std::array<std::uint8_t, 3>& c, double factor) {
  std::array<std::uint8_t, 3> out{};
  for (int k = 0; k < 3; ++k) out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(c[k] * factor, 0.0, 255.0)));
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

/// Renders a palette. Pixel counts per color match palette.counts exactly.
inline RgbImage render(const Palette& palette, std::size_t size, Rng& rng) {
  RgbImage img{size, size, 3, std::vector<std::uint8_t>(size * size * 3)};
  std::vector<std::size_t> color_of(size * size, 0);
  switch (palette.pattern) {
    case Pattern::Uniform: break;
    case Pattern::Stripes:
    case Pattern::Gradient: {
      // Color i occupies a contiguous run of counts[i] pixels in column-major
      // order, giving vertical bands.
      std::size_t pos = 0;
      for (std::size_t c = 0; c < palette.colors.size(); ++c) {
        for (std::size_t k = 0; k < palette.counts[c]; ++k, ++pos) {
          const std::size_t x = pos / size, y = pos % size;
          color_of[y * size + x] = c;
        }
      }
      break;
    }
    case Pattern::Noise: {
      std::size_t pos = 0;
      for (std::size_t c = 0; c < palette.colors.size(); ++c) {
        for (std::size_t k = 0; k < palette.counts[c]; ++k) color_of[pos++] = c;
      }
      std::shuffle(color_of.begin(), color_of.end(), rng);
      break;
    }
  }
  for (std::size_t i = 0; i < color_of.size(); ++i) {
    const auto& c = palette.colors[color_of[i]];
    std::copy(c.begin(), c.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return img;
}

struct Generated {
  SessionDataset session;
  GroundTruth truth;
};

/// Synthetic session with known ground truth. Features come from a Gaussian
/// mixture; each neuron's mean rate is a linear or random two-layer tanh map of
/// the features, and trials add Gaussian noise (clipped at 0). Image attributes
/// are driven by fixed random projections of the features through procedural
/// palettes, so attribute hold-outs are also feature-space shifts.
/// `image_dir` is required for ProceduralRasters mode.
inline Generated generate_session(const SynthConfig& config, const std::optional<std::filesystem::path>& image_dir = {}) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(config.n_images);
  const auto d = static_cast<Eigen::Index>(config.dim);
  const auto e_count = static_cast<Eigen::Index>(config.n_neurons);
  const std::uint64_t root = config.seed;
  std::normal_distribution<double> normal(0.0, 1.0);

  Generated out;
  GroundTruth& truth = out.truth;

  // Features.
  Rng feat_rng = make_rng(root, "features");
  Eigen::VectorXd offset(d);
  for (Eigen::Index j = 0; j < d; ++j) offset(j) = config.offset * (0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(feat_rng));
  RowMatrix means(static_cast<Eigen::Index>(config.n_components), d);
  for (Eigen::Index k = 0; k < means.rows(); ++k) {
    for (Eigen::Index j = 0; j < d; ++j) means(k, j) = offset(j) + config.component_spread * normal(feat_rng);
  }
  RowMatrixF features(n, d);
  truth.component.resize(config.n_images);
  std::uniform_int_distribution<std::size_t> pick_component(0, config.n_components - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = pick_component(feat_rng);
    truth.component[static_cast<std::size_t>(i)] = k;
    for (Eigen::Index j = 0; j < d; ++j) {
      features(i, j) = static_cast<float>(means(static_cast<Eigen::Index>(k), j) + normal(feat_rng));
    }
  }
  const RowMatrix x = features.cast<double>();
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const RowMatrix xc = x.rowwise() - x_mean;
  const double x_scale = std::sqrt(xc.array().square().sum() / static_cast<double>(n * d));

  // Ground-truth tuning.
  Rng truth_rng = make_rng(root, "truth");
  RowMatrix drive(n, e_count);
  if (config.ground_truth == GroundTruthKind::Linear) {
    RowMatrix w(d, e_count);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(truth_rng);
    drive = xc * w;
  } else {
    const auto h = static_cast<Eigen::Index>(config.hidden_width);
    RowMatrix w1(d, h), w2(h, e_count);
    Eigen::RowVectorXd b1(h);
    const double w1_scale = config.hidden_gain / (x_scale * std::sqrt(static_cast<double>(d)));
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = w1_scale * normal(truth_rng);
    for (Eigen::Index i = 0; i < h; ++i) b1(i) = 0.5 * normal(truth_rng);
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = normal(truth_rng);
    const RowMatrix hidden = ((xc * w1).rowwise() + b1).array().tanh().matrix();
    drive = hidden * w2;
  }
  truth.response_mean.resize(n, e_count);
  for (Eigen::Index e = 0; e < e_count; ++e) {
    const double mu = drive.col(e).mean();
    double sd = std::sqrt((drive.col(e).array() - mu).square().mean());
    if (!(sd > 0.0)) sd = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      truth.response_mean(i, e) =
          std::max(0.0, config.baseline_rate + config.rate_gain * (drive(i, e) - mu) / sd);
    }
  }

  // Trials.
  Rng noise_rng = make_rng(root, "noise");
  truth.noise_sigma.resize(config.n_neurons);
  for (auto& s : truth.noise_sigma) {
    s = config.noise_sigma + config.noise_sigma_spread * std::uniform_real_distribution<double>(0.0, 1.0)(noise_rng);
  }
  std::vector<std::uint32_t> trial_counts(config.n_images);
  for (auto& t : trial_counts) {
    t = static_cast<std::uint32_t>(config.trials +
                                   std::uniform_int_distribution<std::size_t>(0, config.trial_jitter)(noise_rng));
  }
  std::vector<float> values;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::uint32_t t = 0; t < trial_counts[static_cast<std::size_t>(i)]; ++t) {
      for (Eigen::Index e = 0; e < e_count; ++e) {
        const double sigma = truth.noise_sigma[static_cast<std::size_t>(e)];
        const double v = truth.response_mean(i, e) + (sigma > 0.0 ? sigma * normal(noise_rng) : 0.0);
        values.push_back(static_cast<float>(std::max(0.0, v)));
      }
    }
  }

  // Attributes via palettes driven by feature projections.
  Rng attr_rng = make_rng(root, "palette");
  RowMatrix directions(d, 4);
  for (Eigen::Index i = 0; i < directions.size(); ++i) directions.data()[i] = normal(attr_rng);
  for (Eigen::Index c = 0; c < 4; ++c) directions.col(c).normalize();
  RowMatrix latent = xc * directions;
  for (Eigen::Index c = 0; c < 4; ++c) {
    const double sd = std::sqrt(latent.col(c).array().square().mean());
    latent.col(c) /= (sd > 0.0 ? sd : 1.0);
  }
  truth.attributes = AttributeTable::with_rows(config.n_images);
  truth.palettes.resize(config.n_images);
  const std::size_t pixels = config.raster_size * config.raster_size;
  // Uniform patches are rare so that contrast has few ties at zero.
  std::discrete_distribution<int> pattern_pick({1.0, 3.0, 3.0, 3.0});
  for (Eigen::Index i = 0; i < n; ++i) {
    Palette& p = truth.palettes[static_cast<std::size_t>(i)];
    const double hue = detail::sigmoid(latent(i, 0));
    const double sat = 0.1 + 0.85 * detail::sigmoid(latent(i, 1));
    const double val = 0.25 + 0.7 * detail::sigmoid(latent(i, 2));
    const double depth = 0.6 * detail::sigmoid(latent(i, 3));
    const auto base = detail::hsv_to_rgb8(hue, sat, val);
    const auto lo = detail::scale_color(base, 1.0 - depth);
    const auto hi = detail::scale_color(base, 1.0 + depth);
    p.pattern = static_cast<Pattern>(pattern_pick(attr_rng));
    switch (p.pattern) {
      case Pattern::Uniform:
        p.colors = {base};
        p.counts = {pixels};
        break;
      case Pattern::Stripes:
        p.colors = {lo, hi};
        p.counts = {pixels / 2, pixels - pixels / 2};
        break;
      case Pattern::Gradient: {
        const std::size_t levels = config.raster_size;
        for (std::size_t l = 0; l < levels; ++l) {
          const double f = (1.0 - depth) + 2.0 * depth * static_cast<double>(l) / static_cast<double>(levels - 1);
          p.colors.push_back(detail::scale_color(base, f));
          p.counts.push_back(config.raster_size);
        }
        break;
      }
      case Pattern::Noise: {
        const std::size_t n_hi = std::binomial_distribution<std::size_t>(pixels, 0.5)(attr_rng);
        p.colors = {lo, hi};
        p.counts = {pixels - n_hi, n_hi};
        break;
      }
    }
    truth.attributes.set_row(static_cast<std::size_t>(i), detail::palette_attributes(p));
  }

  SessionDataset& session = out.session;
  session.session_id = config.session_id;
  session.features.emplace(config.source_tag, FeatureMatrix{std::move(features), config.source_tag});
  session.responses = ResponseTensor(config.n_neurons, std::move(trial_counts), std::move(values));
  session.attributes = truth.attributes;

  if (config.image_mode == ImageMode::ProceduralRasters) {
    require(image_dir.has_value(), "synth: ProceduralRasters mode needs an image directory");
    std::filesystem::create_directories(*image_dir);
    Rng render_rng = make_rng(root, "render");
    for (std::size_t i = 0; i < config.n_images; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%05zu.png", i);
      const auto path = *image_dir / name;
      write_image(path, render(truth.palettes[i], config.raster_size, render_rng));
      session.image_paths.push_back(path.string());
    }
  }
  session.validate();
  return out;
}

inline std::string to_string(GroundTruthKind k) { return k == GroundTruthKind::Linear ? "linear" : "nonlinear"; }
inline std::string to_string(ImageMode m) { return m == ImageMode::FeaturesOnly ? "features" : "rasters"; }

inline SynthConfig config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.session_id = j.value("session_id", c.session_id);
    c.source_tag = j.value("source_tag", c.source_tag);
    c.n_images = j.value("n_images", c.n_images);
    c.dim = j.value("dim", c.dim);
    c.n_neurons = j.value("n_neurons", c.n_neurons);
    c.trials = j.value("trials", c.trials);
    c.trial_jitter = j.value("trial_jitter", c.trial_jitter);
    const std::string gt = j.value("ground_truth", to_string(c.ground_truth));
    if (gt == "linear") c.ground_truth = GroundTruthKind::Linear;
    else if (gt == "nonlinear") c.ground_truth = GroundTruthKind::Nonlinear;
    else throw ValidationError("synth: ground_truth must be 'linear' or 'nonlinear'");
    c.hidden_width = j.value("hidden_width", c.hidden_width);
    c.hidden_gain = j.value("hidden_gain", c.hidden_gain);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.noise_sigma_spread = j.value("noise_sigma_spread", c.noise_sigma_spread);
    c.n_components = j.value("n_components", c.n_components);
    c.component_spread = j.value("component_spread", c.component_spread);
    c.offset = j.value("offset", c.offset);
    c.baseline_rate = j.value("baseline_rate", c.baseline_rate);
    c.rate_gain = j.value("rate_gain", c.rate_gain);
    const std::string mode = j.value("image_mode", to_string(c.image_mode));
    if (mode == "features") c.image_mode = ImageMode::FeaturesOnly;
    else if (mode == "rasters") c.image_mode = ImageMode::ProceduralRasters;
    else throw ValidationError("synth: image_mode must be 'features' or 'rasters'");
    c.raster_size = j.value("raster_size", c.raster_size);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"session_id", c.session_id},     {"source_tag", c.source_tag},
          {"n_images", c.n_images},         {"dim", c.dim},
          {"n_neurons", c.n_neurons},       {"trials", c.trials},
          {"trial_jitter", c.trial_jitter}, {"ground_truth", to_string(c.ground_truth)},
          {"hidden_width", c.hidden_width}, {"hidden_gain", c.hidden_gain},
          {"noise_sigma", c.noise_sigma},   {"noise_sigma_spread", c.noise_sigma_spread},
          {"n_components", c.n_components}, {"component_spread", c.component_spread},
          {"offset", c.offset},             {"baseline_rate", c.baseline_rate},
          {"rate_gain", c.rate_gain},       {"image_mode", to_string(c.image_mode)},
          {"raster_size", c.raster_size},   {"seed", c.seed}};
}

/// Generates a session into `dir`: the manifest and payloads, images under
/// images/ in raster mode, ground_truth.json and the noiseless rates in
/// ground_truth_means.bin. Returns the manifest path.
inline std::filesystem::path write_session(const SynthConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::optional<std::filesystem::path> image_dir;
  if (config.image_mode == ImageMode::ProceduralRasters) image_dir = dir / "images";
  const Generated g = generate_session(config, image_dir);
  const auto manifest = save_session(g.session, dir);

  const auto& means = g.truth.response_mean;
  std::vector<float> flat(static_cast<std::size_t>(means.size()));
  for (Eigen::Index i = 0; i < means.size(); ++i) flat[static_cast<std::size_t>(i)] = static_cast<float>(means.data()[i]);
  const std::uint64_t dims[] = {static_cast<std::uint64_t>(means.rows()), static_cast<std::uint64_t>(means.cols())};
  io::write_tensor(dir / "ground_truth_means.bin", dims, flat);

  nlohmann::json j = {{"config", to_json(config)},
                      {"component", g.truth.component},
                      {"noise_sigma", g.truth.noise_sigma},
                      {"means_file", "ground_truth_means.bin"}};
  std::ofstream out(dir / "ground_truth.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "ground_truth.json").string());
  out << j.dump(2) << '\n';
  return manifest;
}

}  // namespace oodbench::synth
