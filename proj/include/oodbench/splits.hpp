#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"
#include "oodbench/rng.hpp"
#include "oodbench/shift_metrics.hpp"
#include "oodbench/stats.hpp"

namespace oodbench {

enum class HoldOutStrategy { High, Low, Mid };

inline std::string to_string(HoldOutStrategy s) {
  switch (s) {
    case HoldOutStrategy::High: return "high";
    case HoldOutStrategy::Low: return "low";
    case HoldOutStrategy::Mid: return "mid";
  }
  return "unknown";
}

inline HoldOutStrategy parse_strategy(const std::string& name) {
  if (name == "high") return HoldOutStrategy::High;
  if (name == "low") return HoldOutStrategy::Low;
  if (name == "mid") return HoldOutStrategy::Mid;
  throw ValidationError("unknown hold-out strategy '" + name + "'");
}

struct SplitProvenance {
  std::string strategy;   // "random", "high", "low", "mid", "distance"
  std::string attribute;  // attribute name, "random" or "distance"
  std::vector<double> cutoffs;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seed_image;
};

/// A train/test partition of image indices; all index lists are sorted.
struct SplitAssignment {
  std::string name;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<std::size_t> discarded;
  SplitProvenance provenance;

  /// Disjoint, covering {0..n-1}, with non-empty train and test.
  void validate(std::size_t n) const {
    require(!train.empty(), "split '" + name + "' has an empty train set");
    require(!test.empty(), "split '" + name + "' has an empty test set");
    std::vector<int> owner(n, 0);
    for (const auto* set : {&train, &test, &discarded}) {
      for (std::size_t i : *set) {
        require(i < n, "split '" + name + "' references image " + std::to_string(i) + " beyond " + std::to_string(n));
        require(owner[i] == 0, "split '" + name + "' assigns image " + std::to_string(i) + " twice");
        owner[i] = 1;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      require(owner[i] == 1, "split '" + name + "' does not cover image " + std::to_string(i));
    }
  }

  std::size_t image_count() const { return train.size() + test.size() + discarded.size(); }
};

struct MidBand {
  double lower = 42.5;
  double upper = 62.5;
};

/// Random hold-out of round(fraction * n) images.
inline SplitAssignment ind_split(std::size_t n_images, double fraction, std::uint64_t seed) {
  require(n_images >= 8, "ind_split needs at least 8 images, got " + std::to_string(n_images));
  require(fraction > 0.0 && fraction < 1.0, "ind_split fraction must lie in (0, 1)");
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_images)));
  require(n_test >= 1 && n_test < n_images, "ind_split fraction leaves an empty train or test set");

  std::vector<std::size_t> order(n_images);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  SplitAssignment split;
  split.name = "ind";
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  split.provenance = {"random", "random", {fraction}, seed, std::nullopt};
  return split;
}

/// Percentile hold-out on one attribute. Values equal to a cut-off stay in
/// train: High tests values > p75, Low values < p25, Mid values strictly
/// inside (p_lower, p_upper).
inline SplitAssignment attribute_split(std::span<const double> values, HoldOutStrategy strategy,
                                       const std::string& attribute = "attribute", MidBand band = {}) {
  require(values.size() >= 8, "attribute_split needs at least 8 images, got " + std::to_string(values.size()));
  for (double v : values) require(std::isfinite(v), "attribute_split: non-finite attribute value");
  require(band.lower < band.upper, "mid band lower percentile must be below the upper one");

  std::vector<double> cutoffs;
  std::function<bool(double)> select;
  switch (strategy) {
    case HoldOutStrategy::High: {
      const double cut = stats::percentile(values, 75.0);
      cutoffs = {cut};
      select = [cut](double v) { return v > cut; };
      break;
    }
    case HoldOutStrategy::Low: {
      const double cut = stats::percentile(values, 25.0);
      cutoffs = {cut};
      select = [cut](double v) { return v < cut; };
      break;
    }
    case HoldOutStrategy::Mid: {
      const double lo = stats::percentile(values, band.lower);
      const double hi = stats::percentile(values, band.upper);
      cutoffs = {lo, hi};
      select = [lo, hi](double v) { return lo < v && v < hi; };
      break;
    }
  }

  SplitAssignment split;
  split.name = "attr/" + attribute + "/" + to_string(strategy);
  for (std::size_t i = 0; i < values.size(); ++i) (select(values[i]) ? split.test : split.train).push_back(i);
  if (split.test.empty() || split.train.empty()) {
    throw ValidationError("degenerate attribute distribution for '" + attribute + "' (" + to_string(strategy) +
                          " hold-out leaves an empty set)");
  }
  split.provenance = {to_string(strategy), attribute, cutoffs, std::nullopt, std::nullopt};
  return split;
}

/// Cosine-distance splits around a seed image.
struct DistanceSplit {
  SplitAssignment ind;                // train + InD test; everything else discarded
  std::vector<std::size_t> near_ood;  // image indices at ranks (90%, 95%]
  std::vector<std::size_t> far_ood;   // image indices at ranks (95%, 100%]
  std::vector<std::size_t> gap;       // image indices at ranks (80%, 90%], never used
  std::vector<std::size_t> order;     // image indices by increasing distance to the seed
  std::size_t seed_image = 0;

  /// Same train set, tested on the given OOD chunk.
  SplitAssignment ood_split(const std::string& name, const std::vector<std::size_t>& test) const {
    SplitAssignment split;
    split.name = name;
    split.train = ind.train;
    split.test = test;
    std::vector<char> used(order.size(), 0);
    for (std::size_t i : split.train) used[i] = 1;
    for (std::size_t i : split.test) used[i] = 1;
    for (std::size_t i = 0; i < used.size(); ++i) {
      if (!used[i]) split.discarded.push_back(i);
    }
    split.provenance = ind.provenance;
    return split;
  }

  SplitAssignment near_split() const { return ood_split("dist/near", near_ood); }
  SplitAssignment far_split() const { return ood_split("dist/far", far_ood); }
};

namespace detail {

// Chunk boundary at `percent` of n ranks, rounded half up.
inline std::size_t rank_cut(std::size_t n, std::size_t percent) { return (n * percent + 50) / 100; }

}  // namespace detail

/// Sorts images by cosine distance to a seed image and cuts the ranking into
/// bottom 80% (train + InD test), a discarded 80-90% band, Near-OOD 90-95% and
/// Far-OOD 95-100%. The InD test set is a uniform subset of the first chunk
/// with as many images as Near-OOD. `seed_image` empty picks one at random.
inline DistanceSplit distance_split(const FeatureMatrix& features, std::optional<std::size_t> seed_image,
                                    std::uint64_t seed) {
  const std::size_t n = features.rows();
  require(n >= 20, "distance_split needs at least 20 images, got " + std::to_string(n));
  Rng rng(seed);
  const std::size_t anchor =
      seed_image ? *seed_image : std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  require(anchor < n, "seed image index out of range");

  const RowMatrix x = features.as_double();
  const auto anchor_row = std::span<const double>(x.row(static_cast<Eigen::Index>(anchor)).data(), x.cols());
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = cosine_distance(std::span<const double>(x.row(static_cast<Eigen::Index>(i)).data(), x.cols()), anchor_row);
  }
  DistanceSplit out;
  out.seed_image = anchor;
  out.order.resize(n);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    if (a == anchor || b == anchor) return a == anchor && b != anchor;
    return dist[a] < dist[b];
  });

  const std::size_t c80 = detail::rank_cut(n, 80);
  const std::size_t c90 = detail::rank_cut(n, 90);
  const std::size_t c95 = detail::rank_cut(n, 95);
  require(c80 < c90 && c90 < c95 && c95 < n, "distance_split: too few images for non-empty chunks");

  std::vector<std::size_t> chunk1(out.order.begin(), out.order.begin() + static_cast<std::ptrdiff_t>(c80));
  out.gap.assign(out.order.begin() + static_cast<std::ptrdiff_t>(c80), out.order.begin() + static_cast<std::ptrdiff_t>(c90));
  out.near_ood.assign(out.order.begin() + static_cast<std::ptrdiff_t>(c90), out.order.begin() + static_cast<std::ptrdiff_t>(c95));
  out.far_ood.assign(out.order.begin() + static_cast<std::ptrdiff_t>(c95), out.order.end());

  const std::size_t n_ind = out.near_ood.size();
  require(n_ind < chunk1.size(), "distance_split: first chunk too small for an InD test set");
  std::vector<std::size_t> pick = chunk1;
  std::shuffle(pick.begin(), pick.end(), rng);

  SplitAssignment& ind = out.ind;
  ind.name = "dist/ind";
  ind.test.assign(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n_ind));
  ind.train.assign(pick.begin() + static_cast<std::ptrdiff_t>(n_ind), pick.end());
  ind.discarded = out.gap;
  ind.discarded.insert(ind.discarded.end(), out.near_ood.begin(), out.near_ood.end());
  ind.discarded.insert(ind.discarded.end(), out.far_ood.begin(), out.far_ood.end());
  for (auto* v : {&ind.test, &ind.train, &ind.discarded, &out.near_ood, &out.far_ood, &out.gap}) {
    std::sort(v->begin(), v->end());
  }
  ind.provenance = {"distance", "distance", {80.0, 90.0, 95.0}, seed, anchor};
  return out;
}

// JSON form: {"name", "provenance": {...}, "train": [...], "test": [...], "discarded": [...]}
inline nlohmann::json to_json(const SplitAssignment& split) {
  nlohmann::json prov = {{"strategy", split.provenance.strategy},
                         {"attribute", split.provenance.attribute},
                         {"cutoffs", split.provenance.cutoffs}};
  if (split.provenance.seed) prov["seed"] = *split.provenance.seed;
  if (split.provenance.seed_image) prov["seed_image"] = *split.provenance.seed_image;
  return {{"name", split.name},
          {"provenance", prov},
          {"train", split.train},
          {"test", split.test},
          {"discarded", split.discarded}};
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  try {
    SplitAssignment split;
    split.name = j.at("name").get<std::string>();
    split.train = j.at("train").get<std::vector<std::size_t>>();
    split.test = j.at("test").get<std::vector<std::size_t>>();
    split.discarded = j.value("discarded", std::vector<std::size_t>{});
    const auto& prov = j.at("provenance");
    split.provenance.strategy = prov.value("strategy", "");
    split.provenance.attribute = prov.value("attribute", "");
    split.provenance.cutoffs = prov.value("cutoffs", std::vector<double>{});
    if (prov.contains("seed")) split.provenance.seed = prov.at("seed").get<std::uint64_t>();
    if (prov.contains("seed_image")) split.provenance.seed_image = prov.at("seed_image").get<std::size_t>();
    return split;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed split JSON: ") + e.what());
  }
}

}  // namespace oodbench
