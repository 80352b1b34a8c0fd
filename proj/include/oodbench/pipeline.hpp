#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodbench/analysis.hpp"
#include "oodbench/core_data.hpp"
#include "oodbench/encoder.hpp"
#include "oodbench/error.hpp"
#include "oodbench/image_io.hpp"
#include "oodbench/log.hpp"
#include "oodbench/manifest.hpp"
#include "oodbench/parallel.hpp"
#include "oodbench/rng.hpp"
#include "oodbench/shift_metrics.hpp"
#include "oodbench/splits.hpp"

namespace oodbench {

/// Shift metrics for one split in one feature space. A metric that cannot be
/// computed (e.g. too few rows for the classifier) is left empty and logged.
inline ShiftMeasurement measure_shift(const SessionDataset& session, const SplitAssignment& split,
                                      const std::string& source_tag, const MetricToggles& toggles,
                                      std::uint64_t seed, std::size_t workers = 1) {
  const FeatureMatrix& features = session.feature(source_tag);
  const RowMatrix train = features.rows_of(split.train);
  const RowMatrix test = features.rows_of(split.test);
  ShiftMeasurement m{session.session_id, split.name, source_tag, {}, {}, {}, {}, {}};
  auto attempt = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      logger()->warn("session {} split {} ({}): {} not computed: {}", session.session_id, split.name, source_tag,
                     name, e.what());
    }
  };
  if (toggles.ccd) attempt("ccd", [&] { m.ccd = ccd(train, test, workers); });
  if (toggles.mmd) {
    attempt("mmd", [&] {
      const MmdResult r = mmd_squared(train, test, toggles.mmd_bandwidth, workers);
      m.mmd_squared = r.value;
      m.bandwidth = r.bandwidth;
    });
  }
  if (toggles.cov) {
    attempt("covariate shift", [&] {
      const CovariateShiftResult r = covariate_shift(train, test, seed);
      m.covariate_shift = r.value;
      m.classifier_accuracy = r.accuracy;
    });
  }
  return m;
}

struct SplitSpec {
  double ind_fraction = 0.25;
  std::vector<AttributeKind> attributes{kAttributeKinds.begin(), kAttributeKinds.end()};
  std::vector<HoldOutStrategy> strategies{HoldOutStrategy::High, HoldOutStrategy::Low, HoldOutStrategy::Mid};
  MidBand mid_band;
  bool distance = true;
  std::optional<std::size_t> distance_seed_image;  // empty = drawn from the seed
  std::string distance_source_tag;                 // empty = first configured tag
};

struct RunConfig {
  std::vector<std::filesystem::path> sessions;
  std::vector<std::string> source_tags;
  SplitSpec splits;
  EncoderConfig encoder;
  MetricToggles metrics;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "oodbench_out";
  std::size_t workers = 0;  // 0 = all cores

  void validate() const {
    require(!sessions.empty(), "run config: at least one session is required");
    require(!source_tags.empty(), "run config: at least one source_tag is required");
    require(splits.ind_fraction > 0.0 || (!splits.attributes.empty() && !splits.strategies.empty()) || splits.distance,
            "run config: at least one split spec is required");
    require(!encoder.lambda_grid.empty(), "run config: empty lambda grid");
    for (double l : encoder.lambda_grid) require(l >= 0.0 && std::isfinite(l), "run config: lambdas must be finite and >= 0");
    require(encoder.folds >= 2, "run config: need at least 2 CV folds");
    require(encoder.ceiling_repeats >= 1, "run config: ceiling_repeats must be >= 1");
  }
};

/// Parses a run config. Relative session paths and output_dir resolve against
/// `base_dir`. A missing "seed" is rejected.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; };
  try {
    require(j.is_object(), "run config must be a JSON object");
    require(j.contains("seed") && j.at("seed").is_number_integer(), "run config: 'seed' is mandatory (integer)");
    c.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("sessions")) c.sessions.push_back(resolve(s.get<std::string>()));
    c.source_tags = j.at("source_tags").get<std::vector<std::string>>();
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
    c.workers = j.value("workers", c.workers);

    if (j.contains("splits")) {
      const auto& s = j.at("splits");
      c.splits.ind_fraction = s.value("ind_fraction", c.splits.ind_fraction);
      if (s.contains("attributes")) {
        c.splits.attributes.clear();
        for (const auto& a : s.at("attributes")) c.splits.attributes.push_back(parse_attribute_kind(a.get<std::string>()));
      }
      if (s.contains("strategies")) {
        c.splits.strategies.clear();
        for (const auto& a : s.at("strategies")) c.splits.strategies.push_back(parse_strategy(a.get<std::string>()));
      }
      if (s.contains("mid_band")) {
        const auto band = s.at("mid_band").get<std::vector<double>>();
        require(band.size() == 2, "run config: mid_band needs two percentiles");
        c.splits.mid_band = {band[0], band[1]};
      }
      c.splits.distance = s.value("distance", c.splits.distance);
      if (s.contains("distance_seed_image") && !s.at("distance_seed_image").is_null()) {
        c.splits.distance_seed_image = s.at("distance_seed_image").get<std::size_t>();
      }
      c.splits.distance_source_tag = s.value("distance_source_tag", c.splits.distance_source_tag);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      if (e.contains("lambda_grid")) c.encoder.lambda_grid = e.at("lambda_grid").get<std::vector<double>>();
      c.encoder.folds = e.value("folds", c.encoder.folds);
      c.encoder.ceiling_repeats = e.value("ceiling_repeats", c.encoder.ceiling_repeats);
      c.encoder.ceiling_floor = e.value("ceiling_floor", c.encoder.ceiling_floor);
      const std::string source = e.value("ceiling_source", std::string("test"));
      require(source == "test" || source == "all", "run config: ceiling_source must be 'test' or 'all'");
      c.encoder.ceiling_source = source == "all" ? CeilingSource::AllTrials : CeilingSource::TestTrials;
    }
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      c.metrics.ccd = m.value("ccd", c.metrics.ccd);
      c.metrics.mmd = m.value("mmd", c.metrics.mmd);
      c.metrics.cov = m.value("cov", c.metrics.cov);
      if (m.contains("mmd_bandwidth") && !m.at("mmd_bandwidth").is_null()) {
        c.metrics.mmd_bandwidth = m.at("mmd_bandwidth").get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

/// All splits configured for one session: InD, attribute hold-outs (degenerate
/// ones are skipped with a warning), then dist/ind, dist/near, dist/far.
inline std::vector<SplitAssignment> build_splits(const SessionDataset& session, const RunConfig& config) {
  const std::string& sid = session.session_id;
  std::vector<SplitAssignment> splits;
  if (config.splits.ind_fraction > 0.0) {
    splits.push_back(ind_split(session.image_count(), config.splits.ind_fraction, derive_seed(config.seed, sid + "/ind")));
  }
  if (!config.splits.attributes.empty() && !config.splits.strategies.empty()) {
    require(session.attributes.has_value(), "session '" + sid + "' has no attribute table");
    for (AttributeKind kind : config.splits.attributes) {
      for (HoldOutStrategy strategy : config.splits.strategies) {
        try {
          splits.push_back(attribute_split(session.attributes->column(kind), strategy, to_string(kind),
                                           config.splits.mid_band));
        } catch (const ValidationError& e) {
          logger()->warn("session {}: skipping split: {}", sid, e.what());
        }
      }
    }
  }
  if (config.splits.distance) {
    const std::string& tag =
        config.splits.distance_source_tag.empty() ? config.source_tags.front() : config.splits.distance_source_tag;
    const DistanceSplit d = distance_split(session.feature(tag), config.splits.distance_seed_image,
                                           derive_seed(config.seed, sid + "/distance"));
    splits.push_back(d.ind);
    splits.push_back(d.near_split());
    splits.push_back(d.far_split());
  }
  return splits;
}

struct SessionOutput {
  std::string session_id;
  std::vector<SplitAssignment> splits;
  std::vector<ShiftMeasurement> shifts;
  std::vector<ResultRow> rows;
};

/// Splits, shift metrics and encoder fits for one loaded session.
inline SessionOutput process_session(SessionDataset session, const RunConfig& config, std::size_t workers) {
  const std::string sid = session.session_id;
  for (const auto& tag : config.source_tags) session.feature(tag);
  const bool needs_attributes = !config.splits.attributes.empty() && !config.splits.strategies.empty();
  if (needs_attributes && !session.attributes) {
    require(!session.image_paths.empty(), "session '" + sid + "' has neither attributes nor images");
    compute_all(session, workers);
  }
  SessionOutput out;
  out.session_id = sid;
  out.splits = build_splits(session, config);
  for (const auto& split : out.splits) {
    for (const auto& tag : config.source_tags) {
      const std::string stream = sid + "/" + split.name + "/" + tag;
      out.shifts.push_back(
          measure_shift(session, split, tag, config.metrics, derive_seed(config.seed, "shift/" + stream), workers));
      for (auto& r : fit_session(session, split, tag, config.encoder, derive_seed(config.seed, "fit/" + stream), workers)) {
        out.rows.push_back({sid, split.name, tag, r});
      }
    }
  }
  return out;
}

struct PipelineOutcome {
  BenchmarkReport report;
  std::vector<std::string> succeeded;
  std::vector<std::string> failed;  // manifest paths
};

/// Runs every session, writes encoding_results.csv, shift_measurements.jsonl,
/// splits.jsonl and the report files into config.output_dir. A failing session
/// is logged and left out; if none succeeds a ValidationError is thrown.
inline PipelineOutcome run_pipeline(const RunConfig& config) {
  config.validate();
  const std::size_t workers = config.workers == 0 ? default_workers() : config.workers;
  const std::size_t n_sessions = config.sessions.size();
  const std::size_t outer = std::min(workers, n_sessions);
  const std::size_t inner = std::max<std::size_t>(1, workers / outer);

  std::vector<std::optional<SessionOutput>> outputs(n_sessions);
  parallel_for(n_sessions, outer, [&](std::size_t i) {
    try {
      outputs[i] = process_session(load_session(config.sessions[i]), config, inner);
    } catch (const std::exception& e) {
      logger()->error("session {} failed: {}", config.sessions[i].string(), e.what());
    }
  });

  PipelineOutcome outcome;
  std::vector<ResultRow> rows;
  std::vector<ShiftMeasurement> shifts;
  std::filesystem::create_directories(config.output_dir);
  std::ofstream split_out(config.output_dir / "splits.jsonl", std::ios::trunc);
  if (!split_out) throw IoError("cannot write into " + config.output_dir.string());
  for (std::size_t i = 0; i < n_sessions; ++i) {
    if (!outputs[i]) {
      outcome.failed.push_back(config.sessions[i].string());
      continue;
    }
    SessionOutput& o = *outputs[i];
    outcome.succeeded.push_back(o.session_id);
    for (const auto& s : o.splits) {
      nlohmann::json j = to_json(s);
      j["session"] = o.session_id;
      split_out << j.dump() << '\n';
    }
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
    shifts.insert(shifts.end(), o.shifts.begin(), o.shifts.end());
  }
  if (outcome.succeeded.empty()) throw ValidationError("no session completed successfully");

  write_encoding_csv(config.output_dir / "encoding_results.csv", rows);
  write_shift_jsonl(config.output_dir / "shift_measurements.jsonl", shifts);
  outcome.report = build_report(rows, std::move(shifts));
  write_report(outcome.report, config.output_dir);
  logger()->info("{} sessions done, {} failed", outcome.succeeded.size(), outcome.failed.size());
  return outcome;
}

}  // namespace oodbench
