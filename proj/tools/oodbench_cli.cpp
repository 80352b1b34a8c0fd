#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oodbench/oodbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oodbench;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::string source_tag;
};

std::size_t worker_count(const Common& c) { return c.workers == 0 ? default_workers() : c.workers; }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::uint64_t require_seed(const Common& c) {
  if (!c.seed) throw ValidationError("--seed is required");
  return *c.seed;
}

std::string tag_or_first(const Common& c, const SessionDataset& s) {
  if (!c.source_tag.empty()) return c.source_tag;
  require(!s.features.empty(), "session has no features");
  return s.features.begin()->first;
}

std::vector<SplitAssignment> read_splits(const fs::path& path) {
  const json j = read_json(path);
  std::vector<SplitAssignment> out;
  if (j.is_array()) {
    for (const auto& s : j) out.push_back(split_from_json(s));
  } else {
    out.push_back(split_from_json(j));
  }
  return out;
}

int cmd_attributes(const Common& c, const std::string& in) {
  SessionDataset s = load_session(in);
  const AttributeTable table = compute_all_attributes(s, worker_count(c));
  const fs::path out = c.out.empty() ? fs::path(in).parent_path() / "attributes.csv" : fs::path(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_attribute_csv(out, table);
  return 0;
}

int cmd_split(const Common& c, const std::string& in, const std::string& strategy, const std::string& attribute,
              double fraction, const std::vector<double>& band, std::optional<std::size_t> seed_image) {
  SessionDataset s = load_session(in);
  json out = json::array();
  if (strategy == "ind" || strategy == "random") {
    out.push_back(to_json(ind_split(s.image_count(), fraction, require_seed(c))));
  } else if (strategy == "distance") {
    const DistanceSplit d = distance_split(s.feature(tag_or_first(c, s)), seed_image, require_seed(c));
    for (const auto& split : {d.ind, d.near_split(), d.far_split()}) out.push_back(to_json(split));
  } else {
    require(s.attributes.has_value(), "session has no attribute table; run 'attributes' first");
    require(band.size() == 2, "--mid-band needs two percentiles");
    const AttributeKind kind = parse_attribute_kind(attribute);
    out.push_back(to_json(attribute_split(s.attributes->column(kind), parse_strategy(strategy), to_string(kind),
                                          {band[0], band[1]})));
  }
  if (c.out.empty()) std::cout << out.dump(2) << '\n';
  else write_text(c.out, out.dump(2) + "\n");
  return 0;
}

int cmd_shift(const Common& c, const std::string& in, const std::string& split_file,
              const std::vector<std::string>& metrics) {
  SessionDataset s = load_session(in);
  const std::string tag = tag_or_first(c, s);
  MetricToggles toggles{false, false, false, std::nullopt};
  for (const auto& m : metrics) {
    if (m == "ccd" || m == "all") toggles.ccd = true;
    if (m == "mmd" || m == "all") toggles.mmd = true;
    if (m == "cov" || m == "all") toggles.cov = true;
  }
  const std::uint64_t seed = require_seed(c);
  std::vector<ShiftMeasurement> shifts;
  for (const auto& split : read_splits(split_file)) {
    split.validate(s.image_count());
    shifts.push_back(measure_shift(s, split, tag, toggles, derive_seed(seed, "shift/" + s.session_id + "/" + split.name + "/" + tag),
                                   worker_count(c)));
  }
  if (c.out.empty()) {
    for (const auto& m : shifts) std::cout << to_json(m).dump() << '\n';
  } else {
    if (fs::path(c.out).has_parent_path()) fs::create_directories(fs::path(c.out).parent_path());
    write_shift_jsonl(c.out, shifts);
  }
  return 0;
}

int cmd_fit(const Common& c, const std::string& in, const std::string& split_file) {
  SessionDataset s = load_session(in);
  const std::string tag = tag_or_first(c, s);
  EncoderConfig encoder;
  if (!c.config.empty()) {
    json j = read_json(c.config);
    j["seed"] = 0;
    j["sessions"] = json::array({in});
    j["source_tags"] = json::array({tag});
    encoder = run_config_from_json(j).encoder;
  }
  const std::uint64_t seed = require_seed(c);
  std::vector<ResultRow> rows;
  for (const auto& split : read_splits(split_file)) {
    for (auto& r : fit_session(s, split, tag, encoder, derive_seed(seed, "fit/" + s.session_id + "/" + split.name + "/" + tag),
                               worker_count(c))) {
      rows.push_back({s.session_id, split.name, tag, r});
    }
  }
  const fs::path out = c.out.empty() ? fs::path("encoding_results.csv") : fs::path(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_encoding_csv(out, rows);
  return 0;
}

int cmd_analyze(const Common& c, const std::string& in) {
  const fs::path dir(in);
  const auto rows = read_encoding_csv(dir / "encoding_results.csv");
  std::vector<ShiftMeasurement> shifts;
  if (fs::exists(dir / "shift_measurements.jsonl")) shifts = read_shift_jsonl(dir / "shift_measurements.jsonl");
  const BenchmarkReport report = build_report(rows, std::move(shifts));
  write_report(report, c.out.empty() ? dir : fs::path(c.out));
  return 0;
}

int cmd_synth(const Common& c) {
  require(!c.out.empty(), "--out is required");
  json j = c.config.empty() ? json::object() : read_json(c.config);
  const std::size_t n_sessions = j.value("n_sessions", std::size_t{1});
  j.erase("n_sessions");
  synth::SynthConfig base = synth::config_from_json(j);
  if (c.seed) base.seed = *c.seed;
  std::vector<fs::path> manifests(n_sessions);
  parallel_for(n_sessions, worker_count(c), [&](std::size_t i) {
    synth::SynthConfig cfg = base;
    if (n_sessions > 1) {
      char id[32];
      std::snprintf(id, sizeof(id), "_%03zu", i);
      cfg.session_id = base.session_id + id;
      cfg.seed = derive_seed(base.seed, cfg.session_id);
    }
    manifests[i] = synth::write_session(cfg, fs::path(c.out) / cfg.session_id);
  });
  for (const auto& m : manifests) std::cout << m.string() << '\n';
  return 0;
}

int cmd_run(const Common& c) {
  require(!c.config.empty(), "--config is required");
  const fs::path path(c.config);
  json j = read_json(path);
  if (c.seed) j["seed"] = *c.seed;
  RunConfig config = run_config_from_json(j, path.parent_path());
  if (!c.out.empty()) config.output_dir = c.out;
  if (c.workers != 0) config.workers = c.workers;
  const PipelineOutcome outcome = run_pipeline(config);
  std::cout << outcome.succeeded.size() << " sessions succeeded, " << outcome.failed.size() << " failed; outputs in "
            << config.output_dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oodbench: encoding-model generalization under distribution shift"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON config file");
    sub->add_option("--out", common.out, "output file or directory");
    sub->add_option("--seed", common.seed, "root random seed");
    sub->add_option("--workers", common.workers, "worker threads (0 = all cores)");
    sub->add_option("--source-tag", common.source_tag, "feature source tag");
  };

  std::string in, strategy = "ind", attribute = "hue", split_file;
  double fraction = 0.25;
  std::vector<double> band{42.5, 62.5};
  std::optional<std::size_t> seed_image;
  std::vector<std::string> metrics{"all"};

  auto* attributes = app.add_subcommand("attributes", "compute image attributes for a session");
  add_common(attributes);
  attributes->add_option("--in", in, "session manifest")->required();

  auto* split = app.add_subcommand("split", "build a train/test split");
  add_common(split);
  split->add_option("--in", in, "session manifest")->required();
  split->add_option("--strategy", strategy, "ind, high, low, mid or distance")
      ->check(CLI::IsMember({"ind", "random", "high", "low", "mid", "distance"}));
  split->add_option("--attribute", attribute, "hue, saturation, intensity, temperature or contrast");
  split->add_option("--fraction", fraction, "test fraction for random splits");
  split->add_option("--mid-band", band, "lower and upper percentile of the mid hold-out")->expected(2);
  split->add_option("--seed-image", seed_image, "anchor image for distance splits");

  auto* shift = app.add_subcommand("shift", "measure distribution shift for splits");
  add_common(shift);
  shift->add_option("--in", in, "session manifest")->required();
  shift->add_option("--split", split_file, "split JSON")->required();
  shift->add_option("--metric", metrics, "ccd, mmd, cov or all")->check(CLI::IsMember({"ccd", "mmd", "cov", "all"}));

  auto* fit = app.add_subcommand("fit", "fit and score encoding models");
  add_common(fit);
  fit->add_option("--in", in, "session manifest")->required();
  fit->add_option("--split", split_file, "split JSON")->required();

  auto* analyze = app.add_subcommand("analyze", "aggregate results into a report");
  add_common(analyze);
  analyze->add_option("--in", in, "directory with encoding_results.csv")->required();

  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic sessions");
  add_common(synth_cmd);

  auto* run = app.add_subcommand("run", "full pipeline from a run config");
  add_common(run);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*attributes) return cmd_attributes(common, in);
    if (*split) return cmd_split(common, in, strategy, attribute, fraction, band, seed_image);
    if (*shift) return cmd_shift(common, in, split_file, metrics);
    if (*fit) return cmd_fit(common, in, split_file);
    if (*analyze) return cmd_analyze(common, in);
    if (*synth_cmd) return cmd_synth(common);
    if (*run) return cmd_run(common);
  } catch (const ValidationError& e) {
    logger()->error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    logger()->error("{}", e.what());
    return 1;
  }
  return 0;
}
