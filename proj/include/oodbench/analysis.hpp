#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "oodbench/encoder.hpp"
#include "oodbench/error.hpp"
#include "oodbench/log.hpp"
#include "oodbench/manifest.hpp"
#include "oodbench/shift_metrics.hpp"
#include "oodbench/stats.hpp"

namespace oodbench {

/// Median score over reliable neurons; empty when none is reliable.
inline std::optional<double> session_median(std::span<const EncodingResult> results) {
  std::vector<double> scores;
  for (const auto& r : results) {
    if (r.reliable()) scores.push_back(*r.score);
  }
  if (scores.empty()) return std::nullopt;
  return stats::median(std::move(scores));
}

/// ood / ind; empty when the InD baseline is not positive.
inline std::optional<double> ood_ind_ratio(double ood_median, double ind_median) {
  if (!(ind_median > 0.0)) return std::nullopt;
  return ood_median / ind_median;
}

struct Correlation {
  std::optional<double> rho;
  std::optional<double> p;
  std::size_t n = 0;
};

/// Spearman rank correlation (mid-ranks for ties) with a two-sided p-value
/// from t = rho sqrt((n-2) / (1-rho^2)) on n-2 degrees of freedom.
inline Correlation spearman_rho(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "spearman_rho: length mismatch");
  require(x.size() >= 5, "spearman_rho: need at least 5 points");
  Correlation out;
  out.n = x.size();
  const auto rx = stats::mid_ranks(x);
  const auto ry = stats::mid_ranks(y);
  out.rho = stats::pearson(rx, ry);
  if (!out.rho) return out;
  const double rho = *out.rho;
  const double df = static_cast<double>(out.n) - 2.0;
  if (std::fabs(rho) >= 1.0) {
    out.p = 0.0;
  } else {
    out.p = stats::student_t_two_sided_p(rho * std::sqrt(df / (1.0 - rho * rho)), df);
  }
  return out;
}

struct TTest {
  double t = 0.0;
  double p = 1.0;
  std::size_t n = 0;
  double mean_difference = 0.0;
  bool degenerate = false;  // differences have zero variance
};

/// Paired two-sided t-test on a - b.
inline TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "paired_t_test: length mismatch");
  require(a.size() >= 3, "paired_t_test: need at least 3 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto ms = stats::mean_sem(d);
  TTest out;
  out.n = d.size();
  out.mean_difference = ms.mean;
  if (!(ms.sem > 0.0)) {
    out.degenerate = true;
    out.t = std::numeric_limits<double>::quiet_NaN();
    out.p = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.t = ms.mean / ms.sem;
  out.p = stats::student_t_two_sided_p(out.t, static_cast<double>(out.n - 1));
  return out;
}

inline std::string split_family(const std::string& split) {
  if (split == "ind") return "ind";
  if (split.starts_with("attr/")) return "attribute";
  if (split.starts_with("dist/")) return "distance";
  return "other";
}

/// Baseline split for OOD/InD ratios.
inline std::optional<std::string> ratio_baseline(const std::string& split) {
  const std::string family = split_family(split);
  if (family == "attribute") return std::string("ind");
  if (split == "dist/near" || split == "dist/far") return std::string("dist/ind");
  return std::nullopt;
}

// (session, split, source_tag)
using SplitKey = std::tuple<std::string, std::string, std::string>;

struct ResultRow {
  std::string session;
  std::string split;
  std::string source_tag;
  EncodingResult result;
};

struct SplitScore {
  std::string session, split, source_tag;
  std::optional<double> median;
  std::size_t neurons = 0;
  std::size_t reliable = 0;
};

struct SplitSummary {
  std::string source_tag, split;
  stats::MeanSem across_sessions;
};

struct RatioRecord {
  std::string session, split, source_tag, baseline;
  std::optional<double> ratio;
};

struct RatioSummary {
  std::string source_tag, group;
  stats::MeanSem ratios;
  double upper95 = 0.0;  // one-sided 95% upper confidence bound on the mean
};

struct CorrelationRecord {
  std::string source_tag, family, metric;
  Correlation correlation;
  std::size_t dropped = 0;  // shift rows without a matching score
};

struct TTestRecord {
  std::string source_tag, comparison;
  TTest test;
};

struct BenchmarkReport {
  std::vector<SplitScore> split_scores;
  std::vector<SplitSummary> split_summaries;
  std::vector<RatioRecord> ratios;
  std::vector<RatioSummary> ratio_summaries;
  std::vector<CorrelationRecord> correlations;
  std::vector<TTestRecord> ttests;
  std::vector<ShiftMeasurement> shifts;
};

/// Spearman rho between each shift metric and the matched session medians.
/// Only splits of `family` ("distance" or "attribute") take part. Records with
/// fewer than 5 pairs or a constant metric carry an empty rho.
inline std::vector<CorrelationRecord> correlate_shift_with_performance(
    std::span<const ShiftMeasurement> measurements, const std::map<SplitKey, double>& scores,
    const std::string& source_tag, const std::string& family) {
  struct Metric {
    const char* name;
    std::optional<double> ShiftMeasurement::*field;
  };
  static const Metric metrics[] = {{"ccd", &ShiftMeasurement::ccd},
                                   {"mmd", &ShiftMeasurement::mmd_squared},
                                   {"cov", &ShiftMeasurement::covariate_shift}};
  std::vector<CorrelationRecord> out;
  for (const Metric& metric : metrics) {
    CorrelationRecord rec{source_tag, family, metric.name, {}, 0};
    std::vector<double> xs, ys;
    for (const auto& m : measurements) {
      if (m.source_tag != source_tag || split_family(m.split) != family) continue;
      const auto& value = m.*(metric.field);
      if (!value) continue;
      auto it = scores.find({m.session, m.split, m.source_tag});
      if (it == scores.end()) {
        ++rec.dropped;
        continue;
      }
      xs.push_back(*value);
      ys.push_back(it->second);
    }
    if (rec.dropped > 0) {
      logger()->warn("{} {} {}: dropped {} shift rows without a matching score", source_tag, family, metric.name,
                     rec.dropped);
    }
    rec.correlation.n = xs.size();
    if (xs.size() >= 5) rec.correlation = spearman_rho(xs, ys);
    out.push_back(rec);
  }
  return out;
}

inline BenchmarkReport build_report(std::span<const ResultRow> rows, std::vector<ShiftMeasurement> shifts) {
  BenchmarkReport report;

  std::map<SplitKey, std::vector<EncodingResult>> grouped;
  for (const auto& row : rows) grouped[{row.session, row.split, row.source_tag}].push_back(row.result);

  std::map<SplitKey, double> medians;
  std::set<std::string> tags, splits, sessions;
  for (const auto& [key, results] : grouped) {
    const auto& [session, split, tag] = key;
    SplitScore s{session, split, tag, session_median(results), results.size(), 0};
    for (const auto& r : results) s.reliable += r.reliable() ? 1 : 0;
    if (s.median) medians[key] = *s.median;
    else logger()->warn("session {} split {} ({}): no reliable neurons; marked missing", session, split, tag);
    report.split_scores.push_back(s);
    tags.insert(tag);
    splits.insert(split);
    sessions.insert(session);
  }

  for (const auto& tag : tags) {
    for (const auto& split : splits) {
      std::vector<double> values;
      for (const auto& session : sessions) {
        if (auto it = medians.find({session, split, tag}); it != medians.end()) values.push_back(it->second);
      }
      if (!values.empty()) report.split_summaries.push_back({tag, split, stats::mean_sem(values)});
    }
  }

  std::map<std::pair<std::string, std::string>, std::vector<double>> ratio_groups;
  for (const auto& s : report.split_scores) {
    const auto baseline = ratio_baseline(s.split);
    if (!baseline) continue;
    RatioRecord rec{s.session, s.split, s.source_tag, *baseline, std::nullopt};
    auto base = medians.find({s.session, *baseline, s.source_tag});
    if (s.median && base != medians.end()) rec.ratio = ood_ind_ratio(*s.median, base->second);
    if (rec.ratio) {
      const std::string family = split_family(s.split);
      if (family == "attribute") {
        ratio_groups[{s.source_tag, "attribute"}].push_back(*rec.ratio);
        ratio_groups[{s.source_tag, "attribute/" + s.split.substr(s.split.rfind('/') + 1)}].push_back(*rec.ratio);
      } else {
        ratio_groups[{s.source_tag, s.split}].push_back(*rec.ratio);
      }
    }
    report.ratios.push_back(rec);
  }
  for (const auto& [key, values] : ratio_groups) {
    RatioSummary rs{key.first, key.second, stats::mean_sem(values), std::numeric_limits<double>::quiet_NaN()};
    if (values.size() >= 2) {
      rs.upper95 = rs.ratios.mean + stats::student_t_quantile(0.95, static_cast<double>(values.size() - 1)) * rs.ratios.sem;
    }
    report.ratio_summaries.push_back(rs);
  }

  std::sort(shifts.begin(), shifts.end(), [](const ShiftMeasurement& a, const ShiftMeasurement& b) {
    return std::tie(a.session, a.split, a.source_tag) < std::tie(b.session, b.split, b.source_tag);
  });
  for (const auto& tag : tags) {
    for (const char* family : {"distance", "attribute"}) {
      auto recs = correlate_shift_with_performance(shifts, medians, tag, family);
      report.correlations.insert(report.correlations.end(), recs.begin(), recs.end());
    }
  }

  const std::pair<const char*, const char*> comparisons[] = {
      {"dist/ind", "dist/near"}, {"dist/near", "dist/far"}, {"dist/ind", "dist/far"}};
  for (const auto& tag : tags) {
    for (const auto& [lhs, rhs] : comparisons) {
      std::vector<double> a, b;
      for (const auto& session : sessions) {
        auto ia = medians.find({session, lhs, tag});
        auto ib = medians.find({session, rhs, tag});
        if (ia != medians.end() && ib != medians.end()) {
          a.push_back(ia->second);
          b.push_back(ib->second);
        }
      }
      if (a.size() < 3) continue;
      report.ttests.push_back({tag, std::string(lhs) + " vs " + rhs, paired_t_test(a, b)});
    }
  }
  report.shifts = std::move(shifts);
  return report;
}

// ---- Tabular I/O ----------------------------------------------------------

inline constexpr const char* kEncodingCsvHeader = "session,split,source_tag,neuron,lambda,r_pred,r_cons,score,flags";

inline void write_encoding_csv(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kEncodingCsvHeader << '\n';
  for (const auto& row : rows) {
    const auto& r = row.result;
    out << row.session << ',' << row.split << ',' << row.source_tag << ',' << r.neuron_id << ','
        << format_double(r.lambda) << ',' << format_double(r.r_pred) << ',' << format_double(r.r_cons) << ','
        << (r.score ? format_double(*r.score) : "") << ',' << flags_to_string(r.flags) << '\n';
  }
}

inline std::vector<ResultRow> read_encoding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kEncodingCsvHeader) throw IoError(path.string() + ": unexpected header");
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 9) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 9 columns");
    ResultRow row{cells[0], cells[1], cells[2], {}};
    try {
      row.result.neuron_id = std::stoul(cells[3]);
      row.result.lambda = std::strtod(cells[4].c_str(), nullptr);
      row.result.r_pred = std::strtod(cells[5].c_str(), nullptr);
      row.result.r_cons = std::strtod(cells[6].c_str(), nullptr);
      if (!cells[7].empty()) row.result.score = std::strtod(cells[7].c_str(), nullptr);
      row.result.flags = flags_from_string(cells[8]);
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_shift_jsonl(const std::filesystem::path& path, std::span<const ShiftMeasurement> shifts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& m : shifts) out << to_json(m).dump() << '\n';
}

inline std::vector<ShiftMeasurement> read_shift_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path.string());
  std::vector<ShiftMeasurement> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(shift_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": malformed shift row: " + e.what());
    }
  }
  return out;
}

namespace detail {

inline std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json num_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

inline nlohmann::json to_json(const BenchmarkReport& report) {
  using nlohmann::json;
  json j;
  for (const auto& s : report.split_scores) {
    j["split_scores"].push_back({{"session", s.session}, {"split", s.split}, {"source_tag", s.source_tag},
                                 {"median", detail::opt_json(s.median)}, {"neurons", s.neurons},
                                 {"reliable", s.reliable}});
  }
  for (const auto& s : report.split_summaries) {
    j["split_summaries"].push_back({{"source_tag", s.source_tag}, {"split", s.split},
                                    {"mean", s.across_sessions.mean}, {"sem", s.across_sessions.sem},
                                    {"n", s.across_sessions.n}});
  }
  for (const auto& r : report.ratios) {
    j["ratios"].push_back({{"session", r.session}, {"split", r.split}, {"source_tag", r.source_tag},
                           {"baseline", r.baseline}, {"ratio", detail::opt_json(r.ratio)}});
  }
  for (const auto& r : report.ratio_summaries) {
    j["ratio_summaries"].push_back({{"source_tag", r.source_tag}, {"group", r.group}, {"mean", r.ratios.mean},
                                    {"sem", r.ratios.sem}, {"n", r.ratios.n},
                                    {"upper95", detail::num_json(r.upper95)}});
  }
  for (const auto& c : report.correlations) {
    j["correlations"].push_back({{"source_tag", c.source_tag}, {"family", c.family}, {"metric", c.metric},
                                 {"n", c.correlation.n}, {"rho", detail::opt_json(c.correlation.rho)},
                                 {"p", detail::opt_json(c.correlation.p)}, {"dropped", c.dropped}});
  }
  for (const auto& t : report.ttests) {
    j["ttests"].push_back({{"source_tag", t.source_tag}, {"comparison", t.comparison}, {"n", t.test.n},
                           {"t", detail::num_json(t.test.t)}, {"p", detail::num_json(t.test.p)},
                           {"mean_difference", t.test.mean_difference}, {"degenerate", t.test.degenerate}});
  }
  for (const auto& m : report.shifts) j["shifts"].push_back(to_json(m));
  return j;
}

/// report.json plus ratios.csv, distance_vs_score.csv, metric_correlations.csv,
/// ttests.csv and split_summary.csv.
inline void write_report(const BenchmarkReport& report, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::trunc);
    if (!out) throw IoError("cannot open " + (dir / name).string() + " for writing");
    return out;
  };
  {
    auto out = open("report.json");
    out << to_json(report).dump(2) << '\n';
  }
  {
    auto out = open("ratios.csv");
    out << "session,split,source_tag,baseline,ratio\n";
    for (const auto& r : report.ratios) {
      out << r.session << ',' << r.split << ',' << r.source_tag << ',' << r.baseline << ',' << detail::opt_text(r.ratio)
          << '\n';
    }
  }
  {
    std::map<SplitKey, std::optional<double>> medians;
    for (const auto& s : report.split_scores) medians[{s.session, s.split, s.source_tag}] = s.median;
    auto out = open("distance_vs_score.csv");
    out << "session,split,family,source_tag,ccd,mmd_squared,covariate_shift,score\n";
    for (const auto& m : report.shifts) {
      auto it = medians.find({m.session, m.split, m.source_tag});
      std::optional<double> score;
      if (it != medians.end()) score = it->second;
      out << m.session << ',' << m.split << ',' << split_family(m.split) << ',' << m.source_tag << ','
          << detail::opt_text(m.ccd) << ',' << detail::opt_text(m.mmd_squared) << ','
          << detail::opt_text(m.covariate_shift) << ',' << detail::opt_text(score) << '\n';
    }
  }
  {
    auto out = open("metric_correlations.csv");
    out << "source_tag,family,metric,n,rho,p\n";
    for (const auto& c : report.correlations) {
      out << c.source_tag << ',' << c.family << ',' << c.metric << ',' << c.correlation.n << ','
          << detail::opt_text(c.correlation.rho) << ',' << detail::opt_text(c.correlation.p) << '\n';
    }
  }
  {
    auto out = open("ttests.csv");
    out << "source_tag,comparison,n,t,p,mean_difference,degenerate\n";
    for (const auto& t : report.ttests) {
      out << t.source_tag << ',' << t.comparison << ',' << t.test.n << ',' << format_double(t.test.t) << ','
          << format_double(t.test.p) << ',' << format_double(t.test.mean_difference) << ','
          << (t.test.degenerate ? "true" : "false") << '\n';
    }
  }
  {
    auto out = open("split_summary.csv");
    out << "source_tag,split,n_sessions,mean,sem\n";
    for (const auto& s : report.split_summaries) {
      out << s.source_tag << ',' << s.split << ',' << s.across_sessions.n << ',' << format_double(s.across_sessions.mean)
          << ',' << format_double(s.across_sessions.sem) << '\n';
    }
  }
  {
    auto out = open("ratio_summary.csv");
    out << "source_tag,group,n,mean,sem,upper95\n";
    for (const auto& r : report.ratio_summaries) {
      out << r.source_tag << ',' << r.group << ',' << r.ratios.n << ',' << format_double(r.ratios.mean) << ','
          << format_double(r.ratios.sem) << ',' << format_double(r.upper95) << '\n';
    }
  }
}

}  // namespace oodbench
