#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace oodbench;
using oodbench::testing::TempDir;

namespace {

EncodingResult scored(double s, std::size_t id = 0) {
  EncodingResult r;
  r.neuron_id = id;
  r.score = s;
  r.r_cons = 0.9;
  r.r_pred = std::sqrt(s) * 0.9;
  return r;
}

EncodingResult unreliable(std::size_t id = 0) {
  EncodingResult r;
  r.neuron_id = id;
  r.flags = flags::kUnreliable;
  return r;
}

double sorted_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(SessionMedian, OddAndEven) {
  const std::vector<EncodingResult> odd{scored(0.2), scored(0.4), scored(0.9)};
  EXPECT_DOUBLE_EQ(*session_median(odd), 0.4);
  const std::vector<EncodingResult> even{scored(0.2), scored(0.4)};
  EXPECT_DOUBLE_EQ(*session_median(even), 0.3);
}

TEST(SessionMedian, MatchesSortOracleAndIgnoresUnreliable) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EncodingResult> rs;
    std::vector<double> raw;
    for (int i = 0; i < 1 + trial; ++i) {
      raw.push_back(u(rng));
      rs.push_back(scored(raw.back()));
    }
    const double want = sorted_median(raw);
    EXPECT_DOUBLE_EQ(*session_median(rs), want);
    std::shuffle(rs.begin(), rs.end(), rng);
    rs.push_back(unreliable());
    EXPECT_DOUBLE_EQ(*session_median(rs), want);
  }
}

TEST(SessionMedian, AllUnreliableIsMissing) {
  const std::vector<EncodingResult> rs{unreliable(), unreliable(1)};
  EXPECT_FALSE(session_median(rs).has_value());
}

TEST(Ratio, Examples) {
  EXPECT_EQ(*ood_ind_ratio(0.4, 0.4), 1.0);
  EXPECT_EQ(*ood_ind_ratio(0.0, 0.4), 0.0);
  EXPECT_FALSE(ood_ind_ratio(0.3, 0.0).has_value());
  EXPECT_DOUBLE_EQ(*ood_ind_ratio(0.3 * 7, 0.6 * 7), *ood_ind_ratio(0.3, 0.6));
}

TEST(Spearman, Examples) {
  const std::vector<double> x{1, 2, 3, 4, 5}, sq{1, 4, 9, 16, 25}, rev{5, 4, 3, 2, 1}, y{2, 1, 4, 3, 5};
  EXPECT_DOUBLE_EQ(*spearman_rho(x, sq).rho, 1.0);
  EXPECT_DOUBLE_EQ(*spearman_rho(x, rev).rho, -1.0);
  EXPECT_NEAR(*spearman_rho(x, y).rho, 0.8, 1e-12);
  EXPECT_FALSE(spearman_rho(x, std::vector<double>(5, 1.0)).rho.has_value());
}

TEST(Spearman, PValueMatchesTDistribution) {
  // rho = 0.8, n = 5: t = 0.8 * sqrt(3 / 0.36) = 2.3094; two-sided p on 3 df = 0.1041
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  EXPECT_NEAR(*spearman_rho(x, y).p, 0.1041, 5e-4);
}

TEST(Spearman, SymmetricAndMonotoneInvariant) {
  Rng rng(5);
  std::normal_distribution<double> normal;
  std::vector<double> x(40), y(40);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = normal(rng);
    y[i] = x[i] + normal(rng);
  }
  const double r = *spearman_rho(x, y).rho;
  EXPECT_DOUBLE_EQ(*spearman_rho(y, x).rho, r);
  std::vector<double> ex(x.size());
  std::transform(x.begin(), x.end(), ex.begin(), [](double v) { return std::exp(3 * v); });
  EXPECT_DOUBLE_EQ(*spearman_rho(ex, y).rho, r);
}

TEST(Spearman, TiesUseMidRanks) {
  const std::vector<double> v{3, 1, 3, 2};
  EXPECT_EQ(stats::mid_ranks(v), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(PairedT, EqualInputsDegenerate) {
  const std::vector<double> a{1, 2, 3, 4};
  const TTest t = paired_t_test(a, a);
  EXPECT_TRUE(t.degenerate);
}

TEST(PairedT, ConsistentShiftIsSignificant) {
  const std::vector<double> a{2.001, 3.0, 4.002, 5.0}, b{1, 2, 3, 4};
  const TTest t = paired_t_test(a, b);
  EXPECT_GT(t.t, 100);
  EXPECT_LT(t.p, 1e-5);
}

TEST(PairedT, MatchesTextbookFormula) {
  Rng rng(7);
  std::normal_distribution<double> normal;
  std::vector<double> a(12), b(12), d(12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = normal(rng);
    b[i] = a[i] - 0.3 + normal(rng);
    d[i] = a[i] - b[i];
  }
  double m = 0;
  for (double v : d) m += v;
  m /= 12;
  double ss = 0;
  for (double v : d) ss += (v - m) * (v - m);
  const double t = m / (std::sqrt(ss / 11) / std::sqrt(12.0));
  EXPECT_NEAR(paired_t_test(a, b).t, t, 1e-12);
  // Known quantile: t_{0.975, 10} = 2.228138852
  EXPECT_NEAR(stats::student_t_quantile(0.975, 10), 2.228138852, 1e-8);
  EXPECT_NEAR(stats::student_t_two_sided_p(2.228138852, 10), 0.05, 1e-8);
}

TEST(MeanSem, BruteForce) {
  const std::vector<double> v{1, 2, 4, 7};
  const auto ms = stats::mean_sem(v);
  EXPECT_DOUBLE_EQ(ms.mean, 3.5);
  const double sd = std::sqrt(((2.5 * 2.5) + (1.5 * 1.5) + (0.5 * 0.5) + (3.5 * 3.5)) / 3.0);
  EXPECT_DOUBLE_EQ(ms.sem, sd / 2.0);
}

TEST(Correlate, DecreasingScoresGiveMinusOne) {
  std::vector<ShiftMeasurement> m;
  std::map<SplitKey, double> scores;
  for (int i = 0; i < 6; ++i) {
    const std::string split = "attr/hue/" + std::to_string(i);
    m.push_back({"s", split, "t", 0.1 * i, 0.5, 0.1 * i, 1.0, 0.5});
    scores[{"s", split, "t"}] = 1.0 - 0.1 * i;
  }
  m.push_back({"s", "attr/hue/unmatched", "t", 9.0, 9.0, 9.0, 1.0, 0.5});
  const auto recs = correlate_shift_with_performance(m, scores, "t", "attribute");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].metric, "ccd");
  EXPECT_DOUBLE_EQ(*recs[0].correlation.rho, -1.0);
  EXPECT_EQ(recs[0].dropped, 1u);
  EXPECT_FALSE(recs[2].correlation.rho.has_value());  // cov constant
}

TEST(Report, RatiosReferenceSameSessionBaseline) {
  std::vector<ResultRow> rows;
  for (const char* session : {"a", "b", "c"}) {
    const double base = session[0] == 'a' ? 0.8 : 0.6;
    for (std::size_t e = 0; e < 3; ++e) {
      rows.push_back({session, "ind", "t", scored(base, e)});
      rows.push_back({session, "attr/hue/high", "t", scored(base / 2, e)});
      rows.push_back({session, "dist/ind", "t", scored(base, e)});
      rows.push_back({session, "dist/near", "t", scored(base * (0.7 + 0.01 * e), e)});
      rows.push_back({session, "dist/far", "t", scored(base * 0.4, e)});
    }
  }
  const BenchmarkReport r = build_report(rows, {});
  for (const auto& ratio : r.ratios) {
    ASSERT_TRUE(ratio.ratio.has_value());
    if (ratio.split == "attr/hue/high") {
      EXPECT_EQ(ratio.baseline, "ind");
      EXPECT_DOUBLE_EQ(*ratio.ratio, 0.5);
    }
    if (ratio.split == "dist/far") {
      EXPECT_EQ(ratio.baseline, "dist/ind");
    }
  }
  bool saw_attribute = false;
  for (const auto& s : r.ratio_summaries) {
    if (s.group == "attribute") {
      saw_attribute = true;
      EXPECT_DOUBLE_EQ(s.ratios.mean, 0.5);
      EXPECT_EQ(s.ratios.n, 3u);
    }
  }
  EXPECT_TRUE(saw_attribute);
  ASSERT_EQ(r.ttests.size(), 3u);
  EXPECT_EQ(r.ttests[0].comparison, "dist/ind vs dist/near");
  EXPECT_GT(r.ttests[0].test.mean_difference, 0.0);
}

TEST(Report, MissingBaselineLeavesRatioEmpty) {
  std::vector<ResultRow> rows{{"a", "ind", "t", unreliable()}, {"a", "attr/hue/low", "t", scored(0.5)}};
  const BenchmarkReport r = build_report(rows, {});
  ASSERT_EQ(r.ratios.size(), 1u);
  EXPECT_FALSE(r.ratios[0].ratio.has_value());
}

TEST(EncodingCsv, RoundTrip) {
  TempDir dir;
  EncodingResult a = scored(0.25, 3);
  a.lambda = 0.1;
  EncodingResult b = unreliable(4);
  b.flags |= flags::kNegativeR;
  b.r_pred = -0.2;
  const std::vector<ResultRow> rows{{"s1", "ind", "net/l", a}, {"s1", "dist/far", "net/l", b}};
  write_encoding_csv(dir.path() / "e.csv", rows);
  const auto back = read_encoding_csv(dir.path() / "e.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].result.score, a.score);
  EXPECT_EQ(back[0].result.lambda, a.lambda);
  EXPECT_EQ(back[1].result.flags, b.flags);
  EXPECT_FALSE(back[1].result.score.has_value());
  EXPECT_EQ(back[1].split, "dist/far");
}

TEST(WriteReport, EmitsAllTables) {
  TempDir dir;
  std::vector<ResultRow> rows{{"a", "ind", "t", scored(0.5)}, {"a", "attr/hue/low", "t", scored(0.25)}};
  write_report(build_report(rows, {}), dir.path());
  for (const char* f : {"report.json", "ratios.csv", "distance_vs_score.csv", "metric_correlations.csv", "ttests.csv",
                        "split_summary.csv", "ratio_summary.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  }
}
