#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"
#include "oodbench/log.hpp"
#include "oodbench/parallel.hpp"
#include "oodbench/rng.hpp"

namespace oodbench {

namespace detail {

// Fixed left-to-right order: dot(u, u) then sqrt(dot(u,u) * dot(u,u)) is exact,
// which makes the self-distance exactly zero.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::span<const double> row_span(const RowMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline double cosine_from_parts(double uv, double uu, double vv) {
  return std::clamp(1.0 - uv / std::sqrt(uu * vv), 0.0, 2.0);
}

}  // namespace detail

/// 1 - u.v / (|u| |v|), in [0, 2].
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
  require(u.size() == v.size(), "cosine_distance: length mismatch");
  require(!u.empty(), "cosine_distance: empty vectors");
  const double uu = detail::dot(u, u);
  const double vv = detail::dot(v, v);
  require(uu > 0.0 && vv > 0.0, "cosine_distance: zero vector has no direction");
  return detail::cosine_from_parts(detail::dot(u, v), uu, vv);
}

/// Closest cosine distance: mean over test rows of the distance to the nearest
/// train row (exact brute force).
inline double ccd(const RowMatrix& train, const RowMatrix& test, std::size_t workers = 1) {
  require(train.rows() >= 1 && test.rows() >= 1, "ccd: train and test must be non-empty");
  require(train.cols() == test.cols(), "ccd: feature dimension mismatch");
  std::vector<double> train_sq(static_cast<std::size_t>(train.rows()));
  for (Eigen::Index k = 0; k < train.rows(); ++k) {
    const auto r = detail::row_span(train, k);
    train_sq[static_cast<std::size_t>(k)] = detail::dot(r, r);
    require(train_sq[static_cast<std::size_t>(k)] > 0.0, "ccd: train row " + std::to_string(k) + " is a zero vector");
  }
  std::vector<double> nearest(static_cast<std::size_t>(test.rows()));
  parallel_for(nearest.size(), workers, [&](std::size_t j) {
    const auto u = detail::row_span(test, static_cast<Eigen::Index>(j));
    const double uu = detail::dot(u, u);
    require(uu > 0.0, "ccd: test row " + std::to_string(j) + " is a zero vector");
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < train.rows(); ++k) {
      const double d =
          detail::cosine_from_parts(detail::dot(u, detail::row_span(train, k)), uu, train_sq[static_cast<std::size_t>(k)]);
      best = std::min(best, d);
    }
    nearest[j] = best;
  });
  double sum = 0.0;
  for (double v : nearest) sum += v;
  return sum / static_cast<double>(nearest.size());
}

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Median of pairwise Euclidean distances over the pooled rows.
inline double median_pairwise_distance(const RowMatrix& a, const RowMatrix& b) {
  RowMatrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> d;
  const Eigen::Index m = pooled.rows();
  d.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      d.push_back(std::sqrt(detail::squared_distance(detail::row_span(pooled, i), detail::row_span(pooled, j))));
    }
  }
  if (d.empty()) return 0.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  const double upper = d[mid];
  if (d.size() % 2 == 1) return upper;
  const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

struct MmdResult {
  double value = 0.0;
  double bandwidth = 1.0;
  bool bandwidth_fallback = false;  // median heuristic was degenerate; sigma = 1
};

/// Biased (V-statistic) squared MMD with the Gaussian RBF kernel
/// exp(-|x-y|^2 / (2 sigma^2)); every double sum keeps its diagonal.
/// An empty bandwidth selects sigma by the median heuristic.
inline MmdResult mmd_squared(const RowMatrix& train, const RowMatrix& test, std::optional<double> bandwidth = std::nullopt,
                             std::size_t workers = 1) {
  require(train.rows() >= 1 && test.rows() >= 1, "mmd_squared: train and test must be non-empty");
  require(train.cols() == test.cols(), "mmd_squared: feature dimension mismatch");
  MmdResult out;
  if (bandwidth) {
    require(*bandwidth > 0.0, "mmd_squared: bandwidth must be positive");
    out.bandwidth = *bandwidth;
  } else {
    const double med = median_pairwise_distance(train, test);
    if (med > 0.0) {
      out.bandwidth = med;
    } else {
      out.bandwidth = 1.0;
      out.bandwidth_fallback = true;
      logger()->warn("mmd_squared: all pairwise distances are zero; falling back to sigma = 1");
    }
  }
  const double gamma = 1.0 / (2.0 * out.bandwidth * out.bandwidth);

  // Row sums of each kernel block, computed per row so the reduction order is
  // independent of the worker count.
  auto block_sum = [&](const RowMatrix& a, const RowMatrix& b) {
    std::vector<double> rows(static_cast<std::size_t>(a.rows()));
    parallel_for(rows.size(), workers, [&](std::size_t i) {
      const auto x = detail::row_span(a, static_cast<Eigen::Index>(i));
      double s = 0.0;
      for (Eigen::Index k = 0; k < b.rows(); ++k) s += std::exp(-gamma * detail::squared_distance(x, detail::row_span(b, k)));
      rows[i] = s;
    });
    double total = 0.0;
    for (double v : rows) total += v;
    return total;
  };
  const auto big_n = static_cast<double>(train.rows());
  const auto small_n = static_cast<double>(test.rows());
  out.value = block_sum(train, train) / (big_n * big_n) + block_sum(test, test) / (small_n * small_n) -
              2.0 * block_sum(train, test) / (big_n * small_n);
  return out;
}

struct CovariateShiftOptions {
  std::size_t folds = 5;
  double l2 = 1e-2;  // penalty on the mean weighted log-loss
  std::size_t max_iterations = 100;
};

struct CovariateShiftResult {
  double value = 0.0;     // clamp(2 (a - 0.5), 0, 1)
  double accuracy = 0.5;  // cross-validated balanced accuracy a
};

namespace detail {

// L2-regularized logistic regression by damped Newton steps. The last column
// of `x` is the intercept, which is not penalized. Returns coefficients.
inline Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                    double l2, std::size_t max_iterations) {
  const Eigen::Index p = x.cols();
  const double n = static_cast<double>(x.rows());
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, l2);
  penalty(p - 1) = 1e-10;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

  auto loss = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd z = x * b;
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      // log(1 + exp(-m)) with margin m = z for y = 1, -z for y = 0
      const double m = y(i) > 0.5 ? z(i) : -z(i);
      s += w(i) * (m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m)));
    }
    return s / n + 0.5 * (penalty.array() * b.array().square()).sum();
  };

  double current = loss(beta);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd z = x * beta;
    Eigen::VectorXd prob(z.size()), curvature(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      prob(i) = 1.0 / (1.0 + std::exp(-z(i)));
      curvature(i) = w(i) * prob(i) * (1.0 - prob(i));
    }
    const Eigen::VectorXd grad = x.transpose() * (w.array() * (prob - y).array()).matrix() / n +
                                 (penalty.array() * beta.array()).matrix();
    Eigen::MatrixXd hess = x.transpose() * curvature.asDiagonal() * x / n;
    hess.diagonal() += penalty;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double scale = 1.0;
    Eigen::VectorXd candidate = beta - step;
    double next = loss(candidate);
    while (next > current && scale > 1e-6) {
      scale *= 0.5;
      candidate = beta - scale * step;
      next = loss(candidate);
    }
    if (next > current) break;
    beta = candidate;
    current = next;
    if ((scale * step).lpNorm<Eigen::Infinity>() < 1e-9) break;
  }
  return beta;
}

}  // namespace detail

/// Covariate shift from a train-vs-test classifier: a is the stratified k-fold
/// balanced accuracy of an L2 logistic regression on pooled-standardized
/// features; the result is clamp(2 (a - 0.5), 0, 1).
inline CovariateShiftResult covariate_shift(const RowMatrix& train, const RowMatrix& test, std::uint64_t seed,
                                            const CovariateShiftOptions& options = {}) {
  const std::size_t k = options.folds;
  require(k >= 2, "covariate_shift: need at least 2 folds");
  require(train.cols() == test.cols(), "covariate_shift: feature dimension mismatch");
  require(static_cast<std::size_t>(train.rows()) >= std::max<std::size_t>(10, k) &&
              static_cast<std::size_t>(test.rows()) >= std::max<std::size_t>(10, k),
          "covariate_shift: each set needs at least 10 rows and one per fold");

  const Eigen::Index n0 = train.rows(), n1 = test.rows(), d = train.cols();
  const Eigen::Index n = n0 + n1;
  Eigen::MatrixXd x(n, d + 1);
  x.topLeftCorner(n0, d) = train;
  x.bottomLeftCorner(n1, d) = test;
  const Eigen::RowVectorXd mu = x.leftCols(d).colwise().mean();
  Eigen::RowVectorXd sd = ((x.leftCols(d).rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index c = 0; c < d; ++c) {
    if (!(sd(c) > 0.0)) sd(c) = 1.0;
  }
  x.leftCols(d) = ((x.leftCols(d).rowwise() - mu).array().rowwise() / sd.array()).matrix();
  x.col(d).setOnes();
  Eigen::VectorXd y(n);
  y.head(n0).setZero();
  y.tail(n1).setOnes();

  // Each set's fold permutation depends only on its own size and the seed,
  // so swapping the roles of the two sets keeps the folds.
  std::vector<std::size_t> fold(static_cast<std::size_t>(n));
  auto assign = [&](Eigen::Index offset, Eigen::Index count) {
    std::vector<std::size_t> perm(static_cast<std::size_t>(count));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = make_rng(seed, "covariate_folds/" + std::to_string(count));
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t j = 0; j < perm.size(); ++j) fold[static_cast<std::size_t>(offset) + perm[j]] = j % k;
  };
  assign(0, n0);
  assign(n0, n1);

  Eigen::VectorXd predicted(n);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<Eigen::Index> fit_rows, held;
    for (Eigen::Index i = 0; i < n; ++i) (fold[static_cast<std::size_t>(i)] == f ? held : fit_rows).push_back(i);
    const Eigen::MatrixXd xf = x(fit_rows, Eigen::all);
    const Eigen::VectorXd yf = y(fit_rows);
    const double pos = yf.sum();
    const double neg = static_cast<double>(yf.size()) - pos;
    Eigen::VectorXd wf(yf.size());
    for (Eigen::Index i = 0; i < yf.size(); ++i) {
      wf(i) = static_cast<double>(yf.size()) / (2.0 * (yf(i) > 0.5 ? pos : neg));
    }
    const Eigen::VectorXd beta = detail::fit_logistic(xf, yf, wf, options.l2, options.max_iterations);
    for (Eigen::Index i : held) predicted(i) = x.row(i).dot(beta) > 0.0 ? 1.0 : 0.0;
  }
  double hit0 = 0.0, hit1 = 0.0;
  for (Eigen::Index i = 0; i < n0; ++i) hit0 += predicted(i) < 0.5 ? 1.0 : 0.0;
  for (Eigen::Index i = n0; i < n; ++i) hit1 += predicted(i) > 0.5 ? 1.0 : 0.0;

  CovariateShiftResult out;
  out.accuracy = 0.5 * (hit0 / static_cast<double>(n0) + hit1 / static_cast<double>(n1));
  out.value = std::clamp(2.0 * (out.accuracy - 0.5), 0.0, 1.0);
  return out;
}

/// One (train, test) pair's shift sizes in one feature space. Metrics that were
/// not requested (or could not be computed) are empty.
struct ShiftMeasurement {
  std::string session;
  std::string split;
  std::string source_tag;
  std::optional<double> mmd_squared;
  std::optional<double> covariate_shift;
  std::optional<double> ccd;
  std::optional<double> bandwidth;
  std::optional<double> classifier_accuracy;
};

struct MetricToggles {
  bool ccd = true;
  bool mmd = true;
  bool cov = true;
  std::optional<double> mmd_bandwidth;  // empty = median heuristic
};

inline nlohmann::json to_json(const ShiftMeasurement& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"session", m.session},
          {"split", m.split},
          {"source_tag", m.source_tag},
          {"mmd_squared", opt(m.mmd_squared)},
          {"covariate_shift", opt(m.covariate_shift)},
          {"ccd", opt(m.ccd)},
          {"bandwidth", opt(m.bandwidth)},
          {"classifier_accuracy", opt(m.classifier_accuracy)}};
}

inline ShiftMeasurement shift_from_json(const nlohmann::json& j) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  ShiftMeasurement m;
  m.session = j.at("session").get<std::string>();
  m.split = j.at("split").get<std::string>();
  m.source_tag = j.at("source_tag").get<std::string>();
  m.mmd_squared = opt("mmd_squared");
  m.covariate_shift = opt("covariate_shift");
  m.ccd = opt("ccd");
  m.bandwidth = opt("bandwidth");
  m.classifier_accuracy = opt("classifier_accuracy");
  return m;
}

}  // namespace oodbench
