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

#include "oodbench/core_data.hpp"
#include "oodbench/error.hpp"
#include "oodbench/log.hpp"
#include "oodbench/parallel.hpp"
#include "oodbench/rng.hpp"
#include "oodbench/splits.hpp"
#include "oodbench/stats.hpp"

namespace oodbench {

/// 9 log-spaced strengths, 1e-3 .. 1e5.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int e = -3; e <= 5; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

enum class CeilingSource { TestTrials, AllTrials };

struct EncoderConfig {
  std::vector<double> lambda_grid = default_lambda_grid();
  std::size_t folds = 5;
  std::size_t ceiling_repeats = 20;
  double ceiling_floor = 0.1;
  CeilingSource ceiling_source = CeilingSource::TestTrials;
};

/// Per-column centering and scaling fitted on training rows. Constant columns
/// keep scale 1 and are zeroed after standardization.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> active;

  static Standardizer fit(const RowMatrix& x) {
    Standardizer s;
    const auto n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.scale = Eigen::VectorXd::Ones(x.cols());
    s.active.assign(static_cast<std::size_t>(x.cols()), false);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mean(c)).square().sum() / n;
      const double sd = std::sqrt(var);
      // Relative threshold so rounding noise in a constant column is not
      // mistaken for signal.
      if (sd > 1e-12 * std::max(1.0, std::fabs(s.mean(c)))) {
        s.scale(c) = sd;
        s.active[static_cast<std::size_t>(c)] = true;
      }
    }
    return s;
  }

  RowMatrix apply(const RowMatrix& x) const {
    RowMatrix out = (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      if (!active[static_cast<std::size_t>(c)]) out.col(c).setZero();
    }
    return out;
  }
};

/// Linear readout in standardized feature space.
struct RidgeModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double lambda = 0.0;
  Standardizer standardizer;

  Eigen::VectorXd predict(const RowMatrix& x) const {
    return (standardizer.apply(x) * weights).array() + intercept;
  }
};

/// Solves (Xs'Xs + lambda I) w = Xs' y for many y and lambda from one
/// eigendecomposition of the standardized Gram matrix.
class RidgeSolver {
 public:
  explicit RidgeSolver(const RowMatrix& x) : standardizer_(Standardizer::fit(x)), xs_(standardizer_.apply(x)) {
    const Eigen::MatrixXd gram = xs_.transpose() * xs_;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    eigenvalues_ = eig.eigenvalues().cwiseMax(0.0);
    eigenvectors_ = eig.eigenvectors();
    tolerance_ = std::max(1.0, eigenvalues_.maxCoeff()) * 1e-10;
  }

  const Standardizer& standardizer() const { return standardizer_; }
  const RowMatrix& standardized() const { return xs_; }

  /// lambda = 0 with a rank-deficient Gram matrix.
  bool singular_at(double lambda) const { return lambda == 0.0 && eigenvalues_.minCoeff() <= tolerance_; }

  /// Weights for centered targets. At lambda = 0 null-space directions are
  /// dropped, giving the minimum-norm least-squares solution.
  Eigen::VectorXd solve(const Eigen::VectorXd& y_centered, double lambda) const {
    const Eigen::VectorXd projected = eigenvectors_.transpose() * (xs_.transpose() * y_centered);
    Eigen::VectorXd coeff(projected.size());
    for (Eigen::Index i = 0; i < projected.size(); ++i) {
      const double denom = eigenvalues_(i) + lambda;
      coeff(i) = (lambda == 0.0 && eigenvalues_(i) <= tolerance_) ? 0.0 : projected(i) / denom;
    }
    return eigenvectors_ * coeff;
  }

 private:
  Standardizer standardizer_;
  RowMatrix xs_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  double tolerance_ = 0.0;
};

struct RidgeFit {
  RidgeModel model;
  std::vector<double> cv_scores;  // mean held-out Pearson r per grid point; NaN when skipped
};

/// Ridge with lambda chosen by k-fold cross-validation (mean held-out Pearson r,
/// ties to the larger lambda), then refit on all rows. Fold k holds rows
/// i with i % folds == k. Decompositions are shared across targets, so one
/// fitter serves every neuron of a split.
class RidgeFitter {
 public:
  RidgeFitter(const RowMatrix& x, std::vector<double> lambda_grid, std::size_t folds)
      : grid_(std::move(lambda_grid)), folds_(folds), full_(x) {
    require(!grid_.empty(), "ridge: empty lambda grid");
    for (double l : grid_) require(l >= 0.0 && std::isfinite(l), "ridge: lambda must be finite and >= 0");
    std::sort(grid_.begin(), grid_.end());
    if (grid_.size() == 1) return;
    require(folds_ >= 2, "ridge: need at least 2 folds");
    require(static_cast<std::size_t>(x.rows()) >= folds_, "ridge: fewer training rows than folds");
    for (std::size_t f = 0; f < folds_; ++f) {
      Fold fold;
      std::vector<Eigen::Index> fit_rows;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        (static_cast<std::size_t>(i) % folds_ == f ? fold.held : fit_rows).push_back(i);
      }
      fold.fit_rows = fit_rows;
      fold.solver.emplace(RowMatrix(x(fit_rows, Eigen::all)));
      fold.held_x = fold.solver->standardizer().apply(RowMatrix(x(fold.held, Eigen::all)));
      folds_data_.push_back(std::move(fold));
    }
  }

  const std::vector<double>& grid() const { return grid_; }

  RidgeFit fit(const Eigen::VectorXd& y) const {
    require(y.size() == full_.standardized().rows(), "ridge: target length does not match rows");
    const double y_mean = y.mean();
    if ((y.array() - y_mean).abs().maxCoeff() <= 1e-12 * std::max(1.0, std::fabs(y_mean))) {
      throw ValidationError("untunable neuron: constant responses on the training set");
    }
    RidgeFit out;
    out.cv_scores.assign(grid_.size(), std::numeric_limits<double>::quiet_NaN());
    double chosen = grid_.front();
    if (grid_.size() > 1) {
      double best = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t g = 0; g < grid_.size(); ++g) {
        const double lambda = grid_[g];
        bool skip = false;
        for (const Fold& fold : folds_data_) skip = skip || fold.solver->singular_at(lambda);
        if (skip) {
          logger()->warn("ridge: lambda = 0 gives a singular system; grid point skipped");
          continue;
        }
        double total = 0.0;
        for (const Fold& fold : folds_data_) {
          const Eigen::VectorXd yf = y(fold.fit_rows);
          const double mu = yf.mean();
          const Eigen::VectorXd w = fold.solver->solve(yf.array() - mu, lambda);
          const Eigen::VectorXd pred = (fold.held_x * w).array() + mu;
          const Eigen::VectorXd truth = y(fold.held);
          std::optional<double> r;
          if (pred.size() >= 2) {
            r = stats::pearson(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                               std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())));
          }
          total += r.value_or(0.0);
        }
        const double score = total / static_cast<double>(folds_data_.size());
        out.cv_scores[g] = score;
        if (!any || score >= best - 1e-12) {
          best = std::max(best, score);
          chosen = lambda;
          any = true;
        }
      }
      require(any, "ridge: every lambda in the grid was skipped");
    }
    out.model.lambda = chosen;
    out.model.standardizer = full_.standardizer();
    out.model.intercept = y_mean;
    out.model.weights = full_.solve(y.array() - y_mean, chosen);
    return out;
  }

 private:
  struct Fold {
    std::vector<Eigen::Index> fit_rows;
    std::vector<Eigen::Index> held;
    std::optional<RidgeSolver> solver;
    RowMatrix held_x;
  };

  std::vector<double> grid_;
  std::size_t folds_;
  RidgeSolver full_;
  std::vector<Fold> folds_data_;
};

inline RidgeModel fit_ridge(const RowMatrix& x, const Eigen::VectorXd& y, std::vector<double> lambda_grid,
                            std::size_t folds) {
  return RidgeFitter(x, std::move(lambda_grid), folds).fit(y).model;
}

inline double spearman_brown(double r) { return 2.0 * r / (1.0 + r); }

struct CeilingResult {
  double split_half_r = 0.0;  // mean over repeats
  double r_cons = 0.0;        // after Spearman-Brown; meaningful only when defined
  bool defined = true;        // false when the mean split-half r is -1
};

/// Split-half reliability across images. Each repeat randomly halves every
/// image's trials (sizes floor(T/2) and ceil(T/2)), correlates the half means
/// across images, and the mean r over repeats is Spearman-Brown corrected.
/// Trials are sorted before halving, so trial order within an image is irrelevant.
inline CeilingResult ceiling(const std::vector<std::vector<double>>& trials, std::size_t repeats, Rng& rng) {
  require(trials.size() >= 2, "ceiling: need at least two images");
  require(repeats >= 1, "ceiling: need at least one repeat");
  std::vector<std::vector<double>> sorted = trials;
  for (std::size_t n = 0; n < sorted.size(); ++n) {
    if (sorted[n].size() < 2) {
      throw ValidationError("ceiling: image " + std::to_string(n) + " has " + std::to_string(sorted[n].size()) +
                            " trial(s); split halves need at least 2");
    }
    std::sort(sorted[n].begin(), sorted[n].end());
  }
  std::vector<double> half_a(sorted.size()), half_b(sorted.size());
  double total = 0.0;
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    for (std::size_t n = 0; n < sorted.size(); ++n) {
      std::vector<double> t = sorted[n];
      std::shuffle(t.begin(), t.end(), rng);
      const std::size_t h = t.size() / 2;
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < h; ++i) a += t[i];
      for (std::size_t i = h; i < t.size(); ++i) b += t[i];
      half_a[n] = a / static_cast<double>(h);
      half_b[n] = b / static_cast<double>(t.size() - h);
    }
    total += stats::pearson(half_a, half_b).value_or(0.0);
  }
  CeilingResult out;
  out.split_half_r = total / static_cast<double>(repeats);
  if (out.split_half_r <= -1.0) {
    out.defined = false;
    out.r_cons = -1.0;
  } else {
    out.r_cons = spearman_brown(out.split_half_r);
  }
  return out;
}

namespace flags {
inline constexpr unsigned kDegenerate = 1u << 0;        // zero-variance predictions or responses
inline constexpr unsigned kUnreliable = 1u << 1;        // r_cons below the ceiling floor
inline constexpr unsigned kNegativeR = 1u << 2;         // r_pred < 0; its square still counts
inline constexpr unsigned kUntunable = 1u << 3;         // constant training responses
inline constexpr unsigned kCeilingUndefined = 1u << 4;  // too few trials or r = -1
inline constexpr unsigned kFailed = 1u << 5;            // any other per-neuron error
}  // namespace flags

inline std::string flags_to_string(unsigned f) {
  static const std::pair<unsigned, const char*> names[] = {
      {flags::kDegenerate, "degenerate"}, {flags::kUnreliable, "unreliable"},
      {flags::kNegativeR, "negative_r"},  {flags::kUntunable, "untunable"},
      {flags::kCeilingUndefined, "ceiling_undefined"}, {flags::kFailed, "failed"}};
  std::string out;
  for (const auto& [bit, name] : names) {
    if (f & bit) {
      if (!out.empty()) out += '|';
      out += name;
    }
  }
  return out;
}

inline unsigned flags_from_string(const std::string& text) {
  unsigned f = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find('|', start), text.size());
    const std::string name = text.substr(start, end - start);
    if (name == "degenerate") f |= flags::kDegenerate;
    else if (name == "unreliable") f |= flags::kUnreliable;
    else if (name == "negative_r") f |= flags::kNegativeR;
    else if (name == "untunable") f |= flags::kUntunable;
    else if (name == "ceiling_undefined") f |= flags::kCeilingUndefined;
    else if (name == "failed") f |= flags::kFailed;
    else if (!name.empty()) throw ValidationError("unknown result flag '" + name + "'");
    start = end + 1;
  }
  return f;
}

struct EncodingResult {
  std::size_t neuron_id = 0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double r_pred = 0.0;
  double r_cons = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> score;  // r_pred^2 / r_cons^2; empty when the ceiling is unusable
  unsigned flags = 0;

  /// Counts toward session medians.
  bool reliable() const {
    return score.has_value() &&
           (flags & (flags::kUnreliable | flags::kUntunable | flags::kCeilingUndefined | flags::kFailed)) == 0;
  }
};

/// Scores one neuron on test images against a ceiling from `ceiling_trials`.
inline EncodingResult score_neuron(const RidgeModel& model, const RowMatrix& x_test, const Eigen::VectorXd& y_test,
                                   const std::vector<std::vector<double>>& ceiling_trials, const EncoderConfig& config,
                                   Rng& rng) {
  require(x_test.rows() >= 3, "score_neuron: need at least 3 test images");
  require(x_test.rows() == y_test.size(), "score_neuron: test rows and responses disagree");
  EncodingResult out;
  out.lambda = model.lambda;
  const Eigen::VectorXd pred = model.predict(x_test);
  const auto r = stats::pearson(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                                std::span<const double>(y_test.data(), static_cast<std::size_t>(y_test.size())));
  if (r) {
    out.r_pred = *r;
    if (*r < 0.0) out.flags |= flags::kNegativeR;
  } else {
    out.r_pred = 0.0;
    out.flags |= flags::kDegenerate;
  }

  CeilingResult c;
  try {
    c = ceiling(ceiling_trials, config.ceiling_repeats, rng);
  } catch (const ValidationError&) {
    out.flags |= flags::kCeilingUndefined;
    return out;
  }
  if (!c.defined) {
    out.r_cons = c.r_cons;
    out.flags |= flags::kCeilingUndefined | flags::kUnreliable;
    return out;
  }
  out.r_cons = c.r_cons;
  if (!(c.r_cons >= config.ceiling_floor) || c.r_cons <= 0.0) {
    out.flags |= flags::kUnreliable;
    return out;
  }
  out.score = (out.flags & flags::kDegenerate) ? 0.0 : (out.r_pred * out.r_pred) / (c.r_cons * c.r_cons);
  return out;
}

/// One result per neuron, ordered by neuron id. Per-neuron failures become
/// flagged results. Randomness for neuron e comes from the sub-stream
/// "ceiling/<e>" of `seed`, so results do not depend on `workers`.
inline std::vector<EncodingResult> fit_session(const SessionDataset& session, const SplitAssignment& split,
                                               const std::string& source_tag, const EncoderConfig& config,
                                               std::uint64_t seed, std::size_t workers = 1) {
  const std::size_t n = session.image_count();
  split.validate(n);
  const FeatureMatrix& features = session.feature(source_tag);
  const std::size_t neurons = session.responses.neuron_count();
  const RowMatrix averages = trial_average(session.responses);
  const RowMatrix x_train = features.rows_of(split.train);
  const RowMatrix x_test = features.rows_of(split.test);

  std::vector<EncodingResult> results(neurons);
  for (std::size_t e = 0; e < neurons; ++e) results[e].neuron_id = e;

  std::optional<RidgeFitter> fitter;
  try {
    fitter.emplace(x_train, config.lambda_grid, config.folds);
  } catch (const std::exception& ex) {
    logger()->error("session {} split {}: cannot set up ridge fits: {}", session.session_id, split.name, ex.what());
    for (auto& r : results) r.flags |= flags::kFailed;
    return results;
  }

  std::vector<std::size_t> ceiling_set = split.test;
  if (config.ceiling_source == CeilingSource::AllTrials) {
    ceiling_set.resize(n);
    std::iota(ceiling_set.begin(), ceiling_set.end(), 0);
  }

  parallel_for(neurons, workers, [&](std::size_t e) {
    EncodingResult& out = results[e];
    try {
      Eigen::VectorXd y_train(static_cast<Eigen::Index>(split.train.size()));
      for (std::size_t i = 0; i < split.train.size(); ++i) {
        y_train(static_cast<Eigen::Index>(i)) = averages(static_cast<Eigen::Index>(split.train[i]), static_cast<Eigen::Index>(e));
      }
      Eigen::VectorXd y_test(static_cast<Eigen::Index>(split.test.size()));
      for (std::size_t i = 0; i < split.test.size(); ++i) {
        y_test(static_cast<Eigen::Index>(i)) = averages(static_cast<Eigen::Index>(split.test[i]), static_cast<Eigen::Index>(e));
      }
      std::vector<std::vector<double>> trials;
      trials.reserve(ceiling_set.size());
      for (std::size_t img : ceiling_set) trials.push_back(session.responses.trials(img, e));

      const RidgeFit fit = fitter->fit(y_train);
      Rng rng = make_rng(seed, "ceiling/" + std::to_string(e));
      out = score_neuron(fit.model, x_test, y_test, trials, config, rng);
      out.neuron_id = e;
    } catch (const ValidationError& ex) {
      const bool untunable = std::string(ex.what()).starts_with("untunable");
      out.flags |= untunable ? flags::kUntunable : flags::kFailed;
      logger()->debug("session {} split {} neuron {}: {}", session.session_id, split.name, e, ex.what());
    } catch (const std::exception& ex) {
      out.flags |= flags::kFailed;
      logger()->warn("session {} split {} neuron {}: {}", session.session_id, split.name, e, ex.what());
    }
  });
  return results;
}

}  // namespace oodbench
