#include <cmath>
#include <cstring>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace oodbench;
using oodbench::testing::TempDir;

TEST(Synth, SameSeedBitIdentical) {
  const auto a = synth::generate_session(oodbench::testing::small_config(4));
  const auto b = synth::generate_session(oodbench::testing::small_config(4));
  const auto& fa = a.session.features.begin()->second.data;
  const auto& fb = b.session.features.begin()->second.data;
  EXPECT_EQ(std::memcmp(fa.data(), fb.data(), static_cast<std::size_t>(fa.size()) * sizeof(float)), 0);
  EXPECT_EQ(a.session.responses, b.session.responses);
  EXPECT_EQ(*a.session.attributes, *b.session.attributes);
  const auto c = synth::generate_session(oodbench::testing::small_config(5));
  EXPECT_NE(a.session.responses, c.session.responses);
}

TEST(Synth, ShapesFollowConfig) {
  auto config = oodbench::testing::small_config();
  config.trial_jitter = 2;
  const auto g = synth::generate_session(config);
  EXPECT_EQ(g.session.image_count(), config.n_images);
  EXPECT_EQ(g.session.responses.neuron_count(), config.n_neurons);
  EXPECT_EQ(g.session.feature(config.source_tag).cols(), config.dim);
  for (std::size_t n = 0; n < config.n_images; ++n) {
    EXPECT_GE(g.session.responses.trial_count(n), config.trials);
    EXPECT_LE(g.session.responses.trial_count(n), config.trials + 2);
  }
}

TEST(Synth, NoiselessTrialsIdenticalAndCeilingOne) {
  auto config = oodbench::testing::small_config(2);
  config.noise_sigma = 0.0;
  const auto g = synth::generate_session(config);
  for (std::size_t e = 0; e < config.n_neurons; ++e) {
    std::vector<std::vector<double>> trials;
    for (std::size_t n = 0; n < config.n_images; ++n) {
      trials.push_back(g.session.responses.trials(n, e));
      for (double v : trials.back()) ASSERT_EQ(v, trials.back().front());
    }
    Rng rng(1);
    EXPECT_EQ(ceiling(trials, 20, rng).r_cons, 1.0);
  }
}

TEST(Synth, TrialVarianceWithinChiSquareBounds) {
  auto config = oodbench::testing::small_config(3);
  config.n_images = 400;
  config.trials = 6;
  config.noise_sigma = 1.5;
  config.noise_sigma_spread = 1.0;
  const auto g = synth::generate_session(config);
  for (std::size_t e = 0; e < config.n_neurons; ++e) {
    // Pooled within-image variance: (T-1) * N degrees of freedom.
    double ss = 0.0;
    for (std::size_t n = 0; n < config.n_images; ++n) {
      const auto t = g.session.responses.trials(n, e);
      double m = 0;
      for (double v : t) m += v;
      m /= static_cast<double>(t.size());
      for (double v : t) ss += (v - m) * (v - m);
    }
    const double df = static_cast<double>((config.trials - 1) * config.n_images);
    const double sigma2 = g.truth.noise_sigma[e] * g.truth.noise_sigma[e];
    const boost::math::chi_squared chi(df);
    // Float storage adds ~1e-6 relative noise; clipping at 0 is negligible at these rates.
    EXPECT_GT(ss / sigma2, boost::math::quantile(chi, 0.0005)) << e;
    EXPECT_LT(ss / sigma2, boost::math::quantile(chi, 0.9995)) << e;
  }
}

TEST(Synth, RasterAttributesMatchGroundTruth) {
  TempDir dir;
  auto config = oodbench::testing::small_config(6);
  config.image_mode = synth::ImageMode::ProceduralRasters;
  config.n_images = 60;
  const auto g = synth::generate_session(config, dir.path() / "images");
  SessionDataset s = g.session;
  s.attributes.reset();
  compute_all(s, 2);
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i < config.n_images; ++i) {
      const double want = g.truth.attributes.columns[k][i];
      double got = s.attributes->columns[k][i];
      if (kAttributeKinds[k] == AttributeKind::Hue) {
        const double diff = std::fabs(got - want);
        EXPECT_LT(std::min(diff, 1.0 - diff), 1e-6) << "image " << i;
      } else {
        EXPECT_NEAR(got, want, 1e-6) << to_string(kAttributeKinds[k]) << " image " << i;
      }
    }
  }
}

TEST(Synth, LinearGroundTruthScoresNearOne) {
  auto config = oodbench::testing::small_config(8);
  config.ground_truth = synth::GroundTruthKind::Linear;
  config.n_images = 2000;
  config.dim = 16;
  config.n_neurons = 12;
  const auto g = synth::generate_session(config);
  const auto split = ind_split(config.n_images, 0.25, 2);
  const auto results = fit_session(g.session, split, config.source_tag, {}, 3);
  const auto median = session_median(results);
  ASSERT_TRUE(median.has_value());
  EXPECT_NEAR(*median, 1.0, 0.1);
}

TEST(Synth, NonlinearInDBeatsFarOod) {
  double ind = 0, far = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    synth::SynthConfig config;
    config.seed = seed;
    const auto g = synth::generate_session(config);
    const auto d = distance_split(g.session.feature(config.source_tag), std::nullopt, seed);
    ind += *session_median(fit_session(g.session, d.ind, config.source_tag, {}, 1));
    far += *session_median(fit_session(g.session, d.far_split(), config.source_tag, {}, 1));
  }
  EXPECT_GT(ind, far);
}

TEST(Synth, WriteSessionRoundTrips) {
  TempDir dir;
  const auto config = oodbench::testing::small_config(9);
  const auto manifest = synth::write_session(config, dir.path() / "s");
  const SessionDataset loaded = load_session(manifest);
  const auto g = synth::generate_session(config);
  EXPECT_EQ(loaded.responses, g.session.responses);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "s" / "ground_truth.json"));
  const io::Tensor means = io::read_tensor(dir.path() / "s" / "ground_truth_means.bin");
  EXPECT_EQ(means.dims, (std::vector<std::uint64_t>{config.n_images, config.n_neurons}));
}

TEST(Synth, ConfigValidation) {
  auto config = oodbench::testing::small_config();
  config.n_neurons = 0;
  EXPECT_THROW(synth::generate_session(config), ValidationError);
  config = oodbench::testing::small_config();
  config.noise_sigma = -1;
  EXPECT_THROW(synth::generate_session(config), ValidationError);
  EXPECT_THROW(synth::config_from_json({{"ground_truth", "cubic"}}), ValidationError);
  const auto parsed = synth::config_from_json(synth::to_json(oodbench::testing::small_config(12)));
  EXPECT_EQ(parsed.seed, 12u);
  EXPECT_EQ(parsed.n_images, 120u);
}
