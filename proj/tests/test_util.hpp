#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "oodbench/oodbench.hpp"

namespace oodbench::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "oodbench_";
    if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double shift = 0.0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) + shift;
  return m;
}

inline synth::SynthConfig small_config(std::uint64_t seed = 1) {
  synth::SynthConfig c;
  c.session_id = "unit";
  c.n_images = 120;
  c.dim = 8;
  c.n_neurons = 5;
  c.trials = 4;
  c.seed = seed;
  return c;
}

}  // namespace oodbench::testing
