#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "hybrid/dataset.hpp"
#include "hybrid/random.hpp"

namespace hybrid::fixtures {

/// Standard normal via Box-Muller on the portable engine.
inline double normal(Rng& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Separation giving ~5% Bayes error for three unit-variance isotropic
/// classes with pairwise mean distance `separation` (Monte Carlo, 2e6 draws).
inline constexpr double kFivePercentSeparation = 3.82;

/// K isotropic unit-variance Gaussian classes with pairwise mean distance
/// `separation` (means at separation/sqrt(2) * e_c). Rows are interleaved by
/// class so every prefix is roughly balanced.
inline Dataset make_blobs(std::size_t n, std::size_t d, std::size_t k, double separation, std::uint64_t seed,
                          std::vector<std::size_t> class_sizes = {}) {
  Rng rng(seed, "test_blobs");
  if (class_sizes.empty()) {
    class_sizes.assign(k, n / k);
    for (std::size_t c = 0; c < n % k; ++c) ++class_sizes[c];
  }
  std::vector<Label> labels;
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (round < class_sizes[c]) {
        labels.push_back(static_cast<Label>(c));
        any = true;
      }
    }
    if (!any) break;
  }
  const double offset = separation / std::sqrt(2.0);
  std::vector<float> features;
  features.reserve(labels.size() * d);
  for (auto y : labels) {
    for (std::size_t j = 0; j < d; ++j) {
      double v = normal(rng);
      if (j == y) v += offset;
      features.push_back(static_cast<float>(v));
    }
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));
  return Dataset(d, std::move(features), std::move(labels), std::move(names));
}

/// Same geometry as make_blobs (pairwise mean distance `separation`, unit
/// isotropic noise) but with the class means rotated by a random orthonormal
/// basis, so every coordinate carries signal.
inline Dataset make_rotated_blobs(std::size_t n, std::size_t d, std::size_t k, double separation, std::uint64_t seed) {
  Rng rng(seed, "test_rotated_blobs");
  std::vector<std::vector<double>> basis;
  while (basis.size() < k) {
    std::vector<double> v(d);
    for (auto& x : v) x = normal(rng);
    for (const auto& b : basis) {
      double dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += v[j] * b[j];
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  const auto axis = make_blobs(n, d, k, 0.0, seed);
  const double offset = separation / std::sqrt(2.0);
  std::vector<float> features(axis.features().begin(), axis.features().end());
  for (std::size_t i = 0; i < axis.n(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      features[i * d + j] += static_cast<float>(offset * basis[axis.label(i)][j]);
    }
  }
  return Dataset(d, std::move(features), std::vector<Label>(axis.labels().begin(), axis.labels().end()),
                 axis.class_names());
}

/// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("hybrid_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double training_accuracy(const Dataset& ds, auto&& predict_fn) {
  std::size_t right = 0;
  for (std::size_t i = 0; i < ds.n(); ++i) right += predict_fn(ds.row(i)) == ds.label(i) ? 1 : 0;
  return static_cast<double>(right) / static_cast<double>(ds.n());
}

}  // namespace hybrid::fixtures
