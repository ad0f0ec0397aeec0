#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hybrid/error.hpp"

namespace hybrid {

inline constexpr double kProbabilitySumTolerance = 1e-9;

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidInput("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline constexpr double kTieTolerance = 1e-10;

/// True when `a` exceeds `b` by more than rounding noise at magnitude `scale`.
/// Split searches use it so that near-equal gains fall through to the
/// deterministic tie-break instead of depending on the last ulp.
inline bool beats(double a, double b, double scale) { return a - b > kTieTolerance * std::abs(scale); }

inline bool is_distribution(std::span<const double> p, double tol = kProbabilitySumTolerance) {
  if (p.empty()) return false;
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

/// Rescales non-negative weights to sum to one.
inline std::vector<double> normalized_weights(std::span<const double> w, std::size_t n) {
  if (w.empty()) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  if (w.size() != n) throw InvalidInput("sample weight count does not match sample count");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("sample weights must be finite and >= 0");
    total += v;
  }
  if (!(total > 0.0)) throw InvalidInput("sample weights are all zero");
  std::vector<double> out(w.begin(), w.end());
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace hybrid
