#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"
#include "hybrid/parallel.hpp"
#include "hybrid/probability.hpp"
#include "hybrid/random.hpp"

namespace hybrid {

// ---------------------------------------------------------------------------
// Class weighting

enum class ClassWeighting { none, balanced };

/// Per-sample weights. `balanced` gives every sample of class c the weight
/// N / (K * n_c), so each populated class carries the same total mass.
inline std::vector<double> class_weights(const Dataset& ds, ClassWeighting mode) {
  std::vector<double> w(ds.n(), 1.0);
  if (mode == ClassWeighting::none) return w;
  const auto counts = ds.class_counts();
  const double n = static_cast<double>(ds.n());
  const double k = static_cast<double>(ds.k());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    w[i] = n / (k * static_cast<double>(counts[ds.label(i)]));
  }
  return w;
}

inline void check_query(FeatureVector x, std::size_t d) {
  if (x.size() != d) {
    throw InvalidInput("feature dimension mismatch: model expects " + std::to_string(d) + ", got " +
                       std::to_string(x.size()));
  }
}

// ---------------------------------------------------------------------------
// Gaussian naive Bayes

struct GaussianNB {
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<double> log_prior;  // k
  std::vector<double> mean;       // k x d
  std::vector<double> variance;   // k x d, floored
};

inline constexpr double kVarianceFloor = 1e-9;

inline GaussianNB fit_gaussian_nb(const Dataset& ds, std::span<const double> weights = {}) {
  if (!ds.has_labels() || ds.n() == 0) throw InvalidInput("fit_gaussian_nb: empty dataset");
  const auto w = normalized_weights(weights, ds.n());
  const std::size_t d = ds.d(), k = ds.k();
  GaussianNB m{d, k, std::vector<double>(k, 0.0), std::vector<double>(k * d, 0.0),
               std::vector<double>(k * d, 0.0)};
  std::vector<double> mass(k, 0.0);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto c = ds.label(i);
    mass[c] += w[i];
    const auto x = ds.row(i);
    for (std::size_t j = 0; j < d; ++j) m.mean[c * d + j] += w[i] * x[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!(mass[c] > 0.0)) {
      throw InvalidInput("fit_gaussian_nb: class '" + ds.class_names()[c] + "' has no samples");
    }
    for (std::size_t j = 0; j < d; ++j) m.mean[c * d + j] /= mass[c];
  }
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const auto c = ds.label(i);
    const auto x = ds.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = x[j] - m.mean[c * d + j];
      m.variance[c * d + j] += w[i] * dv * dv;
    }
  }
  double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      m.variance[c * d + j] = std::max(m.variance[c * d + j] / mass[c], kVarianceFloor);
    }
    m.log_prior[c] = std::log(mass[c] / total);
  }
  return m;
}

inline std::vector<double> predict_proba(const GaussianNB& m, FeatureVector x) {
  check_query(x, m.d);
  std::vector<double> joint(m.k);
  for (std::size_t c = 0; c < m.k; ++c) {
    double s = m.log_prior[c];
    for (std::size_t j = 0; j < m.d; ++j) {
      const double var = m.variance[c * m.d + j];
      const double dv = x[j] - m.mean[c * m.d + j];
      s -= 0.5 * std::log(2.0 * std::numbers::pi * var) + dv * dv / (2.0 * var);
    }
    joint[c] = s;
  }
  const double top = *std::max_element(joint.begin(), joint.end());
  double sum = 0.0;
  for (auto& v : joint) {
    v = std::exp(v - top);
    sum += v;
  }
  for (auto& v : joint) v /= sum;
  return joint;
}

// ---------------------------------------------------------------------------
// k-nearest neighbours

struct KnnModel {
  std::size_t d = 0;
  std::size_t k_classes = 0;
  std::size_t k = 5;
  std::vector<float> features;  // n x d
  std::vector<Label> labels;
};

inline KnnModel fit_knn(const Dataset& ds, std::size_t k = 5) {
  if (!ds.has_labels()) throw InvalidInput("fit_knn: labels required");
  if (k == 0 || k > ds.n()) throw InvalidInput("fit_knn: need 1 <= k <= n");
  return {ds.d(), ds.k(), k, ds.features(), ds.labels()};
}

/// Vote fractions among the k Euclidean-nearest stored samples. Equal
/// distances are ordered by lower sample index.
inline std::vector<double> predict_proba(const KnnModel& m, FeatureVector x) {
  check_query(x, m.d);
  const std::size_t n = m.labels.size();
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const float* r = m.features.data() + i * m.d;
    for (std::size_t j = 0; j < m.d; ++j) {
      const double dv = static_cast<double>(r[j]) - static_cast<double>(x[j]);
      s += dv * dv;
    }
    dist[i] = {s, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m.k), dist.end());
  std::vector<double> p(m.k_classes, 0.0);
  for (std::size_t i = 0; i < m.k; ++i) p[m.labels[dist[i].second]] += 1.0;
  for (auto& v : p) v /= static_cast<double>(m.k);
  return p;
}

// ---------------------------------------------------------------------------
// CART (Gini)

inline constexpr std::size_t kUnlimitedDepth = std::numeric_limits<std::size_t>::max();

struct CartNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // rows with x[feature] <= threshold go left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::vector<double> distribution;  // leaves only; sums to 1

  bool is_leaf() const noexcept { return feature < 0; }
};

struct CartConfig {
  std::size_t max_depth = 12;
  std::size_t min_samples_leaf = 1;
  std::size_t mtry = 0;  // features tried per split; 0 = all
};

struct CartTree {
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t max_depth = 12;
  std::size_t min_samples_leaf = 1;
  std::vector<CartNode> nodes;  // nodes[0] is the root

  const CartNode& leaf_for(FeatureVector x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<double>(x[static_cast<std::size_t>(n.feature)]) <= n.threshold ? n.left : n.right;
    }
    return nodes[i];
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, dep] = stack.back();
      stack.pop_back();
      best = std::max(best, dep);
      if (!nodes[i].is_leaf()) {
        stack.push_back({nodes[i].left, dep + 1});
        stack.push_back({nodes[i].right, dep + 1});
      }
    }
    return best;
  }
};

inline std::vector<double> predict_proba(const CartTree& t, FeatureVector x) {
  check_query(x, t.d);
  return t.leaf_for(x).distribution;
}

namespace detail {

struct RowWeight {
  std::size_t row;
  double weight;
};

/// Greedy Gini tree over weighted rows. Every row weight must be > 0.
/// feature_rng is consulted only when cfg.mtry < d.
inline CartTree grow_cart(const Dataset& ds, std::vector<RowWeight> rows, const CartConfig& cfg,
                          Rng* feature_rng) {
  const std::size_t d = ds.d(), k = ds.k();
  const std::size_t min_leaf = std::max<std::size_t>(1, cfg.min_samples_leaf);
  const std::size_t mtry = (cfg.mtry == 0 || cfg.mtry > d) ? d : cfg.mtry;
  CartTree tree{d, k, cfg.max_depth, min_leaf, {}};

  struct Work {
    std::uint32_t node;
    std::vector<RowWeight> rows;
    std::size_t depth;
  };
  tree.nodes.emplace_back();
  std::vector<Work> stack;
  stack.push_back({0, std::move(rows), 0});

  std::vector<std::size_t> all_features(d);
  std::iota(all_features.begin(), all_features.end(), std::size_t{0});
  std::vector<std::pair<float, std::size_t>> sorted;  // (value, position in rows)
  std::vector<double> left_w(k), node_w(k);

  while (!stack.empty()) {
    Work work = std::move(stack.back());
    stack.pop_back();
    const auto& rs = work.rows;

    std::fill(node_w.begin(), node_w.end(), 0.0);
    for (const auto& r : rs) node_w[ds.label(r.row)] += r.weight;
    double total = 0.0, total_sq = 0.0;
    std::size_t populated = 0;
    for (double v : node_w) {
      total += v;
      total_sq += v * v;
      populated += v > 0.0 ? 1 : 0;
    }

    auto make_leaf = [&] {
      auto& node = tree.nodes[work.node];
      node.feature = -1;
      node.distribution.resize(k);
      for (std::size_t c = 0; c < k; ++c) node.distribution[c] = node_w[c] / total;
    };

    if (populated <= 1 || work.depth >= cfg.max_depth || rs.size() < 2 * min_leaf) {
      make_leaf();
      continue;
    }

    std::vector<std::size_t> features =
        mtry == d ? all_features : sample_without_replacement(all_features, mtry, *feature_rng);
    std::sort(features.begin(), features.end());

    double best_gain = -std::numeric_limits<double>::infinity();
    std::size_t best_feature = 0;
    double best_threshold = 0.0;
    bool found = false;
    const double parent_term = total_sq / total;

    for (std::size_t f : features) {
      sorted.resize(rs.size());
      for (std::size_t p = 0; p < rs.size(); ++p) sorted[p] = {ds.row(rs[p].row)[f], p};
      std::sort(sorted.begin(), sorted.end());
      if (sorted.front().first == sorted.back().first) continue;
      std::fill(left_w.begin(), left_w.end(), 0.0);
      double wl = 0.0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const auto& r = rs[sorted[i].second];
        left_w[ds.label(r.row)] += r.weight;
        wl += r.weight;
        const std::size_t n_left = i + 1;
        if (n_left < min_leaf || sorted.size() - n_left < min_leaf) continue;
        if (sorted[i].first == sorted[i + 1].first) continue;
        double sq_l = 0.0, sq_r = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double rw = node_w[c] - left_w[c];
          sq_l += left_w[c] * left_w[c];
          sq_r += rw * rw;
        }
        const double wr = total - wl;
        if (!(wl > 0.0) || !(wr > 0.0)) continue;
        const double gain = sq_l / wl + sq_r / wr - parent_term;
        if (beats(gain, best_gain, parent_term)) {
          best_gain = gain;
          best_feature = f;
          best_threshold = (static_cast<double>(sorted[i].first) + static_cast<double>(sorted[i + 1].first)) / 2.0;
          found = true;
        }
      }
    }

    if (!found) {
      make_leaf();
      continue;
    }

    std::vector<RowWeight> left_rows, right_rows;
    for (const auto& r : rs) {
      (static_cast<double>(ds.row(r.row)[best_feature]) <= best_threshold ? left_rows : right_rows).push_back(r);
    }
    const auto left_id = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& node = tree.nodes[work.node];
    node.feature = static_cast<std::int32_t>(best_feature);
    node.threshold = best_threshold;
    node.left = left_id;
    node.right = left_id + 1;
    stack.push_back({left_id + 1, std::move(right_rows), work.depth + 1});
    stack.push_back({left_id, std::move(left_rows), work.depth + 1});
  }
  return tree;
}

inline std::vector<RowWeight> weighted_rows(std::span<const double> w) {
  std::vector<RowWeight> rows;
  rows.reserve(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] > 0.0) rows.push_back({i, w[i]});
  }
  return rows;
}

}  // namespace detail

/// Greedy CART with weighted Gini decrease. Candidate thresholds sit at the
/// midpoints of consecutive distinct sorted values; ties prefer the lower
/// feature index, then the lower threshold.
inline CartTree fit_cart(const Dataset& ds, std::span<const double> weights = {},
                         const CartConfig& cfg = {}) {
  if (!ds.has_labels() || ds.n() == 0) throw InvalidInput("fit_cart: empty dataset");
  const auto w = normalized_weights(weights, ds.n());
  Rng rng(0, "cart_features");
  return detail::grow_cart(ds, detail::weighted_rows(w), cfg, &rng);
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t mtry = 0;  // 0 = ceil(sqrt(d))
  bool bootstrap = true;
  std::size_t max_depth = kUnlimitedDepth;
  std::size_t min_samples_leaf = 1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct ForestModel {
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t mtry = 0;
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::vector<CartTree> trees;
};

inline std::size_t default_mtry(std::size_t d) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
}

/// Bagged CART ensemble. Tree t draws its bootstrap and its per-split feature
/// subsets from the substream (seed, t), so the model does not depend on the
/// number of workers.
inline ForestModel fit_random_forest(const Dataset& ds, std::span<const double> weights = {},
                                     const ForestConfig& cfg = {}) {
  if (!ds.has_labels() || ds.n() == 0) throw InvalidInput("fit_random_forest: empty dataset");
  if (cfg.n_trees == 0) throw InvalidInput("fit_random_forest: n_trees must be >= 1");
  const auto w = normalized_weights(weights, ds.n());
  const std::size_t mtry = cfg.mtry == 0 ? default_mtry(ds.d()) : std::min(cfg.mtry, ds.d());
  ForestModel model{ds.d(), ds.k(), mtry, cfg.bootstrap, cfg.seed, std::vector<CartTree>(cfg.n_trees)};
  const CartConfig tree_cfg{cfg.max_depth, cfg.min_samples_leaf, mtry};
  parallel_for(cfg.n_trees, cfg.workers, [&](std::size_t t) {
    Rng rng(cfg.seed, "forest_tree", t);
    std::vector<double> tw(w);
    if (cfg.bootstrap) {
      std::vector<std::uint32_t> draws(ds.n(), 0);
      for (std::size_t i = 0; i < ds.n(); ++i) ++draws[rng.below(ds.n())];
      for (std::size_t i = 0; i < ds.n(); ++i) tw[i] *= draws[i];
    }
    auto rows = detail::weighted_rows(tw);
    if (rows.empty()) rows = detail::weighted_rows(w);
    model.trees[t] = detail::grow_cart(ds, std::move(rows), tree_cfg, &rng);
  });
  return model;
}

inline std::vector<double> predict_proba(const ForestModel& m, FeatureVector x) {
  check_query(x, m.d);
  std::vector<double> p(m.k, 0.0);
  for (const auto& t : m.trees) {
    const auto& leaf = t.leaf_for(x).distribution;
    for (std::size_t c = 0; c < m.k; ++c) p[c] += leaf[c];
  }
  for (auto& v : p) v /= static_cast<double>(m.trees.size());
  return p;
}

// ---------------------------------------------------------------------------
// AdaBoost (SAMME)

struct AdaBoostConfig {
  std::size_t n_estimators = 50;
  std::size_t stump_depth = 1;
};

struct AdaBoostModel {
  std::size_t d = 0;
  std::size_t k = 0;
  std::vector<CartTree> stumps;
  std::vector<double> alphas;
  std::vector<double> errors;  // weighted training error of each retained estimator
};

/// Vote weight of a weak learner with weighted error `err` on K classes.
inline double samme_alpha(double err, std::size_t k) {
  return std::log((1.0 - err) / err) + std::log(static_cast<double>(k) - 1.0);
}

inline const double kPerfectStumpAlpha = std::log(1e12);

/// Called after each boosting round with the renormalised sample weights.
using BoostObserver = std::function<void(std::size_t round, std::span<const double> weights)>;

/// Discrete multiclass AdaBoost. Stops early when a stump is no better than
/// chance (the stump is discarded) or perfect (kept with a capped vote).
inline AdaBoostModel fit_adaboost_samme(const Dataset& ds, std::span<const double> weights = {},
                                        const AdaBoostConfig& cfg = {},
                                        const BoostObserver& observer = {}) {
  if (!ds.has_labels() || ds.n() == 0) throw InvalidInput("fit_adaboost_samme: empty dataset");
  if (ds.k() < 2) throw InvalidInput("fit_adaboost_samme: needs K >= 2");
  if (cfg.n_estimators == 0) throw InvalidInput("fit_adaboost_samme: n_estimators must be >= 1");
  auto w = normalized_weights(weights, ds.n());
  const std::size_t k = ds.k();
  const double chance = 1.0 - 1.0 / static_cast<double>(k);
  AdaBoostModel model{ds.d(), k, {}, {}, {}};
  const CartConfig stump_cfg{std::max<std::size_t>(1, cfg.stump_depth), 1, 0};
  std::vector<char> wrong(ds.n());

  for (std::size_t round = 0; round < cfg.n_estimators; ++round) {
    CartTree stump = detail::grow_cart(ds, detail::weighted_rows(w), stump_cfg, nullptr);
    double err = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      wrong[i] = argmax(stump.leaf_for(ds.row(i)).distribution) != ds.label(i);
      if (wrong[i]) err += w[i];
    }
    if (err >= chance) break;
    if (err <= 0.0) {
      model.stumps.push_back(std::move(stump));
      model.alphas.push_back(kPerfectStumpAlpha);
      model.errors.push_back(0.0);
      if (observer) observer(round, w);
      break;
    }
    const double alpha = samme_alpha(err, k);
    const double boost = std::exp(alpha);
    double total = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (wrong[i]) w[i] *= boost;
      total += w[i];
    }
    for (auto& v : w) v /= total;
    model.stumps.push_back(std::move(stump));
    model.alphas.push_back(alpha);
    model.errors.push_back(err);
    if (observer) observer(round, w);
  }
  if (model.stumps.empty()) {
    throw TrainingError("fit_adaboost_samme: every weak learner was rejected (error >= 1 - 1/K)");
  }
  return model;
}

/// Normalised alpha-weighted vote share per class.
inline std::vector<double> predict_proba(const AdaBoostModel& m, FeatureVector x) {
  check_query(x, m.d);
  std::vector<double> p(m.k, 0.0);
  double total = 0.0;
  for (std::size_t s = 0; s < m.stumps.size(); ++s) {
    p[argmax(m.stumps[s].leaf_for(x).distribution)] += m.alphas[s];
    total += m.alphas[s];
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace hybrid
