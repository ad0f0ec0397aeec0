#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"
#include "hybrid/linear.hpp"
#include "hybrid/parallel.hpp"
#include "hybrid/probability.hpp"

namespace hybrid {

enum class Growth { leaf_wise, level_wise };

struct GbdtConfig {
  std::size_t n_iters = 100;
  double learning_rate = 0.1;
  Growth growth = Growth::leaf_wise;
  std::size_t max_leaves = 31;  // leaf_wise
  std::size_t max_depth = 6;    // level_wise
  double lambda = 1.0;
  double min_hessian = 1e-3;
  std::size_t n_bins = 256;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

inline void validate(const GbdtConfig& cfg) {
  if (cfg.n_iters == 0) throw InvalidInput("gbdt: n_iters must be >= 1");
  if (!(cfg.learning_rate >= 0.0 && cfg.learning_rate <= 1.0)) {
    throw InvalidInput("gbdt: learning_rate must lie in [0, 1]");
  }
  if (cfg.n_bins < 2 || cfg.n_bins > 256) throw InvalidInput("gbdt: n_bins must lie in [2, 256]");
  if (!(cfg.lambda >= 0.0)) throw InvalidInput("gbdt: lambda must be >= 0");
  if (!(cfg.min_hessian >= 0.0)) throw InvalidInput("gbdt: min_hessian must be >= 0");
  if (cfg.growth == Growth::leaf_wise && cfg.max_leaves < 2) {
    throw InvalidInput("gbdt: max_leaves must be >= 2");
  }
}

// ---------------------------------------------------------------------------
// Quantile binning

/// 8-bit bin codes, stored feature-major so histogram passes stream one column.
struct BinnedMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::uint8_t> codes;        // codes[j * n + i]
  std::vector<std::vector<double>> edges;  // per feature, strictly increasing

  std::uint8_t code(std::size_t i, std::size_t j) const { return codes[j * n + i]; }
  std::span<const std::uint8_t> column(std::size_t j) const { return {codes.data() + j * n, n}; }
  std::size_t bins(std::size_t j) const { return edges[j].size() + 1; }
};

/// Code of a raw value: the number of edges not exceeding it.
inline std::uint8_t bin_code(std::span<const double> edges, double x) {
  return static_cast<std::uint8_t>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
}

/// Cut points between consecutive sorted values at the empirical quantiles
/// j/n_bins. Features with at most n_bins distinct values get one bin per value.
inline std::vector<double> quantile_edges(std::vector<float> values, std::size_t n_bins) {
  std::sort(values.begin(), values.end());
  std::vector<float> distinct;
  std::unique_copy(values.begin(), values.end(), std::back_inserter(distinct));
  std::vector<double> edges;
  auto mid = [](float a, float b) { return (static_cast<double>(a) + static_cast<double>(b)) / 2.0; };
  if (distinct.size() <= n_bins) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) edges.push_back(mid(distinct[i], distinct[i + 1]));
    return edges;
  }
  const std::size_t n = values.size();
  for (std::size_t j = 1; j < n_bins; ++j) {
    std::size_t idx = j * n / n_bins;
    if (idx == 0) idx = 1;
    while (idx < n && values[idx] == values[idx - 1]) ++idx;
    if (idx >= n) break;
    const double e = mid(values[idx - 1], values[idx]);
    if (edges.empty() || e > edges.back()) edges.push_back(e);
  }
  return edges;
}

inline BinnedMatrix quantile_bin(const Dataset& ds, std::size_t n_bins = 256) {
  if (ds.n() == 0) throw InvalidInput("quantile_bin: empty dataset");
  if (n_bins < 2 || n_bins > 256) throw InvalidInput("quantile_bin: n_bins must lie in [2, 256]");
  BinnedMatrix b;
  b.n = ds.n();
  b.d = ds.d();
  b.codes.resize(b.n * b.d);
  b.edges.resize(b.d);
  std::vector<float> column(b.n);
  for (std::size_t j = 0; j < b.d; ++j) {
    for (std::size_t i = 0; i < b.n; ++i) column[i] = ds.row(i)[j];
    b.edges[j] = quantile_edges(column, n_bins);
    for (std::size_t i = 0; i < b.n; ++i) b.codes[j * b.n + i] = bin_code(b.edges[j], column[i]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Softmax objective

struct GradHess {
  Matrix g;  // n x K
  Matrix h;  // n x K
};

/// First and diagonal second derivatives of -log softmax(s)_y per row.
inline GradHess softmax_grad_hess(const Matrix& scores, std::span<const Label> labels) {
  if (labels.size() != scores.rows) throw InvalidInput("softmax_grad_hess: label count mismatch");
  GradHess out{Matrix(scores.rows, scores.cols), Matrix(scores.rows, scores.cols)};
  for (std::size_t i = 0; i < scores.rows; ++i) {
    const auto p = softmax(scores.row(i));
    for (std::size_t c = 0; c < scores.cols; ++c) {
      out.g(i, c) = p[c] - (labels[i] == c ? 1.0 : 0.0);
      out.h(i, c) = p[c] * (1.0 - p[c]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regression trees over bin codes

struct RegNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  std::uint32_t bin = 0;      // codes <= bin go left
  double threshold = 0.0;     // raw-value equivalent: x < threshold goes left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  double value = 0.0;         // leaves only
  double gain = 0.0;          // internal nodes only

  bool is_leaf() const noexcept { return feature < 0; }
};

struct RegTree {
  std::vector<RegNode> nodes;

  double predict(FeatureVector x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<double>(x[static_cast<std::size_t>(n.feature)]) < n.threshold ? n.left : n.right;
    }
    return nodes[i].value;
  }
  double predict_binned(const BinnedMatrix& b, std::size_t row) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = b.code(row, static_cast<std::size_t>(n.feature)) <= n.bin ? n.left : n.right;
    }
    return nodes[i].value;
  }
  std::size_t leaves() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const RegNode& n) { return n.is_leaf(); }));
  }
};

/// Newton leaf weight minimising G*w + (H + lambda) * w^2 / 2.
inline double leaf_value(double g_sum, double h_sum, double lambda) { return -g_sum / (h_sum + lambda); }

inline double split_gain(double gl, double hl, double gr, double hr, double lambda) {
  const double g = gl + gr, h = hl + hr;
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda));
}

namespace detail {

struct Histogram {
  std::vector<double> g, h;
  std::vector<std::uint32_t> count;

  explicit Histogram(std::size_t total_bins = 0) : g(total_bins, 0.0), h(total_bins, 0.0), count(total_bins, 0) {}
};

struct SplitCandidate {
  bool valid = false;
  double gain = 0.0;
  std::size_t feature = 0;
  std::uint32_t bin = 0;
};

struct GrowNode {
  std::uint32_t id;
  std::vector<std::uint32_t> rows;
  double g_sum = 0.0;
  double h_sum = 0.0;
  std::size_t depth = 0;
  Histogram hist;
  SplitCandidate best;
};

class TreeGrower {
 public:
  TreeGrower(const BinnedMatrix& b, std::span<const double> g, std::span<const double> h, const GbdtConfig& cfg)
      : b_(b), g_(g), h_(h), cfg_(cfg), offsets_(b.d + 1, 0) {
    for (std::size_t j = 0; j < b.d; ++j) offsets_[j + 1] = offsets_[j] + b.bins(j);
  }

  RegTree grow() {
    RegTree tree;
    tree.nodes.emplace_back();
    GrowNode root{0, {}, 0.0, 0.0, 0, Histogram(offsets_.back()), {}};
    root.rows.resize(b_.n);
    for (std::size_t i = 0; i < b_.n; ++i) {
      root.rows[i] = static_cast<std::uint32_t>(i);
      root.g_sum += g_[i];
      root.h_sum += h_[i];
    }
    build_histogram(root);
    find_split(root);

    std::vector<GrowNode> frontier;
    frontier.push_back(std::move(root));
    std::size_t leaves = 1;

    if (cfg_.growth == Growth::leaf_wise) {
      while (leaves < cfg_.max_leaves) {
        std::size_t pick = frontier.size();
        for (std::size_t f = 0; f < frontier.size(); ++f) {
          const auto& c = frontier[f].best;
          if (!c.valid) continue;
          if (pick == frontier.size()) {
            pick = f;
            continue;
          }
          const double incumbent = frontier[pick].best.gain;
          const double scale = std::max(c.gain, incumbent);
          if (beats(c.gain, incumbent, scale) ||
              (!beats(incumbent, c.gain, scale) && frontier[f].id < frontier[pick].id)) {
            pick = f;
          }
        }
        if (pick == frontier.size()) break;
        GrowNode node = std::move(frontier[pick]);
        frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
        auto [l, r] = split(tree, node);
        frontier.push_back(std::move(l));
        frontier.push_back(std::move(r));
        ++leaves;
      }
    } else {
      for (std::size_t depth = 0; depth < cfg_.max_depth; ++depth) {
        std::vector<GrowNode> next;
        bool any = false;
        for (auto& node : frontier) {
          if (node.best.valid) {
            auto [l, r] = split(tree, node);
            next.push_back(std::move(l));
            next.push_back(std::move(r));
            any = true;
          } else {
            next.push_back(std::move(node));
          }
        }
        frontier = std::move(next);
        if (!any) break;
      }
    }
    for (const auto& node : frontier) {
      auto& n = tree.nodes[node.id];
      n.feature = -1;
      n.value = leaf_value(node.g_sum, node.h_sum, cfg_.lambda);
    }
    return tree;
  }

 private:
  void build_histogram(GrowNode& node) const {
    parallel_for(b_.d, cfg_.workers, [&](std::size_t j) {
      const auto col = b_.column(j);
      const std::size_t base = offsets_[j];
      for (auto i : node.rows) {
        const std::size_t slot = base + col[i];
        node.hist.g[slot] += g_[i];
        node.hist.h[slot] += h_[i];
        ++node.hist.count[slot];
      }
    });
  }

  void find_split(GrowNode& node) const {
    node.best = {};
    if (cfg_.growth == Growth::level_wise && node.depth >= cfg_.max_depth) return;
    for (std::size_t j = 0; j < b_.d; ++j) {
      double gl = 0.0, hl = 0.0;
      std::uint64_t cl = 0;
      const std::size_t base = offsets_[j];
      const std::size_t bins = b_.bins(j);
      for (std::size_t bin = 0; bin + 1 < bins; ++bin) {
        gl += node.hist.g[base + bin];
        hl += node.hist.h[base + bin];
        cl += node.hist.count[base + bin];
        const std::uint64_t cr = node.rows.size() - cl;
        if (cl == 0) continue;
        if (cr == 0) break;
        const double gr = node.g_sum - gl;
        const double hr = node.h_sum - hl;
        if (hl < cfg_.min_hessian || hr < cfg_.min_hessian) continue;
        const double gain = split_gain(gl, hl, gr, hr, cfg_.lambda);
        const double scale = 0.5 * (gl * gl / (hl + cfg_.lambda) + gr * gr / (hr + cfg_.lambda));
        if (!beats(gain, 0.0, scale)) continue;
        if (!node.best.valid || beats(gain, node.best.gain, scale)) {
          node.best = {true, gain, j, static_cast<std::uint32_t>(bin)};
        }
      }
    }
  }

  std::pair<GrowNode, GrowNode> split(RegTree& tree, GrowNode& node) const {
    const auto& s = node.best;
    const auto col = b_.column(s.feature);
    const auto left_id = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& n = tree.nodes[node.id];
    n.feature = static_cast<std::int32_t>(s.feature);
    n.bin = s.bin;
    n.threshold = b_.edges[s.feature][s.bin];
    n.left = left_id;
    n.right = left_id + 1;
    n.gain = s.gain;

    GrowNode l{left_id, {}, 0.0, 0.0, node.depth + 1, Histogram(), {}};
    GrowNode r{left_id + 1, {}, 0.0, 0.0, node.depth + 1, Histogram(), {}};
    for (auto i : node.rows) {
      auto& child = col[i] <= s.bin ? l : r;
      child.rows.push_back(i);
      child.g_sum += g_[i];
      child.h_sum += h_[i];
    }
    // Build the smaller child directly; the sibling is parent minus child.
    GrowNode& small = l.rows.size() <= r.rows.size() ? l : r;
    GrowNode& large = &small == &l ? r : l;
    small.hist = Histogram(offsets_.back());
    build_histogram(small);
    large.hist = std::move(node.hist);
    for (std::size_t t = 0; t < large.hist.g.size(); ++t) {
      large.hist.g[t] -= small.hist.g[t];
      large.hist.h[t] -= small.hist.h[t];
      large.hist.count[t] -= small.hist.count[t];
    }
    find_split(l);
    find_split(r);
    return {std::move(l), std::move(r)};
  }

  const BinnedMatrix& b_;
  std::span<const double> g_;
  std::span<const double> h_;
  const GbdtConfig& cfg_;
  std::vector<std::size_t> offsets_;
};

}  // namespace detail

/// Histogram-based second-order regression tree. Leaf values are the unshrunk
/// Newton steps -G / (H + lambda).
inline RegTree grow_tree(const BinnedMatrix& binned, std::span<const double> g, std::span<const double> h,
                         const GbdtConfig& cfg) {
  if (g.size() != binned.n || h.size() != binned.n) throw InvalidInput("grow_tree: gradient length mismatch");
  return detail::TreeGrower(binned, g, h, cfg).grow();
}

// ---------------------------------------------------------------------------
// Boosted model

struct GbdtModel {
  std::size_t d = 0;
  std::size_t k = 0;
  GbdtConfig config;
  std::vector<double> base_score;  // per-class log prior
  std::vector<RegTree> trees;      // iteration-major: trees[it * k + c], leaf values already shrunk
  std::vector<double> loss_history;

  std::size_t iterations() const { return k == 0 ? 0 : trees.size() / k; }
};

inline std::vector<double> raw_scores(const GbdtModel& m, FeatureVector x) {
  std::vector<double> s(m.base_score);
  for (std::size_t t = 0; t < m.trees.size(); ++t) s[t % m.k] += m.trees[t].predict(x);
  return s;
}

inline std::vector<double> predict_proba(const GbdtModel& m, FeatureVector x) {
  if (x.size() != m.d) throw InvalidInput("gbdt: feature dimension mismatch");
  return softmax(raw_scores(m, x));
}

inline constexpr double kMinPrior = 1e-12;

/// Multiclass softmax boosting: K trees per iteration on (g, h) with sample
/// weights folded in multiplicatively (rescaled to mean 1).
inline GbdtModel fit_gbdt(const Dataset& ds, const GbdtConfig& cfg = {}, std::span<const double> weights = {}) {
  validate(cfg);
  if (!ds.has_labels() || ds.n() == 0) throw InvalidInput("fit_gbdt: empty dataset");
  if (ds.k() < 2) throw InvalidInput("fit_gbdt: needs K >= 2");
  const std::size_t n = ds.n(), k = ds.k();
  auto w = normalized_weights(weights, n);
  for (auto& v : w) v *= static_cast<double>(n);

  GbdtModel model;
  model.d = ds.d();
  model.k = k;
  model.config = cfg;
  model.base_score.assign(k, 0.0);
  {
    std::vector<double> prior(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) prior[ds.label(i)] += w[i];
    for (std::size_t c = 0; c < k; ++c) {
      model.base_score[c] = std::log(std::max(prior[c] / static_cast<double>(n), kMinPrior));
    }
  }

  const BinnedMatrix binned = quantile_bin(ds, cfg.n_bins);
  Matrix scores(n, k);
  for (std::size_t i = 0; i < n; ++i) std::copy(model.base_score.begin(), model.base_score.end(), scores.row(i).begin());

  auto weighted_loss = [&] {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax(scores.row(i));
      loss -= w[i] * std::log(std::max(p[ds.label(i)], kLogFloor));
    }
    return loss / static_cast<double>(n);
  };

  std::vector<double> g(n), h(n);
  for (std::size_t it = 0; it < cfg.n_iters; ++it) {
    const auto gh = softmax_grad_hess(scores, ds.labels());
    std::vector<RegTree> round(k);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = w[i] * gh.g(i, c);
        h[i] = w[i] * gh.h(i, c);
      }
      RegTree tree = grow_tree(binned, g, h, cfg);
      for (auto& node : tree.nodes) {
        if (node.is_leaf()) node.value *= cfg.learning_rate;
      }
      round[c] = std::move(tree);
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) scores(i, c) += round[c].predict_binned(binned, i);
      model.trees.push_back(std::move(round[c]));
    }
    model.loss_history.push_back(weighted_loss());
  }
  return model;
}

}  // namespace hybrid
