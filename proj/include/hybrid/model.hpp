#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hybrid/binary_io.hpp"
#include "hybrid/classifiers.hpp"
#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"
#include "hybrid/gbdt.hpp"
#include "hybrid/linear.hpp"
#include "hybrid/probability.hpp"

namespace hybrid {

using json = nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

using ModelVariant =
    std::variant<LinearModel, GaussianNB, KnnModel, CartTree, ForestModel, AdaBoostModel, GbdtModel>;

/// Any trained learner plus the class-name table it was fitted on.
struct Classifier {
  ModelVariant model;
  std::vector<std::string> class_names;

  std::size_t n_features() const {
    return std::visit([](const auto& m) { return m.d; }, model);
  }
  std::size_t n_classes() const { return class_names.size(); }
  std::string_view kind() const;
};

template <class M>
constexpr std::string_view kind_name();
template <> constexpr std::string_view kind_name<LinearModel>() { return "softmax_head"; }
template <> constexpr std::string_view kind_name<GaussianNB>() { return "gaussian_nb"; }
template <> constexpr std::string_view kind_name<KnnModel>() { return "knn"; }
template <> constexpr std::string_view kind_name<CartTree>() { return "cart"; }
template <> constexpr std::string_view kind_name<ForestModel>() { return "random_forest"; }
template <> constexpr std::string_view kind_name<AdaBoostModel>() { return "adaboost"; }
template <> constexpr std::string_view kind_name<GbdtModel>() { return "gbdt"; }

inline std::string_view Classifier::kind() const {
  return std::visit([](const auto& m) { return kind_name<std::decay_t<decltype(m)>>(); }, model);
}

inline std::vector<double> predict_proba(const Classifier& c, FeatureVector x) {
  return std::visit([&](const auto& m) { return predict_proba(m, x); }, c.model);
}

/// Lowest class id among the most probable classes.
inline Label predict(const Classifier& c, FeatureVector x) {
  return static_cast<Label>(argmax(predict_proba(c, x)));
}

// ---------------------------------------------------------------------------
// Learner menu

enum class LearnerKind { softmax_head, gaussian_nb, knn, cart, random_forest, adaboost, gbdt_leaf, gbdt_level };

struct LearnerParams {
  TrainConfig head{};
  std::size_t knn_k = 5;
  CartConfig cart{};
  ForestConfig forest{};
  AdaBoostConfig ada{};
  GbdtConfig gbdt{};
};

/// Fits the requested learner. KNN has no notion of sample weight and ignores them.
inline Classifier fit_classifier(LearnerKind kind, const Dataset& ds, const LearnerParams& params,
                                 std::span<const double> weights = {}) {
  Classifier out{LinearModel{}, ds.class_names()};
  switch (kind) {
    case LearnerKind::softmax_head: out.model = train_softmax_head(ds, params.head, weights); break;
    case LearnerKind::gaussian_nb: out.model = fit_gaussian_nb(ds, weights); break;
    case LearnerKind::knn: out.model = fit_knn(ds, params.knn_k); break;
    case LearnerKind::cart: out.model = fit_cart(ds, weights, params.cart); break;
    case LearnerKind::random_forest: out.model = fit_random_forest(ds, weights, params.forest); break;
    case LearnerKind::adaboost: out.model = fit_adaboost_samme(ds, weights, params.ada); break;
    case LearnerKind::gbdt_leaf:
    case LearnerKind::gbdt_level: {
      GbdtConfig cfg = params.gbdt;
      cfg.growth = kind == LearnerKind::gbdt_leaf ? Growth::leaf_wise : Growth::level_wise;
      out.model = fit_gbdt(ds, cfg, weights);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON envelope

namespace detail {

inline json cart_nodes_to_json(const CartTree& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes) {
    if (n.is_leaf()) {
      nodes.push_back({{"distribution", n.distribution}});
    } else {
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
    }
  }
  return nodes;
}

inline CartTree cart_from_json(const json& p, std::size_t d, std::size_t k) {
  CartTree t;
  t.d = d;
  t.k = k;
  t.max_depth = p.at("max_depth").get<std::size_t>();
  t.min_samples_leaf = p.at("min_samples_leaf").get<std::size_t>();
  for (const auto& jn : p.at("nodes")) {
    CartNode n;
    if (jn.contains("distribution")) {
      n.distribution = jn.at("distribution").get<std::vector<double>>();
      if (n.distribution.size() != k) throw FormatError("cart leaf distribution has wrong length");
    } else {
      n.feature = jn.at("feature").get<std::int32_t>();
      n.threshold = jn.at("threshold").get<double>();
      n.left = jn.at("left").get<std::uint32_t>();
      n.right = jn.at("right").get<std::uint32_t>();
      if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= d) throw FormatError("cart split feature out of range");
    }
    t.nodes.push_back(std::move(n));
  }
  if (t.nodes.empty()) throw FormatError("cart tree has no nodes");
  for (const auto& n : t.nodes) {
    if (!n.is_leaf() && (n.left >= t.nodes.size() || n.right >= t.nodes.size())) {
      throw FormatError("cart child index out of range");
    }
  }
  return t;
}

inline json cart_to_json(const CartTree& t) {
  return {{"max_depth", t.max_depth}, {"min_samples_leaf", t.min_samples_leaf}, {"nodes", cart_nodes_to_json(t)}};
}

inline std::string growth_name(Growth g) { return g == Growth::leaf_wise ? "leaf_wise" : "level_wise"; }

inline Growth growth_from_name(const std::string& s) {
  if (s == "leaf_wise") return Growth::leaf_wise;
  if (s == "level_wise") return Growth::level_wise;
  throw FormatError("unknown growth mode '" + s + "'");
}

inline json gbdt_config_to_json(const GbdtConfig& c) {
  return {{"n_iters", c.n_iters},         {"learning_rate", c.learning_rate}, {"growth", growth_name(c.growth)},
          {"max_leaves", c.max_leaves},   {"max_depth", c.max_depth},         {"lambda", c.lambda},
          {"min_hessian", c.min_hessian}, {"n_bins", c.n_bins},               {"seed", c.seed}};
}

inline GbdtConfig gbdt_config_from_json(const json& j) {
  GbdtConfig c;
  c.n_iters = j.at("n_iters").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.growth = growth_from_name(j.at("growth").get<std::string>());
  c.max_leaves = j.at("max_leaves").get<std::size_t>();
  c.max_depth = j.at("max_depth").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.min_hessian = j.at("min_hessian").get<double>();
  c.n_bins = j.at("n_bins").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline json params_to_json(const LinearModel& m) {
  return {{"weights", m.weights}, {"bias", m.bias}, {"loss_history", m.loss_history}};
}
inline json params_to_json(const GaussianNB& m) {
  return {{"log_prior", m.log_prior}, {"mean", m.mean}, {"variance", m.variance}};
}
inline json params_to_json(const KnnModel& m) {
  return {{"k", m.k}, {"features", m.features}, {"labels", m.labels}};
}
inline json params_to_json(const CartTree& m) { return cart_to_json(m); }
inline json params_to_json(const ForestModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees) trees.push_back(cart_to_json(t));
  return {{"mtry", m.mtry}, {"bootstrap", m.bootstrap}, {"seed", m.seed}, {"trees", trees}};
}
inline json params_to_json(const AdaBoostModel& m) {
  json stumps = json::array();
  for (const auto& t : m.stumps) stumps.push_back(cart_to_json(t));
  return {{"alphas", m.alphas}, {"errors", m.errors}, {"estimators", stumps}};
}
inline json params_to_json(const GbdtModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees) {
    json feature = json::array(), bin = json::array(), threshold = json::array(), left = json::array(),
         right = json::array(), value = json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      bin.push_back(n.bin);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back({{"feature", feature}, {"bin", bin}, {"threshold", threshold},
                     {"left", left}, {"right", right}, {"value", value}});
  }
  return {{"config", gbdt_config_to_json(m.config)},
          {"base_score", m.base_score},
          {"trees", trees},
          {"loss_history", m.loss_history}};
}

template <class T>
std::vector<T> sized(const json& j, const char* key, std::size_t expected) {
  auto v = j.at(key).get<std::vector<T>>();
  if (v.size() != expected) throw FormatError(std::string("model field '") + key + "' has wrong length");
  return v;
}

inline ModelVariant params_from_json(std::string_view kind, const json& p, std::size_t d, std::size_t k) {
  if (kind == "softmax_head") {
    LinearModel m(d, k);
    m.weights = sized<double>(p, "weights", d * k);
    m.bias = sized<double>(p, "bias", k);
    m.loss_history = p.at("loss_history").get<std::vector<double>>();
    return m;
  }
  if (kind == "gaussian_nb") {
    return GaussianNB{d, k, sized<double>(p, "log_prior", k), sized<double>(p, "mean", k * d),
                      sized<double>(p, "variance", k * d)};
  }
  if (kind == "knn") {
    KnnModel m{d, k, p.at("k").get<std::size_t>(), p.at("features").get<std::vector<float>>(),
               p.at("labels").get<std::vector<Label>>()};
    if (m.features.size() != m.labels.size() * d || m.k == 0 || m.k > m.labels.size()) {
      throw FormatError("knn payload inconsistent");
    }
    for (auto y : m.labels) {
      if (y >= k) throw FormatError("knn label out of range");
    }
    return m;
  }
  if (kind == "cart") return cart_from_json(p, d, k);
  if (kind == "random_forest") {
    ForestModel m{d, k, p.at("mtry").get<std::size_t>(), p.at("bootstrap").get<bool>(),
                  p.at("seed").get<std::uint64_t>(), {}};
    for (const auto& t : p.at("trees")) m.trees.push_back(cart_from_json(t, d, k));
    if (m.trees.empty()) throw FormatError("random forest has no trees");
    return m;
  }
  if (kind == "adaboost") {
    AdaBoostModel m{d, k, {}, p.at("alphas").get<std::vector<double>>(), p.at("errors").get<std::vector<double>>()};
    for (const auto& t : p.at("estimators")) m.stumps.push_back(cart_from_json(t, d, k));
    if (m.stumps.empty() || m.stumps.size() != m.alphas.size()) throw FormatError("adaboost payload inconsistent");
    return m;
  }
  if (kind == "gbdt") {
    GbdtModel m;
    m.d = d;
    m.k = k;
    m.config = gbdt_config_from_json(p.at("config"));
    m.base_score = sized<double>(p, "base_score", k);
    m.loss_history = p.at("loss_history").get<std::vector<double>>();
    for (const auto& jt : p.at("trees")) {
      const auto feature = jt.at("feature").get<std::vector<std::int32_t>>();
      const std::size_t count = feature.size();
      const auto bin = sized<std::uint32_t>(jt, "bin", count);
      const auto threshold = sized<double>(jt, "threshold", count);
      const auto left = sized<std::uint32_t>(jt, "left", count);
      const auto right = sized<std::uint32_t>(jt, "right", count);
      const auto value = sized<double>(jt, "value", count);
      RegTree t;
      for (std::size_t i = 0; i < count; ++i) {
        if (feature[i] >= 0 && (static_cast<std::size_t>(feature[i]) >= d || left[i] >= count || right[i] >= count)) {
          throw FormatError("gbdt node out of range");
        }
        t.nodes.push_back({feature[i], bin[i], threshold[i], left[i], right[i], value[i], 0.0});
      }
      if (t.nodes.empty()) throw FormatError("gbdt tree has no nodes");
      m.trees.push_back(std::move(t));
    }
    if (m.trees.size() % k != 0) throw FormatError("gbdt tree count is not a multiple of K");
    return m;
  }
  throw FormatError("unknown model kind '" + std::string(kind) + "'");
}

}  // namespace detail

inline json to_json(const Classifier& c) {
  return {{"schema_version", kModelSchemaVersion},
          {"kind", std::string(c.kind())},
          {"K", c.n_classes()},
          {"d", c.n_features()},
          {"class_names", c.class_names},
          {"params", std::visit([](const auto& m) { return detail::params_to_json(m); }, c.model)}};
}

inline void check_envelope(const json& j) {
  if (!j.is_object()) throw FormatError("model document is not a JSON object");
  if (j.value("schema_version", -1) != kModelSchemaVersion) {
    throw FormatError("unsupported model schema_version");
  }
}

inline Classifier classifier_from_json(const json& j) {
  check_envelope(j);
  try {
    Classifier c{LinearModel{}, j.at("class_names").get<std::vector<std::string>>()};
    const auto k = j.at("K").get<std::size_t>();
    const auto d = j.at("d").get<std::size_t>();
    if (k != c.class_names.size()) throw FormatError("K does not match class_names");
    c.model = detail::params_from_json(j.at("kind").get<std::string>(), j.at("params"), d, k);
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  }
}

/// Canonical text form: sorted keys, two-space indent, trailing newline.
inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

inline json parse_json_file(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what(), e.byte);
  }
}

}  // namespace hybrid
