#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybrid/classifiers.hpp"
#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"
#include "hybrid/model.hpp"
#include "hybrid/parallel.hpp"
#include "hybrid/probability.hpp"
#include "hybrid/timing.hpp"

namespace hybrid {

inline constexpr double kDefaultTau = 0.8;
inline constexpr double kMaxTau = 1.01;

enum class Route { base, refine };
enum class RefineScope { full, uncertain_only };

inline std::string route_name(Route r) { return r == Route::base ? "base" : "refine"; }

/// Two-stage model: the base prediction stands when its confidence reaches
/// tau, otherwise the refinement model decides.
struct CascadeModel {
  std::shared_ptr<const Classifier> base;
  std::shared_ptr<const Classifier> refine;
  double tau = kDefaultTau;
  std::vector<std::string> class_names;
  RefineScope scope = RefineScope::full;
  ClassWeighting weighting = ClassWeighting::none;
  double train_base_fraction = 0.0;
  double train_refine_fraction = 0.0;
  bool refine_fallback = false;  // uncertain_only found nothing uncertain and trained on everything
  bool single_learner = false;   // no refinement stage; base and refine are the same model

  std::size_t n_features() const { return base->n_features(); }
  std::size_t n_classes() const { return class_names.size(); }
};

struct RoutedPrediction {
  Label label = 0;
  std::vector<double> probabilities;  // from the deciding model
  double confidence = 0.0;            // the base model's
  Route route = Route::base;
};

/// Largest class probability. Rejects vectors that are not distributions.
inline double confidence(std::span<const double> probs) {
  if (!is_distribution(probs)) throw InvalidInput("confidence: input is not a probability vector");
  double best = probs[0];
  for (double p : probs) best = std::max(best, p);
  return best;
}

inline void check_tau(double tau) {
  if (!std::isfinite(tau) || tau < 0.0 || tau > kMaxTau) {
    throw InvalidInput("tau must lie in [0, " + std::to_string(kMaxTau) + "]");
  }
}

inline RoutedPrediction cascade_predict(const CascadeModel& model, FeatureVector x) {
  if (x.size() != model.n_features()) throw InvalidInput("cascade_predict: feature dimension mismatch");
  RoutedPrediction out;
  out.probabilities = predict_proba(*model.base, x);
  out.confidence = confidence(out.probabilities);
  if (out.confidence >= model.tau) {
    out.route = Route::base;
  } else {
    out.route = Route::refine;
    out.probabilities = predict_proba(*model.refine, x);
  }
  out.label = static_cast<Label>(argmax(out.probabilities));
  return out;
}

/// Row-order-preserving batch prediction.
inline std::vector<RoutedPrediction> cascade_predict_batch(const CascadeModel& model, const Dataset& ds,
                                                           std::size_t workers = 1) {
  if (ds.n() > 0 && ds.d() != model.n_features()) {
    throw InvalidInput("cascade_predict: feature dimension mismatch");
  }
  std::vector<RoutedPrediction> out(ds.n());
  parallel_for(ds.n(), workers, [&](std::size_t i) { out[i] = cascade_predict(model, ds.row(i)); });
  return out;
}

/// Wraps a single learner as a cascade that always keeps the base decision.
inline CascadeModel single_model_cascade(std::shared_ptr<const Classifier> model) {
  CascadeModel c;
  c.class_names = model->class_names;
  c.base = model;
  c.refine = std::move(model);
  c.tau = 0.0;
  c.train_base_fraction = 1.0;
  c.single_learner = true;
  return c;
}

struct CascadeSpec {
  LearnerKind base = LearnerKind::random_forest;
  LearnerKind refine = LearnerKind::gbdt_leaf;
  LearnerParams params{};
  double tau = kDefaultTau;
  ClassWeighting weighting = ClassWeighting::none;
  std::optional<ClassWeighting> refine_weighting;  // defaults to `weighting`
  RefineScope scope = RefineScope::full;
};

struct CascadeFit {
  CascadeModel model;
  double base_train_s = 0.0;
  double refine_train_s = 0.0;
  std::vector<std::string> warnings;
};

inline CascadeFit fit_cascade(const Dataset& train, const CascadeSpec& spec, std::size_t workers = 1) {
  if (!train.has_labels() || train.n() == 0) throw InvalidInput("fit_cascade: empty training set");
  if (train.k() < 2) throw InvalidInput("fit_cascade: needs K >= 2");
  check_tau(spec.tau);

  CascadeFit fit;
  auto& model = fit.model;
  model.tau = spec.tau;
  model.class_names = train.class_names();
  model.scope = spec.scope;
  model.weighting = spec.weighting;

  const auto base_w = class_weights(train, spec.weighting);
  auto base = timed([&] { return fit_classifier(spec.base, train, spec.params, base_w); });
  fit.base_train_s = base.seconds;
  model.base = std::make_shared<const Classifier>(std::move(base.value));

  Dataset refine_set = train;
  if (spec.scope == RefineScope::uncertain_only) {
    std::vector<std::size_t> uncertain;
    for (std::size_t i = 0; i < train.n(); ++i) {
      if (confidence(predict_proba(*model.base, train.row(i))) < spec.tau) uncertain.push_back(i);
    }
    if (uncertain.empty()) {
      model.refine_fallback = true;
      fit.warnings.push_back("refine_scope_fallback_full");
    } else {
      refine_set = train.subset(uncertain);
    }
  }
  const auto refine_w = class_weights(refine_set, spec.refine_weighting.value_or(spec.weighting));
  auto refine = timed([&] { return fit_classifier(spec.refine, refine_set, spec.params, refine_w); });
  fit.refine_train_s = refine.seconds;
  model.refine = std::make_shared<const Classifier>(std::move(refine.value));

  const auto routed = cascade_predict_batch(model, train, workers);
  std::size_t to_base = 0;
  for (const auto& r : routed) to_base += r.route == Route::base ? 1 : 0;
  model.train_base_fraction = static_cast<double>(to_base) / static_cast<double>(train.n());
  model.train_refine_fraction = 1.0 - model.train_base_fraction;
  return fit;
}

/// Fraction of mismatched predictions.
inline double empirical_risk(std::span<const Label> predictions, std::span<const Label> truth) {
  if (predictions.size() != truth.size()) throw InvalidInput("empirical_risk: length mismatch");
  if (truth.empty()) throw InvalidInput("empirical_risk: empty input");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += predictions[i] != truth[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Serialisation

inline std::string scope_name(RefineScope s) { return s == RefineScope::full ? "full" : "uncertain_only"; }
inline std::string weighting_name(ClassWeighting w) { return w == ClassWeighting::none ? "none" : "balanced"; }

inline json to_json(const CascadeModel& m) {
  return {{"schema_version", kModelSchemaVersion},
          {"kind", "cascade"},
          {"K", m.n_classes()},
          {"d", m.n_features()},
          {"class_names", m.class_names},
          {"params",
           {{"tau", m.tau},
            {"base", to_json(*m.base)},
            {"refine", to_json(*m.refine)},
            {"refine_scope", scope_name(m.scope)},
            {"weighting", weighting_name(m.weighting)},
            {"refine_fallback", m.refine_fallback},
            {"training_routes", {{"base_fraction", m.train_base_fraction}, {"refine_fraction", m.train_refine_fraction}}}}}};
}

/// Loads either a cascade envelope or a single-learner envelope (the latter
/// as a cascade that always keeps the base decision).
inline CascadeModel cascade_from_json(const json& j) {
  check_envelope(j);
  try {
    if (j.at("kind").get<std::string>() != "cascade") {
      return single_model_cascade(std::make_shared<const Classifier>(classifier_from_json(j)));
    }
    const auto& p = j.at("params");
    CascadeModel m;
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.tau = p.at("tau").get<double>();
    check_tau(m.tau);
    m.base = std::make_shared<const Classifier>(classifier_from_json(p.at("base")));
    m.refine = std::make_shared<const Classifier>(classifier_from_json(p.at("refine")));
    const auto scope = p.at("refine_scope").get<std::string>();
    if (scope != "full" && scope != "uncertain_only") throw FormatError("unknown refine_scope");
    m.scope = scope == "full" ? RefineScope::full : RefineScope::uncertain_only;
    const auto weighting = p.at("weighting").get<std::string>();
    if (weighting != "none" && weighting != "balanced") throw FormatError("unknown weighting");
    m.weighting = weighting == "none" ? ClassWeighting::none : ClassWeighting::balanced;
    m.refine_fallback = p.at("refine_fallback").get<bool>();
    m.train_base_fraction = p.at("training_routes").at("base_fraction").get<double>();
    m.train_refine_fraction = p.at("training_routes").at("refine_fraction").get<double>();
    if (m.base->n_features() != m.refine->n_features() || m.base->class_names != m.class_names ||
        m.refine->class_names != m.class_names) {
      throw FormatError("cascade sub-models disagree on d or class table");
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cascade document: ") + e.what());
  }
}

inline void save_model(const CascadeModel& m, const std::filesystem::path& path) {
  if (m.single_learner) {
    io::write_file(path, dump_json(to_json(*m.base)));
  } else {
    io::write_file(path, dump_json(to_json(m)));
  }
}

inline CascadeModel load_model(const std::filesystem::path& path) {
  return cascade_from_json(parse_json_file(path));
}

}  // namespace hybrid
