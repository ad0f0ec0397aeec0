#pragma once

// Command-line pipeline: extract | split | balance | train | eval | predict | serve.
// Exit codes: 0 success, 1 validation error, 2 I/O or format error.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hybrid/cascade.hpp"
#include "hybrid/dataset.hpp"
#include "hybrid/evaluation.hpp"
#include "hybrid/features.hpp"
#include "hybrid/model.hpp"
#include "hybrid/parallel.hpp"
#include "hybrid/service.hpp"
#include "hybrid/timing.hpp"

namespace hybrid::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kValidation = 1, kIo = 2 };

/// Starts the HTTP front end; provided by the executable so the core
/// pipeline stays free of socket code.
using ServeFn = std::function<int(const CascadeModel&, const std::string& host, int port, std::ostream& err)>;

struct RunConfig {
  // shared
  std::string config_file;
  std::uint64_t seed = 0;
  std::size_t workers = 1;  // execution only; never changes results

  // extract
  std::string manifest;
  std::string fmap;
  std::size_t side = kDefaultImageSide;

  // split / balance
  std::string in;
  double ratio = 0.8;
  std::string train_out;
  std::string holdout_out;

  // train
  std::string features;
  std::string base = "ada";
  std::string refine = "gbdt-leaf";
  double tau = kDefaultTau;
  bool balance = false;
  std::string weighting = "none";
  std::string refine_weighting;  // empty = same as weighting
  std::string refine_scope = "full";
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t knn_k = 5;
  std::size_t max_depth = 12;
  std::size_t min_samples_leaf = 1;
  std::size_t trees = 100;
  std::size_t mtry = 0;
  std::size_t estimators = 50;
  std::size_t stump_depth = 1;
  std::size_t gbdt_iters = 100;
  double gbdt_lr = 0.1;
  std::size_t max_leaves = 31;
  std::size_t gbdt_depth = 6;
  double lambda = 1.0;
  double min_hessian = 1e-3;
  std::size_t bins = 256;

  // eval / predict / serve
  std::string model;
  std::string report;
  std::string matrix_text;
  bool no_timing = false;
  std::string host = "127.0.0.1";
  int port = 8080;

  std::string out;
};

inline LearnerKind base_kind(const std::string& s) {
  if (s == "lr") return LearnerKind::softmax_head;
  if (s == "gnb") return LearnerKind::gaussian_nb;
  if (s == "knn") return LearnerKind::knn;
  if (s == "dt") return LearnerKind::cart;
  if (s == "rf") return LearnerKind::random_forest;
  if (s == "ada") return LearnerKind::adaboost;
  throw InvalidInput("unknown base kind '" + s + "' (expected lr|gnb|knn|dt|rf|ada)");
}

inline std::optional<LearnerKind> refine_kind(const std::string& s) {
  if (s == "gbdt-leaf") return LearnerKind::gbdt_leaf;
  if (s == "gbdt-level") return LearnerKind::gbdt_level;
  if (s == "none") return std::nullopt;
  throw InvalidInput("unknown refine kind '" + s + "' (expected gbdt-leaf|gbdt-level|none)");
}

inline ClassWeighting weighting_mode(const std::string& s) {
  if (s == "none") return ClassWeighting::none;
  if (s == "balanced") return ClassWeighting::balanced;
  throw InvalidInput("unknown weighting '" + s + "' (expected none|balanced)");
}

inline RefineScope refine_scope(const std::string& s) {
  if (s == "full") return RefineScope::full;
  if (s == "uncertain_only") return RefineScope::uncertain_only;
  throw InvalidInput("unknown refine scope '" + s + "' (expected full|uncertain_only)");
}

inline LearnerParams learner_params(const RunConfig& c) {
  LearnerParams p;
  p.head.epochs = c.epochs;
  p.head.batch_size = c.batch_size;
  p.head.eta = c.lr;
  p.head.seed = derive_seed(c.seed, "softmax_head");
  p.knn_k = c.knn_k;
  p.cart.max_depth = c.max_depth;
  p.cart.min_samples_leaf = c.min_samples_leaf;
  p.forest.n_trees = c.trees;
  p.forest.mtry = c.mtry;
  p.forest.min_samples_leaf = c.min_samples_leaf;
  p.forest.seed = derive_seed(c.seed, "random_forest");
  p.forest.workers = c.workers;
  p.ada.n_estimators = c.estimators;
  p.ada.stump_depth = c.stump_depth;
  p.gbdt.n_iters = c.gbdt_iters;
  p.gbdt.learning_rate = c.gbdt_lr;
  p.gbdt.max_leaves = c.max_leaves;
  p.gbdt.max_depth = c.gbdt_depth;
  p.gbdt.lambda = c.lambda;
  p.gbdt.min_hessian = c.min_hessian;
  p.gbdt.n_bins = c.bins;
  p.gbdt.seed = derive_seed(c.seed, "gbdt");
  p.gbdt.workers = c.workers;
  return p;
}

/// Resolved settings of the train stage, echoed into models and reports.
inline nlohmann::json train_config_json(const RunConfig& c) {
  return {{"features", c.features},
          {"base", c.base},
          {"refine", c.refine},
          {"tau", c.tau},
          {"balance", c.balance},
          {"weighting", c.weighting},
          {"refine_weighting", c.refine_weighting.empty() ? c.weighting : c.refine_weighting},
          {"refine_scope", c.refine_scope},
          {"seed", c.seed},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"knn_k", c.knn_k},
          {"max_depth", c.max_depth},
          {"min_samples_leaf", c.min_samples_leaf},
          {"trees", c.trees},
          {"mtry", c.mtry},
          {"estimators", c.estimators},
          {"stump_depth", c.stump_depth},
          {"gbdt_iters", c.gbdt_iters},
          {"gbdt_lr", c.gbdt_lr},
          {"max_leaves", c.max_leaves},
          {"gbdt_depth", c.gbdt_depth},
          {"lambda", c.lambda},
          {"min_hessian", c.min_hessian},
          {"bins", c.bins},
          {"out", c.out}};
}

inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline fs::path timing_sidecar(const fs::path& model_path) {
  return fs::path(model_path.string() + ".timing.json");
}

inline bool is_balanced(const Dataset& ds) {
  const auto counts = ds.class_counts();
  for (auto c : counts) {
    if (c != counts.front()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Stages

inline int do_extract(const RunConfig& c, std::ostream& err) {
  if (c.manifest.empty() == c.fmap.empty()) {
    throw InvalidInput("extract needs exactly one of --manifest or --fmap");
  }
  Dataset ds;
  if (!c.fmap.empty()) {
    ds = pool_feature_maps(read_feature_map_file(c.fmap));
  } else {
    const Manifest manifest = read_manifest(c.manifest);
    if (manifest.entries.empty()) throw InvalidInput("manifest has no entries");
    const fs::path root = fs::path(c.manifest).parent_path();
    const auto classes = manifest.class_table();
    std::vector<std::vector<float>> rows(manifest.entries.size());
    parallel_for(rows.size(), c.workers, [&](std::size_t i) {
      fs::path p = manifest.entries[i].path;
      if (p.is_relative()) p = root / p;
      rows[i] = baseline_histogram_features(preprocess_image(read_pnm(p), c.side));
    });
    std::vector<float> features;
    std::vector<Label> labels;
    const std::size_t d = rows.front().size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != d) throw InvalidInput("images disagree on channel count");
      features.insert(features.end(), rows[i].begin(), rows[i].end());
      labels.push_back(manifest.class_id(manifest.entries[i].label));
    }
    ds = Dataset(d, std::move(features), std::move(labels), classes);
  }
  write_feature_file(ds, c.out);
  err << "extract: wrote " << ds.n() << " x " << ds.d() << " features to " << c.out << "\n";
  return kOk;
}

inline int do_split(const RunConfig& c, std::ostream& err) {
  const auto ds = read_feature_file(c.in);
  const auto split = stratified_split(ds, c.ratio, derive_seed(c.seed, "split"));
  write_feature_file(split.train, c.train_out);
  write_feature_file(split.holdout, c.holdout_out);
  err << "split: " << split.train.n() << " train / " << split.holdout.n() << " holdout\n";
  return kOk;
}

inline int do_balance(const RunConfig& c, std::ostream& err) {
  const auto ds = read_feature_file(c.in);
  const auto balanced = undersample(ds, derive_seed(c.seed, "balance"));
  write_feature_file(balanced, c.out);
  err << "balance: " << ds.n() << " -> " << balanced.n() << " samples\n";
  return kOk;
}

inline int do_train(const RunConfig& c, std::ostream& err) {
  const auto base = base_kind(c.base);
  const auto refine = refine_kind(c.refine);
  const auto weighting = weighting_mode(c.weighting);
  const auto scope = refine_scope(c.refine_scope);
  check_tau(c.tau);
  Dataset train = read_feature_file(c.features);
  if (!train.has_labels()) throw InvalidInput("training features carry no labels");
  if (c.balance) train = undersample(train, derive_seed(c.seed, "balance"));

  nlohmann::json model_doc;
  nlohmann::json timing;
  if (refine) {
    CascadeSpec spec;
    spec.base = base;
    spec.refine = *refine;
    spec.params = learner_params(c);
    spec.tau = c.tau;
    spec.weighting = weighting;
    if (!c.refine_weighting.empty()) spec.refine_weighting = weighting_mode(c.refine_weighting);
    spec.scope = scope;
    const auto fit = fit_cascade(train, spec, c.workers);
    model_doc = to_json(fit.model);
    timing = {{"base_train_s", fit.base_train_s},
              {"refine_train_s", fit.refine_train_s},
              {"train_s", fit.base_train_s + fit.refine_train_s},
              {"warnings", fit.warnings}};
    for (const auto& w : fit.warnings) err << "train: warning: " << w << "\n";
  } else {
    const auto w = class_weights(train, weighting);
    auto fitted = timed([&] { return fit_classifier(base, train, learner_params(c), w); });
    model_doc = to_json(fitted.value);
    timing = {{"base_train_s", fitted.seconds},
              {"refine_train_s", 0.0},
              {"train_s", fitted.seconds},
              {"warnings", nlohmann::json::array()}};
  }
  model_doc["provenance"] = train_config_json(c);
  io::write_file(c.out, dump_json(model_doc));
  io::write_file(timing_sidecar(c.out), dump_json(timing));
  err << "train: wrote " << c.out << "\n";
  return kOk;
}

inline int do_eval(const RunConfig& c, std::ostream& err) {
  const auto doc = parse_json_file(c.model);
  const auto model = cascade_from_json(doc);
  const auto ds = read_feature_file(c.features);
  if (!ds.has_labels()) throw InvalidInput("evaluation features carry no labels");
  if (ds.class_names() != model.class_names) throw InvalidInput("evaluation class table differs from the model's");
  if (ds.n() == 0) throw InvalidInput("evaluation set is empty");

  auto routed = timed([&] { return cascade_predict_batch(model, ds, c.workers); });
  std::vector<Label> predicted;
  std::size_t to_base = 0;
  for (const auto& r : routed.value) {
    predicted.push_back(r.label);
    to_base += r.route == Route::base ? 1 : 0;
  }

  EvalReport report;
  report.model_kind = model.single_learner ? std::string(model.base->kind())
                                           : "cascade(" + std::string(model.base->kind()) + "+" +
                                                 std::string(model.refine->kind()) + ")";
  report.n = ds.n();
  report.class_names = ds.class_names();
  report.balanced = is_balanced(ds);
  report.confusion = confusion_matrix(ds.labels(), predicted, ds.k(), ds.class_names());
  report.metrics = classification_report(report.confusion);
  if (!model.single_learner) {
    const double base_fraction = static_cast<double>(to_base) / static_cast<double>(ds.n());
    report.cascade = CascadeStats{model.tau, base_fraction, 1.0 - base_fraction};
  }
  if (c.no_timing) {
    report.flags.push_back("timing_disabled");
  } else {
    report.timing.infer_total_s = routed.seconds;
    report.timing.infer_per_sample_s = routed.seconds / static_cast<double>(ds.n());
    const auto sidecar = timing_sidecar(c.model);
    if (fs::exists(sidecar)) {
      report.timing.train_s = parse_json_file(sidecar).at("train_s").get<double>();
    } else {
      report.flags.push_back("train_time_unavailable");
    }
  }
  if (model.refine_fallback) report.flags.push_back("refine_scope_fallback_full");

  report.config = {{"eval",
                    {{"model", c.model},
                     {"features", c.features},
                     {"report", c.report},
                     {"matrix_text", c.matrix_text},
                     {"no_timing", c.no_timing}}},
                   {"train", doc.value("provenance", nlohmann::json::object())}};
  nlohmann::json training = nlohmann::json::object();
  auto histories = [&](const Classifier& m, const char* role) {
    if (const auto* g = std::get_if<GbdtModel>(&m.model)) training[role] = {{"loss_history", g->loss_history}};
    if (const auto* l = std::get_if<LinearModel>(&m.model)) training[role] = {{"loss_history", l->loss_history}};
  };
  histories(*model.base, "base");
  if (!model.single_learner) histories(*model.refine, "refine");
  report.training = training;

  std::optional<fs::path> text;
  if (!c.matrix_text.empty()) text = c.matrix_text;
  emit_report(report, c.report, text);
  err << "eval: accuracy " << shortest(report.metrics.accuracy) << " weighted-F1 "
      << shortest(report.metrics.weighted_f1) << "\n";
  return kOk;
}

inline int do_predict(const RunConfig& c, std::ostream& err) {
  const auto model = load_model(c.model);
  const auto ds = read_feature_file(c.features);
  const auto routed = cascade_predict_batch(model, ds, c.workers);
  std::string csv = "index,label,confidence,route\n";
  for (std::size_t i = 0; i < routed.size(); ++i) {
    csv += std::to_string(i) + "," + detail::csv_field(model.class_names[routed[i].label]) + "," +
           shortest(routed[i].confidence) + "," + route_name(routed[i].route) + "\n";
  }
  io::write_file(c.out, csv);
  err << "predict: wrote " << routed.size() << " rows to " << c.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// Argument handling

inline void add_shared(CLI::App* sub, RunConfig& c) {
  sub->add_option("--config", c.config_file, "flat key = value file; command-line flags take precedence");
  sub->add_option("--seed", c.seed, "master seed")->capture_default_str();
  sub->add_option("--workers", c.workers, "worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

/// Appends `--key=value` for every config-file key not already given as a flag.
inline std::vector<std::string> merge_config_file(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  std::istringstream text(io::read_file(*path));
  const auto given = [&](const std::string& key) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
  };
  std::vector<std::string> extra;
  for (const auto& item : CLI::ConfigINI().from_config(text)) {
    if (item.name == "++" || item.name == "--" || item.name == "config" || given(item.name)) continue;
    for (const auto& value : item.inputs) extra.push_back("--" + item.name + "=" + value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

/// Parses argv and runs one stage. Diagnostics go to `err`.
inline int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                       const ServeFn& serve = {}) {
  RunConfig c;
  c.workers = default_workers();
  CLI::App app{"Confidence-gated two-stage classifier pipeline", "hybrid"};
  app.require_subcommand(1);

  auto* extract = app.add_subcommand("extract", "images (PPM/PGM manifest) or FMAP maps -> FVEC features");
  add_shared(extract, c);
  extract->add_option("--manifest", c.manifest, "CSV manifest with header path,label");
  extract->add_option("--fmap", c.fmap, "FMAP file of backbone feature maps (pooled with GAP)");
  extract->add_option("--side", c.side, "resize target side")->check(CLI::PositiveNumber)->capture_default_str();
  extract->add_option("--out", c.out, "output FVEC")->required();

  auto* split = app.add_subcommand("split", "stratified train/holdout split");
  add_shared(split, c);
  split->add_option("--in", c.in, "input FVEC")->required();
  split->add_option("--ratio", c.ratio, "training fraction")->capture_default_str();
  split->add_option("--train-out", c.train_out)->required();
  split->add_option("--holdout-out", c.holdout_out)->required();

  auto* balance = app.add_subcommand("balance", "random undersampling to the smallest class");
  add_shared(balance, c);
  balance->add_option("--in", c.in, "input FVEC")->required();
  balance->add_option("--out", c.out, "output FVEC")->required();

  auto* train = app.add_subcommand("train", "fit a base model and optional refinement stage");
  add_shared(train, c);
  train->add_option("--features", c.features, "training FVEC")->required();
  train->add_option("--base", c.base, "lr|gnb|knn|dt|rf|ada")->capture_default_str();
  train->add_option("--refine", c.refine, "gbdt-leaf|gbdt-level|none")->capture_default_str();
  train->add_option("--tau", c.tau, "confidence threshold")->capture_default_str();
  train->add_flag("--balance", c.balance, "undersample the training set first");
  train->add_option("--weighting", c.weighting, "none|balanced")->capture_default_str();
  train->add_option("--refine-weighting", c.refine_weighting, "none|balanced (default: --weighting)");
  train->add_option("--refine-scope", c.refine_scope, "full|uncertain_only")->capture_default_str();
  train->add_option("--epochs", c.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch-size", c.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--knn-k", c.knn_k)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--max-depth", c.max_depth, "decision tree depth")->capture_default_str();
  train->add_option("--min-samples-leaf", c.min_samples_leaf)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--trees", c.trees)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--mtry", c.mtry, "features per split (0 = ceil(sqrt(d)))")->capture_default_str();
  train->add_option("--estimators", c.estimators)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--stump-depth", c.stump_depth)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--gbdt-iters", c.gbdt_iters)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--gbdt-lr", c.gbdt_lr)->capture_default_str();
  train->add_option("--max-leaves", c.max_leaves)->capture_default_str();
  train->add_option("--gbdt-depth", c.gbdt_depth)->capture_default_str();
  train->add_option("--lambda", c.lambda)->capture_default_str();
  train->add_option("--min-hessian", c.min_hessian)->capture_default_str();
  train->add_option("--bins", c.bins)->capture_default_str();
  train->add_option("--out", c.out, "model JSON")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a model on labelled features");
  add_shared(eval, c);
  eval->add_option("--model", c.model)->required();
  eval->add_option("--features", c.features)->required();
  eval->add_option("--report", c.report, "report JSON")->required();
  eval->add_option("--matrix-text", c.matrix_text, "plain-text confusion matrix");
  eval->add_flag("--no-timing", c.no_timing, "omit wall-clock timings (byte-stable reports)");

  auto* predict = app.add_subcommand("predict", "per-sample predictions as CSV");
  add_shared(predict, c);
  predict->add_option("--model", c.model)->required();
  predict->add_option("--features", c.features)->required();
  predict->add_option("--out", c.out, "CSV path")->required();

  auto* serve_cmd = app.add_subcommand("serve", "HTTP prediction endpoint");
  add_shared(serve_cmd, c);
  serve_cmd->add_option("--model", c.model)->required();
  serve_cmd->add_option("--host", c.host)->capture_default_str();
  serve_cmd->add_option("--port", c.port)->capture_default_str();

  std::vector<std::string> merged;
  try {
    merged = merge_config_file(args);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  }
  std::vector<std::string> reversed(merged.rbegin(), merged.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kValidation;
  }

  try {
    if (*extract) return do_extract(c, err);
    if (*split) return do_split(c, err);
    if (*balance) return do_balance(c, err);
    if (*train) return do_train(c, err);
    if (*eval) return do_eval(c, err);
    if (*predict) return do_predict(c, err);
    if (*serve_cmd) {
      if (!serve) throw InvalidInput("serve is not available in this build");
      const auto model = load_model(c.model);
      return serve(model, c.host, c.port, err);
    }
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  }
  return kValidation;
}

}  // namespace hybrid::cli
