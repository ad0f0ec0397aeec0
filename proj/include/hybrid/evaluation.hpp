#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hybrid/binary_io.hpp"
#include "hybrid/dataset.hpp"
#include "hybrid/error.hpp"

namespace hybrid {

/// K x K counts; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::uint64_t> counts;
  std::vector<std::string> class_names;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < k; ++c) s += at(c, c);
    return s;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const Label> truth, std::span<const Label> predictions,
                                        std::size_t k, std::vector<std::string> class_names = {}) {
  if (truth.size() != predictions.size()) throw InvalidInput("confusion_matrix: length mismatch");
  if (k == 0) throw InvalidInput("confusion_matrix: K must be >= 1");
  if (class_names.empty()) {
    for (std::size_t c = 0; c < k; ++c) class_names.push_back(std::to_string(c));
  }
  if (class_names.size() != k) throw InvalidInput("confusion_matrix: class_names size != K");
  ConfusionMatrix cm{k, std::vector<std::uint64_t>(k * k, 0), std::move(class_names)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predictions[i] >= k) throw InvalidInput("confusion_matrix: label out of range");
    ++cm.counts[truth[i] * k + predictions[i]];
  }
  return cm;
}

struct ClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::vector<std::string> zero_division;  // e.g. "precision:healthy"
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Per-class and support-weighted precision/recall/F1. Undefined ratios
/// (zero denominators) are reported as 0 and listed in `zero_division`.
inline Metrics classification_report(const ConfusionMatrix& cm) {
  const std::uint64_t n = cm.total();
  if (n == 0) throw InvalidInput("classification_report: empty confusion matrix");
  Metrics m;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(n);
  for (std::size_t c = 0; c < cm.k; ++c) {
    std::uint64_t tp = cm.at(c, c), predicted = 0, support = 0;
    for (std::size_t o = 0; o < cm.k; ++o) {
      predicted += cm.at(o, c);
      support += cm.at(c, o);
    }
    ClassMetrics cls{cm.class_names[c], 0.0, 0.0, 0.0, support};
    if (predicted == 0) {
      m.zero_division.push_back("precision:" + cls.name);
    } else {
      cls.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    }
    if (support == 0) {
      m.zero_division.push_back("recall:" + cls.name);
    } else {
      cls.recall = static_cast<double>(tp) / static_cast<double>(support);
    }
    if (cls.precision + cls.recall > 0.0) {
      cls.f1 = 2.0 * cls.precision * cls.recall / (cls.precision + cls.recall);
    }
    const double share = static_cast<double>(support) / static_cast<double>(n);
    m.weighted_precision += share * cls.precision;
    m.weighted_recall += share * cls.recall;
    m.weighted_f1 += share * cls.f1;
    m.per_class.push_back(std::move(cls));
  }
  return m;
}

struct TimingInfo {
  double train_s = 0.0;
  double infer_total_s = 0.0;
  double infer_per_sample_s = 0.0;
  friend bool operator==(const TimingInfo&, const TimingInfo&) = default;
};

struct CascadeStats {
  double tau = 0.8;
  double base_fraction = 0.0;
  double refine_fraction = 0.0;
  friend bool operator==(const CascadeStats&, const CascadeStats&) = default;
};

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kTimingScope = "model fit and predict only; feature extraction excluded";

struct EvalReport {
  std::string model_kind;
  std::size_t n = 0;
  std::vector<std::string> class_names;
  bool balanced = false;
  Metrics metrics;
  TimingInfo timing;
  std::optional<CascadeStats> cascade;
  std::vector<std::string> flags;
  ConfusionMatrix confusion;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json training = nlohmann::json::object();
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline nlohmann::json report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json per_class = json::array();
  for (const auto& c : r.metrics.per_class) {
    per_class.push_back(
        {{"name", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  }
  json matrix = json::array();
  for (std::size_t t = 0; t < r.confusion.k; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < r.confusion.k; ++p) row.push_back(r.confusion.at(t, p));
    matrix.push_back(row);
  }
  std::vector<std::string> flags = r.flags;
  for (const auto& z : r.metrics.zero_division) flags.push_back("zero_division:" + z);
  json j = {
      {"schema_version", kReportSchemaVersion},
      {"model_kind", r.model_kind},
      {"dataset", {{"n", r.n}, {"K", r.class_names.size()}, {"class_names", r.class_names}, {"balanced", r.balanced}}},
      {"metrics",
       {{"accuracy", r.metrics.accuracy},
        {"per_class", per_class},
        {"weighted",
         {{"precision", r.metrics.weighted_precision},
          {"recall", r.metrics.weighted_recall},
          {"f1", r.metrics.weighted_f1}}}}},
      {"timing",
       {{"train_s", r.timing.train_s},
        {"infer_total_s", r.timing.infer_total_s},
        {"infer_per_sample_s", r.timing.infer_per_sample_s},
        {"scope", kTimingScope}}},
      {"confusion_matrix", matrix},
      {"flags", flags},
      {"config", r.config},
      {"training", r.training},
  };
  if (r.cascade) {
    j["cascade"] = {{"tau", r.cascade->tau},
                    {"base_fraction", r.cascade->base_fraction},
                    {"refine_fraction", r.cascade->refine_fraction}};
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) throw FormatError("unsupported report schema");
    EvalReport r;
    r.model_kind = j.at("model_kind").get<std::string>();
    const auto& ds = j.at("dataset");
    r.n = ds.at("n").get<std::size_t>();
    r.class_names = ds.at("class_names").get<std::vector<std::string>>();
    r.balanced = ds.at("balanced").get<bool>();
    const auto& m = j.at("metrics");
    r.metrics.accuracy = m.at("accuracy").get<double>();
    for (const auto& c : m.at("per_class")) {
      r.metrics.per_class.push_back({c.at("name").get<std::string>(), c.at("precision").get<double>(),
                                     c.at("recall").get<double>(), c.at("f1").get<double>(),
                                     c.at("support").get<std::uint64_t>()});
    }
    r.metrics.weighted_precision = m.at("weighted").at("precision").get<double>();
    r.metrics.weighted_recall = m.at("weighted").at("recall").get<double>();
    r.metrics.weighted_f1 = m.at("weighted").at("f1").get<double>();
    const auto& t = j.at("timing");
    r.timing = {t.at("train_s").get<double>(), t.at("infer_total_s").get<double>(),
                t.at("infer_per_sample_s").get<double>()};
    for (const auto& f : j.at("flags")) {
      const auto s = f.get<std::string>();
      if (s.rfind("zero_division:", 0) == 0) {
        r.metrics.zero_division.push_back(s.substr(14));
      } else {
        r.flags.push_back(s);
      }
    }
    const auto& matrix = j.at("confusion_matrix");
    r.confusion.k = matrix.size();
    r.confusion.class_names = r.class_names;
    for (const auto& row : matrix) {
      if (row.size() != r.confusion.k) throw FormatError("confusion matrix is not square");
      for (const auto& v : row) r.confusion.counts.push_back(v.get<std::uint64_t>());
    }
    if (j.contains("cascade")) {
      const auto& c = j.at("cascade");
      r.cascade = CascadeStats{c.at("tau").get<double>(), c.at("base_fraction").get<double>(),
                               c.at("refine_fraction").get<double>()};
    }
    r.config = j.at("config");
    r.training = j.at("training");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

/// Fixed-width text table with class names on both axes.
inline std::string render_confusion_matrix(const ConfusionMatrix& cm) {
  const std::string corner = "true \\ pred";
  std::size_t label_width = corner.size();
  for (const auto& name : cm.class_names) label_width = std::max(label_width, name.size());
  std::vector<std::size_t> widths(cm.k);
  for (std::size_t p = 0; p < cm.k; ++p) {
    widths[p] = cm.class_names[p].size();
    for (std::size_t t = 0; t < cm.k; ++t) widths[p] = std::max(widths[p], std::to_string(cm.at(t, p)).size());
  }
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w - s.size(), ' ') + s; };
  std::string out = pad_right(corner, label_width);
  for (std::size_t p = 0; p < cm.k; ++p) out += "  " + pad_left(cm.class_names[p], widths[p]);
  out += "\n";
  for (std::size_t t = 0; t < cm.k; ++t) {
    out += pad_right(cm.class_names[t], label_width);
    for (std::size_t p = 0; p < cm.k; ++p) out += "  " + pad_left(std::to_string(cm.at(t, p)), widths[p]);
    out += "\n";
  }
  return out;
}

/// Writes `<json_path>` and, when given, the text rendering of the confusion matrix.
inline void emit_report(const EvalReport& report, const std::filesystem::path& json_path,
                        const std::optional<std::filesystem::path>& text_path = std::nullopt) {
  io::write_file(json_path, report_to_json(report).dump(2) + "\n");
  if (text_path) io::write_file(*text_path, render_confusion_matrix(report.confusion));
}

}  // namespace hybrid
