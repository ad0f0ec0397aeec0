#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hybrid/cascade.hpp"

namespace hybrid {

struct HttpResponse {
  int status = 200;
  std::string body;
};

namespace detail {
inline HttpResponse error_response(int status, const std::string& message) {
  return {status, nlohmann::json{{"error", message}}.dump()};
}
}  // namespace detail

/// POST /v1/predict. Body {"features": [f_1, ..., f_d]}. The model is read-only.
inline HttpResponse handle_predict_request(const CascadeModel* model, std::string_view body) {
  if (model == nullptr) return detail::error_response(503, "no model loaded");
  nlohmann::json request;
  try {
    request = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return detail::error_response(400, std::string("malformed JSON: ") + e.what());
  }
  if (!request.is_object() || !request.contains("features") || !request["features"].is_array()) {
    return detail::error_response(400, "body must be an object with a \"features\" array");
  }
  const auto& arr = request["features"];
  if (arr.size() != model->n_features()) {
    return detail::error_response(400, "expected " + std::to_string(model->n_features()) + " features, got " +
                                           std::to_string(arr.size()));
  }
  std::vector<float> x;
  x.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) return detail::error_response(400, "features must be numbers");
    const auto f = static_cast<float>(v.get<double>());
    if (!std::isfinite(f)) return detail::error_response(400, "features must be finite float32 values");
    x.push_back(f);
  }
  const auto pred = cascade_predict(*model, x);
  nlohmann::json out = {{"label", model->class_names[pred.label]},
                        {"class_id", pred.label},
                        {"confidence", pred.confidence},
                        {"route", route_name(pred.route)},
                        {"probabilities", pred.probabilities}};
  return {200, out.dump()};
}

/// GET /healthz.
inline HttpResponse handle_health(const CascadeModel* model) {
  if (model == nullptr) return detail::error_response(503, "no model loaded");
  const std::string kind = model->single_learner ? std::string(model->base->kind()) : "cascade";
  return {200, nlohmann::json{{"status", "ok"}, {"model_kind", kind}, {"d", model->n_features()}}.dump()};
}

}  // namespace hybrid
