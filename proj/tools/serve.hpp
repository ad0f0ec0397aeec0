#pragma once

#include <ostream>
#include <string>

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#endif
#include "httplib.h"

#include "hybrid/cascade.hpp"
#include "hybrid/service.hpp"

namespace hybrid::cli {

/// Routes POST /v1/predict and GET /healthz to the pure handlers.
inline void install_routes(httplib::Server& server, const CascadeModel& model) {
  server.Post("/v1/predict", [&model](const httplib::Request& req, httplib::Response& res) {
    const auto r = handle_predict_request(&model, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  server.Get("/healthz", [&model](const httplib::Request&, httplib::Response& res) {
    const auto r = handle_health(&model);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

inline int serve_http(const CascadeModel& model, const std::string& host, int port, std::ostream& err) {
  httplib::Server server;
  install_routes(server, model);
  err << "serve: listening on http://" << host << ":" << port << "\n";
  if (!server.listen(host, port)) {
    err << "error: cannot listen on " << host << ":" << port << "\n";
    return 2;
  }
  return 0;
}

}  // namespace hybrid::cli
