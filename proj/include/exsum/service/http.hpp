#pragma once

// JSON over HTTP for a Session.
//
//   GET  /state
//   POST /select    {"rule": name | null}
//   POST /param     {"rule", "param", "value"}
//   POST /autotune  TuneRequest
//   GET  /examples  ?mode=&filter=&scope=&count=&seed=
//   POST /save
//   POST /reset
//
// Errors are {"error": code, "message": text}.

#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "exsum/autotune.hpp"
#include "exsum/error.hpp"
#include "exsum/report.hpp"
#include "exsum/service/session.hpp"

namespace exsum::service {

inline nlohmann::json reports_json(const Reports& r) {
  nlohmann::json j = {{"full", to_json(*r.full)}};
  if (r.cf) j["cf"] = to_json(*r.cf);
  if (r.selected) j["selected"] = to_json(*r.selected);
  if (r.evaluation) j["evaluation"] = to_json(*r.evaluation);
  return j;
}

namespace detail {

inline void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, {{"error", code}, {"message", message}}, status);
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("request body is not JSON: ") + e.what());
  }
}

/// Runs a handler and maps library errors to status codes.
inline void guarded(httplib::Response& res, const std::function<void()>& body) {
  try {
    body();
  } catch (const BusyError& e) {
    send_error(res, 409, "busy", e.what());
  } catch (const IoError& e) {
    send_error(res, 500, "io", e.what());
  } catch (const ParseError& e) {
    send_error(res, 422, "parse", e.what());
  } catch (const RuleError& e) {
    send_error(res, 422, "rule", e.what());
  } catch (const DataError& e) {
    send_error(res, 422, "data", e.what());
  } catch (const UsageError& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

}  // namespace detail

inline void install_routes(httplib::Server& server, Session& session) {
  using detail::guarded;
  using detail::send_json;

  server.Get("/state", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, session.state()); });
  });

  server.Post("/select", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = detail::parse_body(req);
      std::optional<std::string> rule;
      if (body.contains("rule") && !body.at("rule").is_null()) rule = body.at("rule").get<std::string>();
      session.select(rule);
      send_json(res, session.state());
    });
  });

  server.Post("/param", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = detail::parse_body(req);
      const auto reports = session.set_param(body.at("rule").get<std::string>(), body.at("param").get<std::string>(),
                                             body.at("value").get<double>());
      send_json(res, {{"bindings", session.state().at("bindings")}, {"metrics", reports_json(reports)}});
    });
  });

  server.Post("/autotune", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TuneRequest tr = tune_request_from_json(detail::parse_body(req));
      auto result = session.run_autotune(tr);
      send_json(res, {{"outcome", to_json(result.outcome)},
                      {"bindings", session.state().at("bindings")},
                      {"metrics", reports_json(result.reports)}});
    });
  });

  server.Get("/examples", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::map<std::string, std::string> q;
      for (const auto& [k, v] : req.params) q[k] = v;
      send_json(res, session.sample_examples(parse_example_query(q)));
    });
  });

  server.Post("/save", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      session.save();
      send_json(res, {{"ok", true}});
    });
  });

  server.Post("/reset", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      session.reset();
      send_json(res, session.state());
    });
  });
}

/// Serves static UI assets from `dir` at "/" when it exists.
inline void mount_assets(httplib::Server& server, const std::filesystem::path& dir) {
  if (!dir.empty() && std::filesystem::is_directory(dir)) server.set_mount_point("/", dir.string());
}

}  // namespace exsum::service
