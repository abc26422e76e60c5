#pragma once

// Shared plumbing for the portal and bundle HTTP servers.

#include <functional>
#include <optional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rrc/error.hpp"
#include "rrc/portal.hpp"

namespace rrc::portal::detail {

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  static Reply json(const nlohmann::json& j, int status = 200) {
    return {status, j.dump(2) + "\n", "application/json"};
  }
  static Reply ordered(const nlohmann::ordered_json& j, int status = 200) {
    return {status, j.dump(2) + "\n", "application/json"};
  }
  static Reply raw(std::string body, std::string type, int status = 200) {
    return {status, std::move(body), std::move(type)};
  }
};

int status_for(const std::string& code);

/// Error body: {"error": {"code", "message", ...details}}.
nlohmann::ordered_json error_body(const std::exception& e);

/// Request body as JSON object; throws BadRequest.
nlohmann::json body_json(const httplib::Request& req);

/// The uploaded file for `field` from a multipart form, or the raw body for
/// any other content type.
std::string upload_bytes(const httplib::Request& req, const std::string& field);

/// Form field (multipart) or query parameter.
std::string field(const httplib::Request& req, const std::string& name,
                  const std::string& fallback = {});

using Handler = std::function<Reply(const httplib::Request&)>;

/// Wraps a handler with error mapping.
httplib::Server::Handler wrap(Handler h);

}  // namespace rrc::portal::detail
