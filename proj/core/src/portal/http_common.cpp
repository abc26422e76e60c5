#include "http_common.hpp"

#include <unordered_map>

#include <fmt/format.h>

#include "rrc/annotation.hpp"
#include "rrc/evalcore.hpp"
#include "rrc/geometry.hpp"
#include "rrc/ingest.hpp"
#include "rrc/workflow.hpp"

namespace rrc::portal::detail {

int status_for(const std::string& code) {
  static const std::unordered_map<std::string, int> table{
      {"Unauthenticated", 401},
      {"BadCredentials", 401},
      {"Forbidden", 403},
      {"SequesteredLeak", 403},
      {"NotFound", 404},
      {"UnknownTask", 404},
      {"UnknownProtocol", 404},
      {"UnknownSubmission", 404},
      {"UnknownCollection", 404},
      {"UnknownImage", 404},
      {"UnknownUser", 404},
      {"UnknownSnapshot", 404},
      {"UnknownNode", 404},
      {"NoSuchRevision", 404},
      {"NoResults", 404},
      {"DuplicateId", 409},
      {"DuplicateEmail", 409},
      {"StaleHead", 409},
      {"StaleReservation", 409},
      {"AlreadyReservedByOther", 409},
      {"AssignedToOther", 409},
      {"NotReservedByYou", 409},
      {"NoAnnotationSaved", 409},
      {"WrongState", 409},
      {"NotEligible", 409},
      {"NoWords", 409},
      {"NothingEligible", 409},
      {"StageOrderViolation", 409},
      {"NotFrozen", 409},
      {"LastAdmin", 409},
      {"IllegalTransition", 409},
      {"InvalidSubmission", 422},
      {"PayloadTooLarge", 413},
  };
  const auto it = table.find(code);
  return it == table.end() ? 400 : it->second;
}

nlohmann::ordered_json error_body(const std::exception& e) {
  nlohmann::ordered_json err;
  if (const auto* re = dynamic_cast<const Error*>(&e)) {
    err["code"] = re->code();
    err["message"] = re->what();
    if (const auto* g = dynamic_cast<const geometry::GeometryError*>(re)) {
      err["vertices"] = g->vertices();
    } else if (const auto* t = dynamic_cast<const annotation::InvalidTree*>(re)) {
      err["path"] = t->path();
    } else if (const auto* r = dynamic_cast<const workflow::AlreadyReservedByOther*>(re)) {
      err["holder"] = r->holder();
      err["expiry"] = r->expiry();
    }
  } else {
    err["code"] = "Internal";
    err["message"] = e.what();
  }
  nlohmann::ordered_json body;
  body["error"] = err;
  if (const auto* s = dynamic_cast<const evalcore::InvalidSubmission*>(&e)) {
    body["report"] = ingest::to_json(s->report());
  }
  return body;
}

nlohmann::json body_json(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw Error("BadRequest", "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("BadRequest", fmt::format("malformed JSON: {}", e.what()));
  }
}

std::string upload_bytes(const httplib::Request& req, const std::string& field_name) {
  if (req.is_multipart_form_data()) {
    if (!req.has_file(field_name)) {
      throw Error("BadRequest", fmt::format("multipart field '{}' is missing", field_name));
    }
    return req.get_file_value(field_name).content;
  }
  if (req.body.empty()) throw Error("BadRequest", "empty upload");
  return req.body;
}

std::string field(const httplib::Request& req, const std::string& name,
                  const std::string& fallback) {
  if (req.is_multipart_form_data() && req.has_file(name)) return req.get_file_value(name).content;
  if (req.has_param(name)) return req.get_param_value(name);
  return fallback;
}

httplib::Server::Handler wrap(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    Reply r;
    try {
      r = h(req);
    } catch (const Error& e) {
      r = Reply::ordered(error_body(e), status_for(e.code()));
    } catch (const nlohmann::json::exception& e) {
      r = Reply::ordered(error_body(Error("BadRequest", e.what())), 400);
    } catch (const std::exception& e) {
      r = Reply::ordered(error_body(e), 500);
    }
    res.status = r.status;
    res.set_content(std::move(r.body), r.content_type);
  };
}

}  // namespace rrc::portal::detail
