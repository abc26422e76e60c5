#include "http_client.hpp"

#include <signal.h>
#include <unistd.h>

#include <regex>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "support.hpp"

namespace rrc::test {

ServerProcess::ServerProcess(const std::vector<std::string>& argv, const std::filesystem::path& log,
                             std::chrono::seconds timeout) {
  pid_ = spawn(argv, log);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  const std::regex re(R"(http://[^:\s]+:(\d+)/)");
  while (std::chrono::steady_clock::now() < deadline) {
    std::error_code ec;
    if (std::filesystem::exists(log, ec)) {
      const std::string text = read_file(log);
      std::smatch m;
      if (std::regex_search(text, m, re)) {
        port_ = std::stoi(m[1].str());
        return;
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  stop();
  throw std::runtime_error("server did not report a port; log: " + log.string());
}

ServerProcess::~ServerProcess() { stop(); }

int ServerProcess::stop() {
  if (pid_ <= 0) return 0;
  ::kill(pid_, SIGTERM);
  const int status = wait_for(pid_);
  pid_ = -1;
  return status;
}

namespace {

Response convert(const httplib::Result& r) {
  Response out;
  if (!r) return out;
  out.status = r->status;
  out.raw = r->body;
  out.body = nlohmann::json::parse(r->body, nullptr, false);
  if (out.body.is_discarded()) out.body = nullptr;
  return out;
}

}  // namespace

Api::Api(int port) : client_(std::make_unique<httplib::Client>("127.0.0.1", port)) {
  client_->set_read_timeout(120, 0);
  client_->set_write_timeout(120, 0);
}

Api::~Api() = default;
Api::Api(Api&&) noexcept = default;
Api& Api::operator=(Api&&) noexcept = default;

static httplib::Headers auth(const std::string& token) {
  httplib::Headers h;
  if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
  return h;
}

Response Api::get(const std::string& path) { return convert(client_->Get(path, auth(token_))); }

Response Api::post(const std::string& path, const nlohmann::json& body) {
  return convert(client_->Post(path, auth(token_), body.dump(), "application/json"));
}

Response Api::put(const std::string& path, const nlohmann::json& body) {
  return convert(client_->Put(path, auth(token_), body.dump(), "application/json"));
}

Response Api::post_raw(const std::string& path, const std::string& body, const std::string& type) {
  return convert(client_->Post(path, auth(token_), body, type));
}

Response Api::post_form(const std::string& path, const std::vector<FormField>& fields) {
  httplib::MultipartFormDataItems items;
  for (const auto& f : fields) {
    items.push_back({f.name, f.content, f.filename,
                     f.filename.empty() ? std::string() : std::string("application/octet-stream")});
  }
  return convert(client_->Post(path, auth(token_), items));
}

std::string Api::sign_in(const std::string& email, const std::string& password) {
  post("/api/users", {{"email", email}, {"password", password}, {"display_name", email}});
  const auto r = post("/api/sessions", {{"email", email}, {"password", password}});
  if (r.status != 201) throw std::runtime_error("login failed for " + email + ": " + r.raw);
  token_ = r.body.at("token").get<std::string>();
  return r.body.at("user").at("id").get<std::string>();
}

}  // namespace rrc::test
