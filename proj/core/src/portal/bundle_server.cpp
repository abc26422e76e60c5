#include <mutex>

#include <fmt/format.h>

#include "http_common.hpp"
#include "rrc/evalcore.hpp"
#include "rrc/portal.hpp"
#include "rrc/taskdef.hpp"
#include "rrc/util/fs.hpp"
#include "rrc/util/hash.hpp"
#include "rrc/util/zip.hpp"

namespace rrc::portal {

namespace stdfs = std::filesystem;
using detail::Reply;
using detail::wrap;
using httplib::Request;
using nlohmann::json;

struct BundleServer::Impl {
  taskdef::ResearchTask task;
  std::string gt_zip;
  std::string index_html;
  httplib::Server http;
  std::mutex mutex;
  std::map<std::string, evalcore::ResultFiles> results;

  explicit Impl(const stdfs::path& bundle) {
    std::map<std::string, std::string> files;
    if (stdfs::is_directory(bundle)) {
      for (const char* name : {"task.json", "gt/snapshot.zip", "ui/index.html"}) {
        files[name] = fs::read_file(bundle / name);
      }
    } else {
      for (auto& e : zip::read_archive(fs::read_file(bundle))) files[e.name] = std::move(e.data);
    }
    for (const char* name : {"task.json", "gt/snapshot.zip"}) {
      if (!files.contains(name)) throw Error("BadBundle", fmt::format("bundle lacks {}", name));
    }
    task = taskdef::task_from_json(json::parse(files["task.json"]));
    gt_zip = std::move(files["gt/snapshot.zip"]);
    index_html = files.contains("ui/index.html") ? files["ui/index.html"]
                                                 : std::string(taskdef::bundle_index_html());
    routes();
  }

  const evalcore::Protocol& protocol() const {
    return task.evaluations.at(task.default_evaluation);
  }

  void routes() {
    http.Get("/", wrap([this](const Request&) { return Reply::raw(index_html, "text/html"); }));
    http.Get("/api/task", wrap([this](const Request&) { return Reply::json(taskdef::to_json(task)); }));
    http.Post("/api/evaluate", wrap([this](const Request& req) {
      const std::string archive = detail::upload_bytes(req, "archive");
      auto files = evalcore::evaluate_archives(gt_zip, archive, protocol(), task.input_format);
      const std::string id = sha256_hex(archive).substr(0, 16);
      json listing = json::array();
      for (const auto& [path, _] : files) listing.push_back(path);
      const json overall = json::parse(files.at("overall.json"));
      {
        std::lock_guard lock(mutex);
        results[id] = std::move(files);
      }
      return Reply::json({{"id", id}, {"files", listing}, {"overall", overall}});
    }));
    http.Get(R"(/api/results/([0-9a-f]{16})/(.+))", wrap([this](const Request& req) {
      std::lock_guard lock(mutex);
      const auto it = results.find(req.matches[1].str());
      if (it == results.end()) throw Error("NotFound", "unknown result id");
      const auto f = it->second.find(req.matches[2].str());
      if (f == it->second.end()) throw Error("NotFound", "no such result file");
      return Reply::raw(f->second, "application/json");
    }));
  }
};

BundleServer::BundleServer(const stdfs::path& bundle) : impl_(std::make_unique<Impl>(bundle)) {}

BundleServer::~BundleServer() { stop(); }

int BundleServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

void BundleServer::listen() { impl_->http.listen_after_bind(); }

void BundleServer::stop() { impl_->http.stop(); }

}  // namespace rrc::portal
