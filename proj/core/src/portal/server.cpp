#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "http_common.hpp"
#include "rrc/datastore.hpp"
#include "rrc/evalservice.hpp"
#include "rrc/portal.hpp"
#include "rrc/taskdef.hpp"
#include "rrc/util/fs.hpp"
#include "rrc/util/image.hpp"
#include "rrc/workflow.hpp"

namespace rrc::portal {

namespace stdfs = std::filesystem;
using detail::Reply;
using detail::wrap;
using httplib::Request;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

const std::string kId = "([^/]+)";

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size() && !s.empty()) {
    const auto comma = s.find(',', pos);
    const auto part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!part.empty()) out.push_back(part);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

json homography_json(const geometry::Homography& h) { return h.m; }

json quad_json(const geometry::Quad& q) {
  const auto f = q.flat();
  return std::vector<double>(f.begin(), f.end());
}

}  // namespace

struct Server::Impl {
  Options opts;
  datastore::Store store;
  workflow::Workflow wf;
  taskdef::TaskStore tasks;
  evalservice::Queue queue;
  Accounts accounts;
  httplib::Server http;
  std::atomic<bool> stopping{false};
  std::vector<std::thread> workers;
  std::mutex gt_mutex;
  std::map<std::string, std::set<std::string>> gt_ids;

  explicit Impl(Options o)
      : opts(std::move(o)),
        store(opts.store, opts.clock),
        wf(store),
        tasks(store),
        queue(opts.store, opts.clock),
        accounts(opts.store, opts.clock, opts.password_cost) {
    stdfs::create_directories(opts.store / "submissions");
    http.set_payload_max_length(opts.max_upload_bytes);
    routes();
  }

  // ---- auth helpers ----

  std::optional<UserAccount> viewer(const Request& req) const {
    const auto header = req.get_header_value("Authorization");
    if (header.empty()) return std::nullopt;
    if (!header.starts_with("Bearer ")) throw Error("Unauthenticated", "expected a bearer token");
    auto u = accounts.authenticate(header.substr(7));
    if (!u) throw Error("Unauthenticated", "session is invalid or expired");
    return u;
  }

  UserAccount require_user(const Request& req) const {
    auto u = viewer(req);
    if (!u) throw Error("Unauthenticated", "sign in first");
    return *u;
  }

  UserAccount require_organizer(const Request& req) const {
    auto u = require_user(req);
    if (u.role == UserRole::User) throw Error("Forbidden", "organizers only");
    return u;
  }

  void require_member(const std::string& cid, const UserAccount& u) const {
    store.require_role(cid, u.id,
                       {datastore::Role::Contributor, datastore::Role::Owner, datastore::Role::Admin});
  }

  // ---- submissions ----

  stdfs::path submission_dir(const std::string& sid) const {
    if (sid.size() != 16 || sid.find_first_not_of("0123456789abcdef") != std::string::npos) {
      throw Error("UnknownSubmission", fmt::format("unknown submission '{}'", sid));
    }
    return opts.store / "submissions" / sid;
  }

  SubmissionRecord load_submission(const std::string& sid) const {
    auto text = fs::try_read_file(submission_dir(sid) / "submission.json");
    if (!text) throw Error("UnknownSubmission", fmt::format("unknown submission '{}'", sid));
    return submission_from_json(json::parse(*text));
  }

  static bool can_see(const SubmissionRecord& s, const std::optional<UserAccount>& u) {
    return s.is_public || (u && (u->id == s.owner || u->role == UserRole::Admin));
  }

  SubmissionRecord visible_submission(const std::string& sid,
                                      const std::optional<UserAccount>& u) const {
    auto s = load_submission(sid);
    if (!can_see(s, u)) {
      if (!u) throw Error("Unauthenticated", "this submission is private");
      throw Error("Forbidden", "this submission is private");
    }
    return s;
  }

  std::vector<SubmissionRecord> submissions_of(const std::string& tid) const {
    std::vector<SubmissionRecord> out;
    for (const auto& name : fs::list_names(opts.store / "submissions")) {
      auto text = fs::try_read_file(opts.store / "submissions" / name / "submission.json");
      if (!text) continue;
      auto s = submission_from_json(json::parse(*text));
      if (s.task == tid) out.push_back(std::move(s));
    }
    return out;
  }

  std::optional<std::string> overall_bytes(const SubmissionRecord& s,
                                           const std::string& protocol) const {
    return fs::try_read_file(queue.results_dir(s.id, protocol) / "overall.json");
  }

  std::string display_name(const std::string& uid) const {
    try {
      return accounts.load(uid).display_name;
    } catch (const Error&) {
      return uid;
    }
  }

  std::vector<RankingRow> ranking_rows(const taskdef::ResearchTask& task,
                                       const std::string& protocol,
                                       const std::optional<UserAccount>& u, bool public_only) const {
    std::vector<RankingRow> rows;
    for (const auto& s : submissions_of(task.task_id)) {
      const bool own = u && u->id == s.owner;
      if (!s.is_public && (public_only || !own)) continue;
      const auto bytes = overall_bytes(s, protocol);
      if (!bytes) continue;
      const auto o = json::parse(*bytes);
      rows.push_back({s.id, s.method, display_name(s.owner), s.uploaded_at,
                      o.at("precision").get<double>(), o.at("recall").get<double>(),
                      o.at("hmean").get<double>(), !s.is_public});
    }
    return rows;
  }

  const std::set<std::string>& snapshot_ids(const std::string& hash) {
    std::lock_guard lock(gt_mutex);
    auto it = gt_ids.find(hash);
    if (it == gt_ids.end()) {
      std::set<std::string> ids;
      for (const auto& [id, _] : evalcore::load_gt(tasks.snapshot_bytes(hash))) ids.insert(id);
      it = gt_ids.emplace(hash, std::move(ids)).first;
    }
    return it->second;
  }

  std::string protocol_param(const Request& req, const taskdef::ResearchTask& task) const {
    if (req.has_param("protocol") && !req.get_param_value("protocol").empty()) {
      return task.protocol(req.get_param_value("protocol")).id;
    }
    return task.evaluations.at(task.default_evaluation).id;
  }

  // ---- routes ----

  void routes() {
    auto get = [this](const std::string& p, detail::Handler h) { http.Get("/api" + p, wrap(std::move(h))); };
    auto post = [this](const std::string& p, detail::Handler h) { http.Post("/api" + p, wrap(std::move(h))); };
    auto put = [this](const std::string& p, detail::Handler h) { http.Put("/api" + p, wrap(std::move(h))); };

    http.set_error_handler([](const Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 413 ? "PayloadTooLarge"
                               : res.status == 404 ? "NotFound"
                                                   : "HttpError";
      ordered_json body;
      body["error"] = {{"code", code}, {"message", httplib::status_message(res.status)}};
      res.set_content(body.dump(2) + "\n", "application/json");
    });

    // users and sessions
    post("/users", [this](const Request& req) {
      const auto b = detail::body_json(req);
      const auto u = accounts.register_user(b.value("email", ""), b.value("password", ""),
                                            b.value("display_name", ""));
      return Reply::json(public_json(u), 201);
    });
    post("/sessions", [this](const Request& req) {
      const auto b = detail::body_json(req);
      const auto s = accounts.login(b.value("email", ""), b.value("password", ""));
      return Reply::json({{"token", s.token},
                          {"expires_at", s.expires_at},
                          {"user", public_json(accounts.load(s.user))}},
                         201);
    });
    get("/users/me", [this](const Request& req) { return Reply::json(public_json(require_user(req))); });
    put("/users/" + kId + "/role", [this](const Request& req) {
      const auto me = require_user(req);
      if (me.role != UserRole::Admin) throw Error("Forbidden", "admins only");
      const auto b = detail::body_json(req);
      const auto u = accounts.set_role(req.matches[1].str(),
                                       user_role_from_string(b.value("role", std::string())));
      return Reply::json(public_json(u));
    });

    // tasks
    get("/tasks", [this](const Request&) {
      json out = json::array();
      for (const auto& t : tasks.list()) {
        json evals = json::array();
        for (const auto& p : t.evaluations) evals.push_back({{"id", p.id}, {"kind", evalcore::to_string(p.kind)}});
        out.push_back({{"id", t.task_id},
                       {"challenge", t.challenge_id},
                       {"title", t.title},
                       {"evaluations", evals},
                       {"default_evaluation", t.evaluations.at(t.default_evaluation).id},
                       {"frozen", !t.snapshot.empty()}});
      }
      return Reply::json(out);
    });
    post("/tasks", [this](const Request& req) {
      require_organizer(req);
      const auto t = tasks.define_task(taskdef::task_from_json(detail::body_json(req)));
      return Reply::json(taskdef::to_json(t), 201);
    });
    get("/tasks/" + kId, [this](const Request& req) {
      return Reply::json(taskdef::to_json(tasks.load(req.matches[1].str())));
    });
    post("/tasks/" + kId + "/snapshot", [this](const Request& req) {
      require_organizer(req);
      const auto snap = tasks.freeze_gt(req.matches[1].str());
      return Reply::json({{"snapshot", snap.hash}, {"images", snap.image_ids}}, 201);
    });
    get("/tasks/" + kId + "/images", [this](const Request& req) {
      const auto t = tasks.load(req.matches[1].str());
      if (t.snapshot.empty()) throw Error("NotFrozen", "task GT is not frozen yet");
      const auto& ids = snapshot_ids(t.snapshot);
      return Reply::json(std::vector<std::string>(ids.begin(), ids.end()));
    });
    post("/tasks/" + kId + "/submissions", [this](const Request& req) { return upload(req); });
    get("/tasks/" + kId + "/rankings", [this](const Request& req) {
      const auto t = tasks.load(req.matches[1].str());
      const auto protocol = protocol_param(req, t);
      auto rows = ranking_rows(t, protocol, viewer(req), false);
      sort_ranking(rows);
      ordered_json out = ordered_json::array();
      for (const auto& r : rows) {
        ordered_json row;
        row["submission"] = r.submission;
        row["method"] = r.method;
        row["owner"] = r.owner;
        row["date"] = r.date;
        row["precision"] = r.precision;
        row["recall"] = r.recall;
        row["hmean"] = r.hmean;
        row["private"] = r.is_private;
        out.push_back(row);
      }
      return Reply::ordered(out);
    });
    get("/tasks/" + kId + "/sota", [this](const Request& req) {
      const auto t = tasks.load(req.matches[1].str());
      const auto protocol = protocol_param(req, t);
      json out = json::array();
      for (const auto& p : sota_series(ranking_rows(t, protocol, std::nullopt, true))) {
        out.push_back({{"date", p.date},
                       {"best_hmean", p.best_hmean},
                       {"method", p.method},
                       {"submission", p.submission}});
      }
      return Reply::json(out);
    });
    get("/tasks/" + kId + "/compare", [this](const Request& req) {
      const auto t = tasks.load(req.matches[1].str());
      const auto protocol = protocol_param(req, t);
      const auto image = req.get_param_value("image");
      const auto u = viewer(req);
      const auto ids = split_csv(req.get_param_value("ids"));
      std::vector<SubmissionRecord> subs;
      for (const auto& id : ids) {
        auto s = visible_submission(id, u);
        if (s.task != t.task_id) throw Error("UnknownSubmission", fmt::format("{} is not in this task", id));
        subs.push_back(std::move(s));
      }
      json out = json::array();
      for (const auto& s : subs) out.push_back(json::parse(sample_bytes(s, protocol, image)));
      return Reply::json(out);
    });
    get("/tasks/" + kId + "/bundle", [this](const Request& req) {
      const auto t = tasks.load(req.matches[1].str());
      const auto protocol = req.has_param("protocol") ? req.get_param_value("protocol") : "";
      return Reply::raw(tasks.export_bundle(t.task_id, protocol, opts.executable), "application/zip");
    });

    // submissions
    get("/submissions/" + kId, [this](const Request& req) {
      const auto s = visible_submission(req.matches[1].str(), viewer(req));
      json out = to_json(s);
      out["owner"] = display_name(s.owner);
      json results = json::object();
      for (const auto& p : s.protocols) {
        const auto job = queue.find(s.id, p);
        json r{{"status", job ? evalservice::to_string(job->state) : "unknown"},
               {"attempts", job ? job->attempts : 0},
               {"last_error", job && job->last_error ? json(*job->last_error) : json(nullptr)}};
        const auto bytes = overall_bytes(s, p);
        r["overall"] = bytes ? json::parse(*bytes) : json(nullptr);
        results[p] = r;
      }
      out["results"] = results;
      return Reply::json(out);
    });
    put("/submissions/" + kId + "/visibility", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string sid = req.matches[1].str();
      auto s = load_submission(sid);
      if (s.owner != me.id) throw Error("Forbidden", "only the owner can change visibility");
      const auto v = detail::body_json(req).value("visibility", std::string());
      if (v != "public" && v != "private") throw Error("BadRequest", "visibility is public or private");
      fs::FileLock lock(submission_dir(sid) / "submission.lock");
      s = load_submission(sid);
      s.is_public = v == "public";
      fs::write_file_atomic(submission_dir(sid) / "submission.json", to_json(s).dump(2) + "\n");
      return Reply::json(to_json(s));
    });
    get("/submissions/" + kId + "/results/" + kId + "/overall.json", [this](const Request& req) {
      const auto s = visible_submission(req.matches[1].str(), viewer(req));
      const auto bytes = overall_bytes(s, req.matches[2].str());
      if (!bytes) throw Error("NoResults", "not evaluated yet");
      return Reply::raw(*bytes, "application/json");
    });
    get("/submissions/" + kId + "/samples/" + kId, [this](const Request& req) {
      const auto s = visible_submission(req.matches[1].str(), viewer(req));
      const auto t = tasks.load(s.task);
      return Reply::raw(sample_bytes(s, protocol_param(req, t), req.matches[2].str()),
                        "application/json");
    });

    // collections
    get("/collections", [this](const Request& req) {
      const auto me = require_user(req);
      json out = json::array();
      for (const auto& cid : store.list_collections()) {
        const auto c = store.load_collection(cid);
        const auto role = c.role_of(me.id);
        if (!role) continue;
        out.push_back({{"id", c.id}, {"title", c.title}, {"role", datastore::to_string(*role)}});
      }
      return Reply::json(out);
    });
    post("/collections", [this](const Request& req) {
      const auto me = require_organizer(req);
      const auto b = detail::body_json(req);
      const auto c = store.create_collection(b.value("id", ""), b.value("title", ""), me.id);
      return Reply::json(datastore::to_json(c), 201);
    });
    get("/collections/" + kId, [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      return Reply::json(datastore::to_json(store.load_collection(cid)));
    });
    put("/collections/" + kId + "/members", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      const std::string user = b.value("user", "");
      accounts.load(user);
      const auto c = store.set_member(req.matches[1].str(), me.id, user,
                                      datastore::role_from_string(b.value("role", "")));
      return Reply::json(datastore::to_json(c));
    });
    get("/collections/" + kId + "/images", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      json out = json::array();
      for (const auto& r : store.list_images(cid)) out.push_back(datastore::to_json(r));
      return Reply::json(out);
    });
    post("/collections/" + kId + "/images", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      std::string filename = detail::field(req, "filename");
      if (req.is_multipart_form_data() && req.has_file("image") && filename.empty()) {
        filename = req.get_file_value("image").filename;
      }
      const auto r = store.import_image(cid, detail::upload_bytes(req, "image"), filename, me.id);
      json out{{"image", datastore::to_json(r.record)},
               {"duplicate_of", r.duplicate_of ? json(*r.duplicate_of) : json(nullptr)}};
      return Reply::json(out, r.duplicate_of ? 200 : 201);
    });
    get("/collections/" + kId + "/images/" + kId, [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      json out = datastore::to_json(store.load_image(cid, req.matches[2].str()));
      out["workflow"] = workflow::to_json(wf.item(cid, req.matches[2].str()));
      return Reply::json(out);
    });
    get("/collections/" + kId + "/images/" + kId + "/file", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      const auto bytes = store.image_bytes(cid, req.matches[2].str());
      const auto type = image::sniff(bytes) == image::Format::Png ? "image/png" : "image/jpeg";
      return Reply::raw(bytes, type);
    });
    put("/collections/" + kId + "/subsets", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      const int n = store.assign_subset(req.matches[1].str(),
                                        b.value("images", std::vector<std::string>()),
                                        datastore::subset_from_string(b.value("subset", "")), me.id);
      return Reply::json({{"changed", n}});
    });
    post("/collections/" + kId + "/images/" + kId + "/reserve", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      const auto secs = b.value("duration_seconds", static_cast<std::int64_t>(
                                                        std::chrono::seconds(workflow::kDefaultReservation).count()));
      const auto w = wf.reserve(req.matches[1].str(), req.matches[2].str(), me.id,
                                std::chrono::seconds(secs));
      return Reply::json(workflow::to_json(w));
    });
    post("/collections/" + kId + "/images/" + kId + "/release", [this](const Request& req) {
      const auto me = require_user(req);
      return Reply::json(workflow::to_json(wf.release(req.matches[1].str(), req.matches[2].str(), me.id)));
    });
    post("/collections/" + kId + "/images/" + kId + "/assign", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      std::optional<std::string> who;
      if (b.contains("annotator") && !b.at("annotator").is_null()) who = b.at("annotator").get<std::string>();
      return Reply::json(workflow::to_json(wf.assign(req.matches[1].str(), req.matches[2].str(), who, me.id)));
    });
    get("/collections/" + kId + "/images/" + kId + "/annotation", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str(), iid = req.matches[2].str();
      require_member(cid, me);
      std::optional<int> rev;
      if (req.has_param("revision")) rev = std::stoi(req.get_param_value("revision"));
      const auto v = store.load_annotation(cid, iid, rev);
      return Reply::json({{"image", v.image_id},
                          {"revision", v.revision},
                          {"author", v.author},
                          {"timestamp", v.timestamp},
                          {"note", v.note},
                          {"tree", annotation::tree_to_json(v.tree)},
                          {"xml", annotation::to_xml(v)}});
    });
    put("/collections/" + kId + "/images/" + kId + "/annotation", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      annotation::Tree tree;
      if (b.contains("xml")) {
        tree = annotation::from_xml(b.at("xml").get<std::string>()).tree;
      } else {
        tree = annotation::tree_from_json(b.value("tree", json::array()));
      }
      const auto v = wf.save_annotation(req.matches[1].str(), req.matches[2].str(), std::move(tree),
                                        me.id, b.value("expected_head", 0), b.value("note", ""));
      return Reply::json({{"revision", v.revision}, {"timestamp", v.timestamp}}, 201);
    });
    post("/collections/" + kId + "/images/" + kId + "/submit", [this](const Request& req) {
      const auto me = require_user(req);
      return Reply::json(workflow::to_json(
          wf.submit_for_review(req.matches[1].str(), req.matches[2].str(), me.id)));
    });
    post("/collections/" + kId + "/images/" + kId + "/review", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      const auto action = b.value("action", "");
      if (action != "approve" && action != "request_revision") {
        throw Error("BadRequest", "action is approve or request_revision");
      }
      std::optional<int> rating;
      if (b.contains("rating") && !b.at("rating").is_null()) rating = b.at("rating").get<int>();
      std::optional<std::string> comment;
      if (b.contains("comment") && !b.at("comment").is_null()) comment = b.at("comment").get<std::string>();
      const auto w = wf.review(req.matches[1].str(), req.matches[2].str(), me.id,
                               action == "approve" ? workflow::ReviewAction::Approve
                                                   : workflow::ReviewAction::RequestRevision,
                               rating, comment);
      return Reply::json(workflow::to_json(w));
    });
    get("/collections/" + kId + "/dashboard", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      workflow::DashboardFilter f;
      if (req.has_param("state")) f.state = workflow::state_from_string(req.get_param_value("state"));
      if (req.has_param("assignee")) f.assignee = req.get_param_value("assignee");
      if (req.has_param("rating")) f.rating = std::stoi(req.get_param_value("rating"));
      json out = json::array();
      for (const auto& row : wf.dashboard(cid, f)) {
        out.push_back({{"image", row.image.id},
                       {"filename", row.image.filename},
                       {"subset", datastore::to_string(row.image.subset)},
                       {"state", workflow::to_string(row.item.state)},
                       {"assignee", row.item.assignee ? json(*row.item.assignee) : json(nullptr)},
                       {"assigned_to", row.item.assigned_to ? json(*row.item.assigned_to) : json(nullptr)},
                       {"revisions", row.revisions},
                       {"rating", row.item.rating ? json(*row.item.rating) : json(nullptr)},
                       {"comments", row.image.comments.size()},
                       {"in_context_complete", row.item.in_context_complete}});
      }
      return Reply::json(out);
    });
    get("/collections/" + kId + "/images/" + kId + "/verification/in-context", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      const auto board = wf.in_context_board(cid, req.matches[2].str());
      auto cards = [](const std::vector<workflow::WordCard>& v) {
        json out = json::array();
        for (const auto& c : v) {
          out.push_back({{"node", c.node_id},
                         {"transcription", c.transcription},
                         {"care", c.care},
                         {"points", c.quad ? quad_json(*c.quad) : json(nullptr)},
                         {"homography", c.rectify ? homography_json(*c.rectify) : json(nullptr)},
                         {"crop", {{"width", c.crop.width}, {"height", c.crop.height}}}});
        }
        return out;
      };
      return Reply::json({{"image", board.image_id},
                          {"revision", board.revision},
                          {"care", cards(board.care)},
                          {"dont_care", cards(board.dont_care)}});
    });
    get("/collections/" + kId + "/verification/out-of-context", [this](const Request& req) {
      const auto me = require_user(req);
      const std::string cid = req.matches[1].str();
      require_member(cid, me);
      const std::uint64_t seed = req.has_param("seed") ? std::stoull(req.get_param_value("seed")) : 0;
      json out = json::array();
      for (const auto& w : wf.out_of_context_queue(cid, seed)) {
        out.push_back({{"image", w.image_id}, {"node", w.node_id}});
      }
      return Reply::json({{"seed", seed}, {"words", out}});
    });
    post("/verification/verdicts", [this](const Request& req) {
      const auto me = require_user(req);
      const auto b = detail::body_json(req);
      std::vector<std::pair<std::string, workflow::Verdict>> verdicts;
      for (const auto& v : b.value("verdicts", json::array())) {
        verdicts.emplace_back(v.at("node").get<std::string>(),
                              workflow::verdict_from_string(v.at("verdict").get<std::string>()));
      }
      const auto outcome = wf.record_verdicts(
          b.value("collection", ""), b.value("image", ""),
          workflow::stage_from_string(b.value("stage", "")), verdicts, me.id, b.value("complete", false));
      return Reply::json({{"flipped", outcome.flipped},
                          {"revision", outcome.version ? json(outcome.version->revision) : json(nullptr)}});
    });
    post("/preview/rectify", [this](const Request& req) { return rectify(req); });
  }

  std::string sample_bytes(const SubmissionRecord& s, const std::string& protocol,
                           const std::string& image) const {
    if (!annotation::is_valid_node_id(image)) throw Error("UnknownImage", "bad image id");
    const auto bytes =
        fs::try_read_file(queue.results_dir(s.id, protocol) / "per_sample" / (image + ".json"));
    if (!bytes) throw Error("NoResults", fmt::format("no per-sample result for '{}'", image));
    return *bytes;
  }

  Reply upload(const Request& req) {
    const auto me = require_user(req);
    const auto task = tasks.load(req.matches[1].str());
    if (task.snapshot.empty()) throw Error("NotFrozen", "task GT is not frozen yet");
    const std::string archive = detail::upload_bytes(req, "archive");
    const std::string visibility = detail::field(req, "visibility", "private");
    if (visibility != "public" && visibility != "private") {
      throw Error("BadRequest", "visibility is public or private");
    }
    auto parsed = ingest::parse_archive(archive, task.input_format, snapshot_ids(task.snapshot));
    if (!parsed.report.ok) throw evalcore::InvalidSubmission(std::move(parsed.report));

    SubmissionRecord s;
    s.id = random_hex(8);
    s.task = task.task_id;
    s.owner = me.id;
    s.method = detail::field(req, "method", "unnamed method");
    s.description = detail::field(req, "description");
    s.uploaded_at = to_iso8601(opts.clock());
    s.is_public = visibility == "public";
    s.snapshot = task.snapshot;
    for (const auto& p : task.evaluations) s.protocols.push_back(p.id);

    const auto dir = submission_dir(s.id);
    stdfs::create_directories(dir);
    fs::write_file_atomic(dir / "archive.zip", archive);
    fs::write_file_atomic(dir / "validation.json", ingest::to_json(parsed.report).dump(2) + "\n");
    fs::write_file_atomic(dir / "submission.json", to_json(s).dump(2) + "\n");
    queue.enqueue(s.id, s.protocols);

    ordered_json out;
    out["id"] = s.id;
    out["status"] = ordered_json::object();
    for (const auto& p : s.protocols) out["status"][p] = "pending";
    out["warnings"] = ordered_json::array();
    for (const auto& w : parsed.report.warnings) out["warnings"].push_back(ingest::to_json(w));
    return Reply::ordered(out, 202);
  }

  Reply rectify(const Request& req) {
    const auto me = require_user(req);
    const auto b = detail::body_json(req);
    const std::string cid = b.value("collection", ""), iid = b.value("image", "");
    require_member(cid, me);
    const auto quad = geometry::canonicalize_quad(b.value("points", std::vector<double>()));
    const int height = b.value("height", 64);
    if (height < 1 || height > 1024) throw Error("BadRequest", "height must be in 1..1024");
    const auto size = geometry::rectified_size(quad, height);
    const auto h = geometry::rectification_homography(quad, size.width, size.height);
    const auto inv = h.inverse();
    const auto src = image::decode(store.image_bytes(cid, iid));

    image::Raster crop;
    crop.width = size.width;
    crop.height = size.height;
    crop.rgb.assign(static_cast<std::size_t>(crop.width) * crop.height * 3, 0);
    for (int v = 0; v < crop.height; ++v) {
      for (int u = 0; u < crop.width; ++u) {
        const auto p = geometry::warp_sample(inv, {u + 0.5, v + 0.5});
        const int x = static_cast<int>(std::floor(p.x));
        const int y = static_cast<int>(std::floor(p.y));
        if (x < 0 || y < 0 || x >= src.width || y >= src.height) continue;
        std::copy_n(src.pixel(x, y), 3, crop.rgb.begin() + (static_cast<std::size_t>(v) * crop.width + u) * 3);
      }
    }
    return Reply::json({{"points", quad_json(quad)},
                        {"homography", homography_json(h)},
                        {"width", size.width},
                        {"height", size.height},
                        {"png_base64", base64_encode(image::encode_png(crop))}});
  }

  void start_workers() {
    for (int i = 0; i < opts.workers; ++i) {
      workers.emplace_back([this, i] {
        evalservice::WorkerOptions wo;
        wo.worker_id = fmt::format("portal-{}-{}", ::getpid(), i);
        wo.poll = std::chrono::milliseconds(200);
        wo.jitter = std::chrono::milliseconds(50);
        wo.stop = &stopping;
        evalservice::Worker w(queue, evalservice::store_evaluator(opts.store), wo);
        w.run();
      });
    }
  }
};

Server::Server(Options options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Server::~Server() {
  stop();
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) return impl_->http.bind_to_any_port(host);
  return impl_->http.bind_to_port(host, port) ? port : -1;
}

void Server::listen() {
  impl_->start_workers();
  impl_->http.listen_after_bind();
}

void Server::stop() {
  impl_->stopping = true;
  impl_->http.stop();
  for (auto& t : impl_->workers) {
    if (t.joinable()) t.join();
  }
  impl_->workers.clear();
}

}  // namespace rrc::portal
