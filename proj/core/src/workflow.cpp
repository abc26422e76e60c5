#include "rrc/workflow.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "rrc/util/fs.hpp"

namespace rrc::workflow {

namespace stdfs = std::filesystem;
using nlohmann::json;
using datastore::Role;

namespace {

constexpr std::string_view kStateNames[] = {"unannotated", "reserved", "submitted",
                                            "revision_requested", "approved"};
constexpr std::string_view kStageNames[] = {"in_context", "out_of_context"};
constexpr std::string_view kVerdictNames[] = {"care", "dont_care"};

template <typename E, std::size_t N>
E enum_from(const std::string_view (&names)[N], std::string_view s, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw Error("BadValue", fmt::format("unknown {} '{}'", what, s));
}

json opt(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

std::vector<const annotation::Node*> word_nodes(const annotation::Tree& tree) {
  std::vector<const annotation::Node*> out;
  annotation::for_each_node(tree, [&](const annotation::Node& n) {
    if (n.granularity == annotation::Granularity::Word) out.push_back(&n);
  });
  return out;
}

VerificationVerdict verdict_from_json(const json& j) {
  return {j.at("image"),
          j.at("node"),
          stage_from_string(j.at("stage").get<std::string>()),
          verdict_from_string(j.at("verdict").get<std::string>()),
          j.at("verifier"),
          j.at("timestamp")};
}

}  // namespace

std::string_view to_string(State s) { return kStateNames[static_cast<int>(s)]; }
State state_from_string(std::string_view s) { return enum_from<State>(kStateNames, s, "state"); }
std::string_view to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }
Stage stage_from_string(std::string_view s) { return enum_from<Stage>(kStageNames, s, "stage"); }
std::string_view to_string(Verdict v) { return kVerdictNames[static_cast<int>(v)]; }
Verdict verdict_from_string(std::string_view s) {
  return enum_from<Verdict>(kVerdictNames, s, "verdict");
}

bool is_legal_transition(State from, State to) {
  switch (from) {
    case State::Unannotated: return to == State::Reserved;
    case State::Reserved:
      return to == State::Submitted || to == State::Unannotated ||
             to == State::RevisionRequested;
    case State::Submitted: return to == State::Approved || to == State::RevisionRequested;
    case State::RevisionRequested: return to == State::Reserved;
    case State::Approved: return false;
  }
  return false;
}

json to_json(const WorkItem& w) {
  return {{"image", w.image_id},
          {"state", to_string(w.state)},
          {"assignee", opt(w.assignee)},
          {"reservation_expiry", opt(w.reservation_expiry)},
          {"rating", w.rating ? json(*w.rating) : json(nullptr)},
          {"assigned_to", opt(w.assigned_to)},
          {"resume_state", to_string(w.resume_state)},
          {"in_context_complete", w.in_context_complete}};
}

WorkItem work_item_from_json(const json& j) {
  WorkItem w;
  w.image_id = j.at("image");
  w.state = state_from_string(j.at("state").get<std::string>());
  w.assignee = opt_string(j, "assignee");
  w.reservation_expiry = opt_string(j, "reservation_expiry");
  if (j.contains("rating") && !j.at("rating").is_null()) w.rating = j.at("rating").get<int>();
  w.assigned_to = opt_string(j, "assigned_to");
  w.resume_state = state_from_string(j.value("resume_state", std::string("unannotated")));
  w.in_context_complete = j.value("in_context_complete", false);
  return w;
}

json to_json(const VerificationVerdict& v) {
  return {{"image", v.image_id},   {"node", v.node_id},         {"stage", to_string(v.stage)},
          {"verdict", to_string(v.verdict)}, {"verifier", v.verifier}, {"timestamp", v.timestamp}};
}

std::vector<WordRef> shuffle_words(std::vector<WordRef> words, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = words.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded(rng, i));
    std::swap(words[i - 1], words[j]);
  }
  for (std::size_t i = 1; i < words.size(); ++i) {
    if (words[i].image_id != words[i - 1].image_id) continue;
    for (std::size_t j = i + 1; j < words.size(); ++j) {
      if (words[j].image_id != words[i - 1].image_id) {
        std::swap(words[i], words[j]);
        break;
      }
    }
  }
  return words;
}

// ---- Workflow ----------------------------------------------------------------

stdfs::path Workflow::item_path(std::string_view cid, std::string_view iid) const {
  if (!store_.has_image(cid, iid)) {
    throw Error("UnknownImage", fmt::format("unknown image '{}'", iid));
  }
  return store_.collection_dir(cid) / "workflow" / (std::string(iid) + ".json");
}

WorkItem Workflow::item(std::string_view cid, std::string_view iid) const {
  auto text = fs::try_read_file(item_path(cid, iid));
  if (!text) {
    WorkItem w;
    w.image_id = std::string(iid);
    return w;
  }
  return work_item_from_json(json::parse(*text));
}

void Workflow::store_item(std::string_view cid, const WorkItem& w) const {
  fs::write_file_atomic(item_path(cid, w.image_id), to_json(w).dump(2) + "\n");
}

void Workflow::transition(std::string_view cid, WorkItem& w, State to, std::string_view actor,
                          std::string_view action) const {
  if (!is_legal_transition(w.state, to)) {
    throw Error("IllegalTransition",
                fmt::format("{} -> {} is not allowed", to_string(w.state), to_string(to)));
  }
  const State from = w.state;
  w.state = to;
  store_item(cid, w);
  store_.audit(cid, actor, action, w.image_id, {{"from", to_string(from)}, {"to", to_string(to)}});
}

namespace {

fs::FileLock lock_image(const datastore::Store& store, std::string_view cid, std::string_view iid) {
  return fs::FileLock(store.collection_dir(cid) / "workflow" / (std::string(iid) + ".lock"));
}

bool reservation_live(const WorkItem& w, TimePoint now) {
  return w.state == State::Reserved && w.reservation_expiry &&
         from_iso8601(*w.reservation_expiry) > now;
}

}  // namespace

WorkItem Workflow::reserve(std::string_view cid, std::string_view iid, std::string_view annotator,
                           std::chrono::seconds duration) {
  store_.require_role(cid, annotator, {Role::Contributor, Role::Owner, Role::Admin});
  if (duration.count() <= 0) throw Error("BadDuration", "reservation duration must be positive");
  duration = std::min<std::chrono::seconds>(duration, kMaxReservation);
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  WorkItem w = item(cid, iid);
  const TimePoint now = store_.now();
  const std::string expiry = to_iso8601(now + duration);

  if (w.state == State::Reserved) {
    if (reservation_live(w, now) && w.assignee != annotator) {
      throw AlreadyReservedByOther(w.assignee.value_or(""), w.reservation_expiry.value_or(""));
    }
    if (reservation_live(w, now)) {
      w.reservation_expiry = expiry;
      store_item(cid, w);
      store_.audit(cid, annotator, "extend_reservation", iid, {{"expiry", expiry}});
      return w;
    }
    // Lapsed but not yet reaped: release first.
    const State back = w.resume_state;
    w.assignee = w.assigned_to;
    w.reservation_expiry.reset();
    transition(cid, w, back, "system", "expire_reservation");
  }
  if (w.state != State::Unannotated && w.state != State::RevisionRequested) {
    throw Error("NotEligible", fmt::format("image is {}", to_string(w.state)));
  }
  if (w.assigned_to && *w.assigned_to != annotator) {
    throw Error("AssignedToOther", fmt::format("image is assigned to {}", *w.assigned_to));
  }
  w.resume_state = w.state;
  w.assignee = std::string(annotator);
  w.reservation_expiry = expiry;
  transition(cid, w, State::Reserved, annotator, "reserve");
  return w;
}

WorkItem Workflow::release(std::string_view cid, std::string_view iid,
                           std::string_view annotator) {
  store_.require_role(cid, annotator, {Role::Contributor, Role::Owner, Role::Admin});
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  WorkItem w = item(cid, iid);
  if (w.state != State::Reserved || w.assignee != annotator) {
    throw Error("NotReservedByYou", "image is not reserved by you");
  }
  w.assignee = w.assigned_to;
  w.reservation_expiry.reset();
  transition(cid, w, w.resume_state, annotator, "release");
  return w;
}

WorkItem Workflow::assign(std::string_view cid, std::string_view iid,
                          std::optional<std::string> annotator, std::string_view actor) {
  store_.require_role(cid, actor, {Role::Owner, Role::Admin});
  if (annotator && !store_.load_collection(cid).role_of(*annotator)) {
    throw Error("NotAMember", fmt::format("'{}' is not a member of '{}'", *annotator, cid));
  }
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  WorkItem w = item(cid, iid);
  w.assigned_to = annotator;
  store_item(cid, w);
  store_.audit(cid, actor, "assign", iid, {{"annotator", opt(annotator)}});
  return w;
}

annotation::Version Workflow::save_annotation(std::string_view cid, std::string_view iid,
                                              annotation::Tree tree, std::string_view author,
                                              int expected_head, std::string_view note) {
  store_.require_role(cid, author, {Role::Contributor, Role::Owner, Role::Admin});
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  const WorkItem w = item(cid, iid);
  if (!reservation_live(w, store_.now()) || w.assignee != author) {
    throw Error("StaleReservation", "you no longer hold a reservation on this image");
  }
  return store_.save_annotation(cid, iid, std::move(tree), author, expected_head, note);
}

WorkItem Workflow::submit_for_review(std::string_view cid, std::string_view iid,
                                     std::string_view annotator) {
  store_.require_role(cid, annotator, {Role::Contributor, Role::Owner, Role::Admin});
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  WorkItem w = item(cid, iid);
  if (!reservation_live(w, store_.now()) || w.assignee != annotator) {
    throw Error("NotReservedByYou", "image is not reserved by you");
  }
  if (store_.head_revision(cid, iid) == 0) {
    throw Error("NoAnnotationSaved", "save an annotation before submitting");
  }
  w.reservation_expiry.reset();
  transition(cid, w, State::Submitted, annotator, "submit");
  return w;
}

WorkItem Workflow::review(std::string_view cid, std::string_view iid, std::string_view reviewer,
                          ReviewAction action, std::optional<int> rating,
                          std::optional<std::string> comment) {
  store_.require_role(cid, reviewer, {Role::Owner, Role::Admin});
  if (rating && (*rating < 1 || *rating > 5)) throw Error("BadRating", "rating must be 1..5");
  if (action == ReviewAction::RequestRevision && (!comment || comment->empty())) {
    throw Error("CommentRequired", "requesting a revision needs a comment");
  }
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  WorkItem w = item(cid, iid);
  if (w.state != State::Submitted) {
    throw Error("WrongState", fmt::format("image is {}, not submitted", to_string(w.state)));
  }
  if (rating) w.rating = rating;
  const std::string ts = to_iso8601(store_.now());
  store_.update_image(cid, iid, [&](datastore::ImageRecord& r) {
    if (rating) r.quality_rating = rating;
    if (comment && !comment->empty()) r.comments.push_back({std::string(reviewer), ts, *comment});
  });
  if (action == ReviewAction::Approve) {
    transition(cid, w, State::Approved, reviewer, "approve");
  } else {
    transition(cid, w, State::RevisionRequested, reviewer, "request_revision");
  }
  return w;
}

int Workflow::expire_reservations(std::string_view cid, TimePoint now) {
  int released = 0;
  for (const auto& name : fs::list_names(store_.collection_dir(cid) / "workflow")) {
    if (!name.ends_with(".json")) continue;
    const std::string iid = name.substr(0, name.size() - 5);
    auto lock = lock_image(store_, cid, iid);
    WorkItem w = item(cid, iid);
    if (w.state != State::Reserved || !w.reservation_expiry) continue;
    if (from_iso8601(*w.reservation_expiry) >= now) continue;
    w.assignee = w.assigned_to;
    w.reservation_expiry.reset();
    transition(cid, w, w.resume_state, "system", "expire_reservation");
    ++released;
  }
  return released;
}

Board Workflow::in_context_board(std::string_view cid, std::string_view iid) const {
  const WorkItem w = item(cid, iid);
  if (w.state != State::Submitted && w.state != State::Approved) {
    throw Error("NotEligible", fmt::format("image is {}", to_string(w.state)));
  }
  const auto version = store_.load_annotation(cid, iid);
  Board board{std::string(iid), version.revision, {}, {}};
  for (const auto* n : word_nodes(version.tree)) {
    WordCard card{n->id, n->transcription, n->care, std::nullopt, std::nullopt, {0, 0}};
    if (const auto* q = n->quad()) {
      card.quad = *q;
      card.crop = geometry::rectified_size(*q);
      card.rectify = geometry::rectification_homography(*q, card.crop.width, card.crop.height);
    }
    (n->care ? board.care : board.dont_care).push_back(std::move(card));
  }
  if (board.care.empty() && board.dont_care.empty()) {
    throw Error("NoWords", "image has no word annotations");
  }
  return board;
}

std::vector<WordRef> Workflow::out_of_context_queue(std::string_view cid,
                                                    std::uint64_t seed) const {
  std::vector<WordRef> words;
  for (const auto& rec : store_.list_images(cid)) {
    if (!item(cid, rec.id).in_context_complete) continue;
    const auto version = store_.load_annotation(cid, rec.id);
    for (const auto* n : word_nodes(version.tree)) words.push_back({rec.id, n->id});
  }
  if (words.empty()) throw Error("NothingEligible", "no image has completed the in-context pass");
  std::sort(words.begin(), words.end(), [](const WordRef& a, const WordRef& b) {
    return std::tie(a.image_id, a.node_id) < std::tie(b.image_id, b.node_id);
  });
  auto queue = shuffle_words(std::move(words), seed);
  store_.audit(cid, "system", "out_of_context_queue", cid,
               {{"seed", seed}, {"words", queue.size()}});
  return queue;
}

std::vector<VerificationVerdict> Workflow::verdicts_for(std::string_view cid, std::string_view iid,
                                                        std::string_view node_id) const {
  std::vector<VerificationVerdict> out;
  for (const Stage stage : {Stage::InContext, Stage::OutOfContext}) {
    const auto path = store_.collection_dir(cid) / "verification" / std::string(to_string(stage)) /
                      std::string(iid) / (std::string(node_id) + ".json");
    if (auto text = fs::try_read_file(path)) {
      for (const auto& j : json::parse(*text)) out.push_back(verdict_from_json(j));
    }
  }
  return out;
}

VerdictOutcome Workflow::record_verdicts(
    std::string_view cid, std::string_view iid, Stage stage,
    const std::vector<std::pair<std::string, Verdict>>& verdicts, std::string_view verifier,
    bool complete_stage) {
  store_.require_role(cid, verifier, {Role::Contributor, Role::Owner, Role::Admin});
  if (complete_stage) {
    if (stage != Stage::InContext) {
      throw Error("BadValue", "only the in-context pass is completed explicitly");
    }
    store_.require_role(cid, verifier, {Role::Owner, Role::Admin});
  }
  item_path(cid, iid);
  auto lock = lock_image(store_, cid, iid);
  WorkItem w = item(cid, iid);
  if (stage == Stage::OutOfContext && !w.in_context_complete) {
    throw Error("StageOrderViolation", "the in-context pass for this image is not complete");
  }
  if (stage == Stage::InContext && w.state != State::Submitted && w.state != State::Approved) {
    throw Error("NotEligible", fmt::format("image is {}", to_string(w.state)));
  }

  auto version = store_.load_annotation(cid, iid);
  annotation::Tree tree = version.tree;
  for (const auto& [node_id, verdict] : verdicts) {
    const auto* n = annotation::find_node(tree, node_id);
    if (!n || n->granularity != annotation::Granularity::Word) {
      throw Error("UnknownNode", fmt::format("no word '{}' in image '{}'", node_id, iid));
    }
    // Checked up front so a rejected batch leaves no verdict behind.
    if (verdict == Verdict::Care && n->transcription.empty()) {
      throw annotation::InvalidTree(node_id, "a word without transcription cannot be marked care");
    }
  }

  const std::string ts = to_iso8601(store_.now());
  const auto stage_dir =
      store_.collection_dir(cid) / "verification" / std::string(to_string(stage)) / std::string(iid);
  stdfs::create_directories(stage_dir);
  VerdictOutcome outcome;
  for (const auto& [node_id, verdict] : verdicts) {
    const VerificationVerdict v{std::string(iid), node_id, stage, verdict, std::string(verifier), ts};
    const auto path = stage_dir / (node_id + ".json");
    json history = json::array();
    if (auto text = fs::try_read_file(path)) history = json::parse(*text);
    history.push_back(to_json(v));
    fs::write_file_atomic(path, history.dump(2) + "\n");
    store_.audit(cid, verifier, "verdict", std::string(iid) + "/" + node_id, to_json(v));

    // Later stages dominate; within a stage the latest verdict wins. The
    // per-node history is append-only, so file order breaks timestamp ties.
    const VerificationVerdict* winner = nullptr;
    const auto all = verdicts_for(cid, iid, node_id);
    for (const auto& cand : all) {
      if (!winner || std::tie(cand.stage, cand.timestamp) >= std::tie(winner->stage, winner->timestamp)) {
        winner = &cand;
      }
    }
    auto* node = annotation::find_node(tree, node_id);
    const bool care = winner->verdict == Verdict::Care;
    if (node->care != care) {
      node->care = care;
      if (std::find(outcome.flipped.begin(), outcome.flipped.end(), node_id) ==
          outcome.flipped.end()) {
        outcome.flipped.push_back(node_id);
      }
    }
  }
  // A node flipped twice within one batch may be back where it started.
  std::erase_if(outcome.flipped, [&](const std::string& id) {
    return annotation::find_node(tree, id)->care == annotation::find_node(version.tree, id)->care;
  });
  if (!outcome.flipped.empty()) {
    outcome.version = store_.save_annotation(
        cid, iid, std::move(tree), verifier, version.revision,
        fmt::format("{} verification: {} care flag(s) changed", to_string(stage),
                    outcome.flipped.size()));
  }
  if (complete_stage && !w.in_context_complete) {
    w.in_context_complete = true;
    store_item(cid, w);
    store_.audit(cid, verifier, "complete_in_context", iid, json::object());
  }
  return outcome;
}

VerdictOutcome Workflow::record_verdict(std::string_view cid, const VerificationVerdict& v) {
  return record_verdicts(cid, v.image_id, v.stage, {{v.node_id, v.verdict}}, v.verifier);
}

std::vector<DashboardRow> Workflow::dashboard(std::string_view cid,
                                              const DashboardFilter& filter) const {
  std::vector<DashboardRow> rows;
  for (auto& rec : store_.list_images(cid)) {
    WorkItem w = item(cid, rec.id);
    if (filter.state && w.state != *filter.state) continue;
    if (filter.assignee && w.assignee != filter.assignee && w.assigned_to != filter.assignee) continue;
    if (filter.rating && w.rating != filter.rating) continue;
    const int revisions = store_.head_revision(cid, rec.id);
    rows.push_back({std::move(rec), std::move(w), revisions});
  }
  return rows;
}

}  // namespace rrc::workflow
