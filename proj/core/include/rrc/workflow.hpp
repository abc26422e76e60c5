#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/datastore.hpp"
#include "rrc/geometry.hpp"

/// Annotation lifecycle: reservations, review, ratings, and the two-pass
/// care / don't-care verification.
///
/// Per-image state lives in `workflow/<iid>.json`; every mutation holds the
/// image's advisory lock (`workflow/<iid>.lock`), so concurrent processes
/// observe a serial history. Verdicts are kept in
/// `verification/<stage>/<iid>/<node-id>.json`.
namespace rrc::workflow {

enum class State { Unannotated, Reserved, Submitted, RevisionRequested, Approved };
enum class Stage { InContext, OutOfContext };
enum class Verdict { Care, DontCare };
enum class ReviewAction { Approve, RequestRevision };

std::string_view to_string(State s);
State state_from_string(std::string_view s);
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);
std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

/// The legal edges of the review state machine.
bool is_legal_transition(State from, State to);

inline constexpr std::chrono::hours kDefaultReservation{24};
inline constexpr std::chrono::hours kMaxReservation{24 * 7};

struct WorkItem {
  std::string image_id;
  State state = State::Unannotated;
  /// Reservation holder while reserved; last annotator afterwards.
  std::optional<std::string> assignee;
  std::optional<std::string> reservation_expiry;
  std::optional<int> rating;
  /// Dashboard assignment; restricts who may reserve.
  std::optional<std::string> assigned_to;
  /// State to fall back to when the reservation ends without a submission.
  State resume_state = State::Unannotated;
  bool in_context_complete = false;
};

nlohmann::json to_json(const WorkItem& w);
WorkItem work_item_from_json(const nlohmann::json& j);

class AlreadyReservedByOther : public Error {
 public:
  AlreadyReservedByOther(std::string holder, std::string expiry)
      : Error("AlreadyReservedByOther", "image is reserved by " + holder + " until " + expiry),
        holder_(std::move(holder)),
        expiry_(std::move(expiry)) {}
  const std::string& holder() const noexcept { return holder_; }
  const std::string& expiry() const noexcept { return expiry_; }

 private:
  std::string holder_;
  std::string expiry_;
};

struct VerificationVerdict {
  std::string image_id;
  std::string node_id;
  Stage stage = Stage::InContext;
  Verdict verdict = Verdict::Care;
  std::string verifier;
  std::string timestamp;
};

nlohmann::json to_json(const VerificationVerdict& v);

struct WordCard {
  std::string node_id;
  std::string transcription;
  bool care = true;
  std::optional<geometry::Quad> quad;
  /// Maps the word's quad onto a `crop` sized rectangle.
  std::optional<geometry::Homography> rectify;
  geometry::CropSize crop{0, 0};
};

struct Board {
  std::string image_id;
  int revision = 0;
  std::vector<WordCard> care;
  std::vector<WordCard> dont_care;
};

struct WordRef {
  std::string image_id;
  std::string node_id;
  friend bool operator==(const WordRef&, const WordRef&) = default;
};

struct VerdictOutcome {
  std::vector<std::string> flipped;
  std::optional<annotation::Version> version;
};

struct DashboardFilter {
  std::optional<State> state;
  std::optional<std::string> assignee;
  std::optional<int> rating;
};

struct DashboardRow {
  datastore::ImageRecord image;
  WorkItem item;
  int revisions = 0;
};

/// Deterministic permutation used by the out-of-context queue: seeded
/// Fisher-Yates, then one greedy pass that breaks up same-image neighbours.
std::vector<WordRef> shuffle_words(std::vector<WordRef> words, std::uint64_t seed);

class Workflow {
 public:
  explicit Workflow(datastore::Store& store) : store_(store) {}

  WorkItem item(std::string_view cid, std::string_view iid) const;

  WorkItem reserve(std::string_view cid, std::string_view iid, std::string_view annotator,
                   std::chrono::seconds duration = kDefaultReservation);
  WorkItem release(std::string_view cid, std::string_view iid, std::string_view annotator);
  WorkItem assign(std::string_view cid, std::string_view iid, std::optional<std::string> annotator,
                  std::string_view actor);

  /// Saves through the datastore only while `author` holds a live
  /// reservation; otherwise Error("StaleReservation").
  annotation::Version save_annotation(std::string_view cid, std::string_view iid,
                                      annotation::Tree tree, std::string_view author,
                                      int expected_head, std::string_view note = {});

  WorkItem submit_for_review(std::string_view cid, std::string_view iid,
                             std::string_view annotator);
  WorkItem review(std::string_view cid, std::string_view iid, std::string_view reviewer,
                  ReviewAction action, std::optional<int> rating,
                  std::optional<std::string> comment);

  /// Releases every reservation that ended before `now`. Idempotent.
  int expire_reservations(std::string_view cid, TimePoint now);

  Board in_context_board(std::string_view cid, std::string_view iid) const;

  /// Every word of every image whose in-context pass is complete, in the
  /// seeded order. Throws Error("NothingEligible") when empty.
  std::vector<WordRef> out_of_context_queue(std::string_view cid, std::uint64_t seed) const;

  /// Records a batch of verdicts for one image and stage. All care flags
  /// that change land in a single new revision. `complete_stage` on an
  /// in-context batch (owner/admin only) opens the image for stage two.
  VerdictOutcome record_verdicts(std::string_view cid, std::string_view iid, Stage stage,
                                 const std::vector<std::pair<std::string, Verdict>>& verdicts,
                                 std::string_view verifier, bool complete_stage = false);

  VerdictOutcome record_verdict(std::string_view cid, const VerificationVerdict& v);

  std::vector<VerificationVerdict> verdicts_for(std::string_view cid, std::string_view iid,
                                                std::string_view node_id) const;

  std::vector<DashboardRow> dashboard(std::string_view cid, const DashboardFilter& filter) const;

 private:
  std::filesystem::path item_path(std::string_view cid, std::string_view iid) const;
  void store_item(std::string_view cid, const WorkItem& w) const;
  void transition(std::string_view cid, WorkItem& w, State to, std::string_view actor,
                  std::string_view action) const;

  datastore::Store& store_;
};

}  // namespace rrc::workflow
