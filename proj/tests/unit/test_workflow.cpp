#include <gtest/gtest.h>

#include <set>

#include "rrc/util/time.hpp"
#include "rrc/workflow.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace rrc;
using namespace rrc::workflow;
using rrc::test::TempDir;
using std::chrono::hours;

namespace {

std::string code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "ok";
}

struct Wf : ::testing::Test {
  TempDir dir;
  TimePoint now = from_unix_ms(1'790'000'000'000);
  datastore::Store store{dir.path() / "store", [this] { return now; }};
  Workflow wf{store};
  std::string img;

  void SetUp() override {
    store.create_collection("c", "C", "boss");
    store.set_member("c", "boss", "own", datastore::Role::Owner);
    store.set_member("c", "boss", "u1", datastore::Role::Contributor);
    store.set_member("c", "boss", "u2", datastore::Role::Contributor);
    img = store.import_image("c", test::tiny_png(1), "a.png", "boss").record.id;
  }

  void annotate_and_submit(const std::string& iid, const std::string& who = "u1") {
    wf.reserve("c", iid, who);
    wf.save_annotation("c", iid, test::sample_tree(), who, store.head_revision("c", iid));
    wf.submit_for_review("c", iid, who);
  }

  std::size_t audit_count(const std::string& action) {
    std::size_t n = 0;
    for (const auto& e : store.read_audit("c")) n += e.at("action") == action;
    return n;
  }
};

}  // namespace

TEST_F(Wf, ReserveSetsHolderAndExpiry) {
  const auto w = wf.reserve("c", img, "u1", hours(24));
  EXPECT_EQ(w.state, State::Reserved);
  EXPECT_EQ(w.assignee, "u1");
  EXPECT_EQ(w.reservation_expiry, to_iso8601(now + hours(24)));
  EXPECT_EQ(wf.item("c", img).state, State::Reserved);
}

TEST_F(Wf, ReserveByOtherIsRejectedWithHolder) {
  wf.reserve("c", img, "u1");
  try {
    wf.reserve("c", img, "u2");
    FAIL();
  } catch (const AlreadyReservedByOther& e) {
    EXPECT_EQ(e.holder(), "u1");
    EXPECT_EQ(e.expiry(), to_iso8601(now + hours(24)));
  }
}

TEST_F(Wf, ReReserveExtendsWithOneAuditEntry) {
  wf.reserve("c", img, "u1", hours(1));
  now += std::chrono::minutes(30);
  const auto w = wf.reserve("c", img, "u1", hours(2));
  EXPECT_EQ(w.reservation_expiry, to_iso8601(now + hours(2)));
  EXPECT_EQ(audit_count("reserve"), 1u);
  EXPECT_EQ(audit_count("extend_reservation"), 1u);
}

TEST_F(Wf, DurationIsClampedAndValidated) {
  const auto w = wf.reserve("c", img, "u1", hours(24 * 30));
  EXPECT_EQ(w.reservation_expiry, to_iso8601(now + kMaxReservation));
  EXPECT_EQ(code_of([&] { wf.reserve("c", img, "u1", std::chrono::seconds(0)); }), "BadDuration");
  EXPECT_EQ(code_of([&] { wf.reserve("c", img, "stranger"); }), "Forbidden");
}

TEST_F(Wf, SubmitNeedsReservationAndRevision) {
  EXPECT_EQ(code_of([&] { wf.submit_for_review("c", img, "u1"); }), "NotReservedByYou");
  wf.reserve("c", img, "u1");
  EXPECT_EQ(code_of([&] { wf.submit_for_review("c", img, "u2"); }), "NotReservedByYou");
  EXPECT_EQ(code_of([&] { wf.submit_for_review("c", img, "u1"); }), "NoAnnotationSaved");
  wf.save_annotation("c", img, test::sample_tree(), "u1", 0);
  const auto w = wf.submit_for_review("c", img, "u1");
  EXPECT_EQ(w.state, State::Submitted);
  EXPECT_FALSE(w.reservation_expiry.has_value());
}

TEST_F(Wf, ReviewFlow) {
  EXPECT_EQ(code_of([&] { wf.review("c", img, "own", ReviewAction::Approve, 4, std::nullopt); }), "WrongState");
  annotate_and_submit(img);
  EXPECT_EQ(code_of([&] { wf.review("c", img, "u2", ReviewAction::Approve, 4, std::nullopt); }), "Forbidden");
  EXPECT_EQ(code_of([&] { wf.review("c", img, "own", ReviewAction::RequestRevision, 2, std::nullopt); }),
            "CommentRequired");
  EXPECT_EQ(code_of([&] { wf.review("c", img, "own", ReviewAction::Approve, 6, std::nullopt); }), "BadRating");
  const auto w = wf.review("c", img, "own", ReviewAction::Approve, 4, std::nullopt);
  EXPECT_EQ(w.state, State::Approved);
  EXPECT_EQ(w.rating, 4);
  EXPECT_EQ(store.load_image("c", img).quality_rating, 4);
}

TEST_F(Wf, RevisionRequestedGoesBackToAnnotator) {
  annotate_and_submit(img);
  wf.review("c", img, "own", ReviewAction::RequestRevision, std::nullopt, std::string("word 2 is wrong"));
  EXPECT_EQ(wf.item("c", img).state, State::RevisionRequested);
  EXPECT_EQ(store.load_image("c", img).comments.back().text, "word 2 is wrong");
  wf.reserve("c", img, "u2");
  // Expiry falls back to revision_requested, not unannotated.
  now += hours(25);
  EXPECT_EQ(wf.expire_reservations("c", now), 1);
  EXPECT_EQ(wf.item("c", img).state, State::RevisionRequested);
}

TEST_F(Wf, ExpiryIsIdempotent) {
  std::vector<std::string> ids{img};
  for (int i = 2; i <= 3; ++i) ids.push_back(store.import_image("c", test::tiny_png(i), "x.png", "boss").record.id);
  EXPECT_EQ(wf.expire_reservations("c", now), 0);
  for (const auto& id : ids) wf.reserve("c", id, "u1", hours(1));
  now += hours(2);
  EXPECT_EQ(wf.expire_reservations("c", now), 3);
  EXPECT_EQ(wf.expire_reservations("c", now), 0);
  for (const auto& id : ids) EXPECT_EQ(wf.item("c", id).state, State::Unannotated);
}

TEST_F(Wf, SaveAfterExpiryIsStale) {
  wf.reserve("c", img, "u1", hours(1));
  now += hours(2);
  EXPECT_EQ(code_of([&] { wf.save_annotation("c", img, test::sample_tree(), "u1", 0); }), "StaleReservation");
  // A lapsed reservation does not block others.
  EXPECT_EQ(wf.reserve("c", img, "u2").assignee, "u2");
}

TEST_F(Wf, AssignmentRestrictsReservation) {
  EXPECT_EQ(code_of([&] { wf.assign("c", img, std::string("u1"), "u2"); }), "Forbidden");
  EXPECT_EQ(code_of([&] { wf.assign("c", img, std::string("nobody"), "own"); }), "NotAMember");
  wf.assign("c", img, std::string("u1"), "own");
  EXPECT_EQ(code_of([&] { wf.reserve("c", img, "u2"); }), "AssignedToOther");
  EXPECT_EQ(wf.reserve("c", img, "u1").state, State::Reserved);
  const auto rows = wf.dashboard("c", DashboardFilter{State::Reserved, std::string("u1"), std::nullopt});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].image.id, img);
  EXPECT_TRUE(wf.dashboard("c", DashboardFilter{State::Approved, std::nullopt, std::nullopt}).empty());
}

TEST_F(Wf, InContextBoardGroupsWords) {
  EXPECT_EQ(code_of([&] { wf.in_context_board("c", img); }), "NotEligible");
  annotate_and_submit(img);
  const auto b = wf.in_context_board("c", img);
  // sample_tree: three words, one don't care.
  EXPECT_EQ(b.care.size(), 2u);
  EXPECT_EQ(b.dont_care.size(), 1u);
  for (const auto& card : b.care) {
    ASSERT_TRUE(card.rectify && card.quad);
    const auto p = geometry::warp_sample(*card.rectify, (*card.quad)[2]);
    EXPECT_NEAR(p.x, card.crop.width, 1e-6);
    EXPECT_NEAR(p.y, card.crop.height, 1e-6);
  }
}

TEST_F(Wf, VerdictsFlipCareInOneRevision) {
  annotate_and_submit(img);
  const int before = store.head_revision("c", img);
  auto out = wf.record_verdicts("c", img, Stage::InContext,
                                {{"l1_w1", Verdict::DontCare}, {"l2_w1", Verdict::DontCare}}, "u1");
  EXPECT_EQ(out.flipped.size(), 2u);
  EXPECT_EQ(store.load_annotation("c", img).note, "in_context verification: 2 care flag(s) changed");
  EXPECT_EQ(store.head_revision("c", img), before + 1);
  // Same verdict again: nothing changes, no revision.
  out = wf.record_verdicts("c", img, Stage::InContext, {{"l1_w1", Verdict::DontCare}}, "u1");
  EXPECT_TRUE(out.flipped.empty());
  EXPECT_FALSE(out.version.has_value());
  EXPECT_EQ(store.head_revision("c", img), before + 1);
  EXPECT_EQ(code_of([&] { wf.record_verdicts("c", img, Stage::InContext, {{"l1", Verdict::Care}}, "u1"); }),
            "UnknownNode");
  // l1_w2 has no text, so it cannot become care; nothing is recorded.
  EXPECT_EQ(code_of([&] { wf.record_verdicts("c", img, Stage::InContext, {{"l1_w2", Verdict::Care}}, "u1"); }),
            "InvalidTree");
  EXPECT_TRUE(wf.verdicts_for("c", img, "l1_w2").empty());
}

TEST_F(Wf, StageTwoNeedsStageOneAndWins) {
  annotate_and_submit(img);
  EXPECT_EQ(code_of([&] {
              wf.record_verdicts("c", img, Stage::OutOfContext, {{"l2_w1", Verdict::DontCare}}, "u2");
            }),
            "StageOrderViolation");
  EXPECT_EQ(code_of([&] { wf.record_verdicts("c", img, Stage::InContext, {}, "u1", true); }), "Forbidden");
  wf.record_verdicts("c", img, Stage::InContext, {{"l2_w1", Verdict::Care}}, "own", true);
  EXPECT_TRUE(wf.item("c", img).in_context_complete);
  // The word reads as care in context; alone it is unreadable.
  auto out = wf.record_verdicts("c", img, Stage::OutOfContext, {{"l2_w1", Verdict::DontCare}}, "u2");
  EXPECT_EQ(out.flipped, std::vector<std::string>{"l2_w1"});
  EXPECT_FALSE(annotation::find_node(store.load_annotation("c", img).tree, "l2_w1")->care);
  // A later in-context verdict does not override stage two.
  now += hours(1);
  out = wf.record_verdicts("c", img, Stage::InContext, {{"l2_w1", Verdict::Care}}, "own");
  EXPECT_TRUE(out.flipped.empty());
  // Two stage-two verifiers disagree: the later one wins, both are kept.
  now += hours(1);
  out = wf.record_verdicts("c", img, Stage::OutOfContext, {{"l2_w1", Verdict::Care}}, "u1");
  EXPECT_EQ(out.flipped.size(), 1u);
  EXPECT_EQ(wf.verdicts_for("c", img, "l2_w1").size(), 4u);
}

TEST_F(Wf, OutOfContextQueueIsSeededPermutation) {
  EXPECT_EQ(code_of([&] { wf.out_of_context_queue("c", 1); }), "NothingEligible");
  std::vector<std::string> ids{img};
  for (int i = 2; i <= 4; ++i) ids.push_back(store.import_image("c", test::tiny_png(i), "x.png", "boss").record.id);
  for (const auto& id : ids) {
    annotate_and_submit(id);
    wf.record_verdicts("c", id, Stage::InContext, {}, "own", true);
  }
  const auto a = wf.out_of_context_queue("c", 42);
  EXPECT_EQ(a, wf.out_of_context_queue("c", 42));
  EXPECT_EQ(a.size(), ids.size() * 3);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& w : a) seen.insert({w.image_id, w.node_id});
  EXPECT_EQ(seen.size(), a.size());
  // The spreading pass is greedy; a leftover tail may still touch.
  int adjacent = 0;
  for (std::size_t i = 1; i < a.size(); ++i) adjacent += a[i].image_id == a[i - 1].image_id;
  EXPECT_LE(adjacent, 2);
  EXPECT_NE(a, wf.out_of_context_queue("c", 43));
}

TEST(ShuffleWords, PermutationAndSpreading) {
  std::vector<WordRef> words;
  for (int img = 0; img < 5; ++img) {
    for (int w = 0; w < 4; ++w) words.push_back({"i" + std::to_string(img), "w" + std::to_string(w)});
  }
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = shuffle_words(words, seed);
    EXPECT_EQ(s, shuffle_words(words, seed));
    auto sorted = s;
    std::sort(sorted.begin(), sorted.end(), [](const WordRef& a, const WordRef& b) {
      return std::tie(a.image_id, a.node_id) < std::tie(b.image_id, b.node_id);
    });
    EXPECT_EQ(sorted, words);
  }
  // All words from one image: adjacency is unavoidable and allowed.
  std::vector<WordRef> one{{"a", "1"}, {"a", "2"}, {"a", "3"}};
  EXPECT_EQ(shuffle_words(one, 1).size(), 3u);
}

TEST(WorkflowModel, RandomOperationsStayLegal) {
  TempDir dir;
  const auto r = test::run_workflow_model(dir.path(), 1500, 5);
  EXPECT_EQ(r.violations, 0) << r.first_failure;
  EXPECT_GT(r.accepted, 150);
}

TEST(WorkflowStorm, ExactlyOneHolder) {
  TempDir dir;
  const auto r = test::run_reserve_storm(dir.path(), 8, 3);
  EXPECT_EQ(r.bad_rounds, 0) << r.first_failure;
  EXPECT_EQ(r.winners, 3);
}

TEST(Transitions, TableMatchesStateMachine) {
  EXPECT_TRUE(is_legal_transition(State::Unannotated, State::Reserved));
  EXPECT_TRUE(is_legal_transition(State::Reserved, State::Submitted));
  EXPECT_TRUE(is_legal_transition(State::Submitted, State::Approved));
  EXPECT_TRUE(is_legal_transition(State::Submitted, State::RevisionRequested));
  EXPECT_TRUE(is_legal_transition(State::RevisionRequested, State::Reserved));
  EXPECT_TRUE(is_legal_transition(State::Reserved, State::Unannotated));
  EXPECT_FALSE(is_legal_transition(State::Unannotated, State::Approved));
  EXPECT_FALSE(is_legal_transition(State::Approved, State::Reserved));
  EXPECT_FALSE(is_legal_transition(State::Submitted, State::Reserved));
}
