#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rrc/evalcore.hpp"
#include "rrc/util/hash.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace rrc;
using namespace rrc::evalcore;
using rrc::test::det;
using rrc::test::gt_word;
using rrc::test::rect;

namespace {

Protocol proto(ProtocolKind k) { return Protocol{"p", k, Params{}, true}; }

GtSample two_words() {
  return {"img", {gt_word("A", rect(0, 0, 100, 10), "HELLO"), gt_word("B", rect(0, 50, 100, 60), "World")}};
}

}  // namespace

TEST(Text, NormalizedEditSimilarityExamples) {
  EXPECT_DOUBLE_EQ(normalized_edit_similarity("HELLO", "HELO"), 0.8);
  EXPECT_DOUBLE_EQ(normalized_edit_similarity("", ""), 1.0);
  EXPECT_DOUBLE_EQ(normalized_edit_similarity("abc", ""), 0.0);
  EXPECT_DOUBLE_EQ(normalized_edit_similarity("Straße", "strasse", false), 1.0 - 2.0 / 7.0);
  EXPECT_DOUBLE_EQ(normalized_edit_similarity("Hello", "hELLO", false), 1.0);
  EXPECT_LT(normalized_edit_similarity("Hello", "hELLO", true), 1.0);
  // Code points, not bytes.
  EXPECT_DOUBLE_EQ(normalized_edit_similarity("caf\xC3\xA9", "cafe"), 0.75);
}

TEST(Text, FoldCaseIsSimpleAndPerCodePoint) {
  EXPECT_EQ(fold_case(U"ÀBΣ"), U"àbσ");
  EXPECT_EQ(fold_case(U"ß"), U"ß");
  EXPECT_TRUE(texts_equal("GATE 3", "gate 3", false));
  EXPECT_FALSE(texts_equal("GATE 3", "gate 3", true));
  EXPECT_EQ(decode_utf8("a\xff").size(), 2u);
  EXPECT_EQ(decode_utf8("a\xff")[1], U'�');
}

// Levenshtein against the full DP table, plus metric properties.
TEST(Text, EditDistanceMatchesOracle) {
  std::mt19937_64 rng(8);
  const std::u32string alphabet = U"abcABé中 ";
  for (int i = 0; i < 2000; ++i) {
    auto rnd = [&] {
      std::u32string s;
      for (int k = static_cast<int>(rng() % 9); k > 0; --k) s += alphabet[rng() % alphabet.size()];
      return s;
    };
    const auto a = rnd(), b = rnd();
    const auto d = levenshtein(a, b);
    EXPECT_EQ(d, test::oracle::edit_distance(a, b));
    EXPECT_EQ(d, levenshtein(b, a));
    EXPECT_EQ(d == 0, a == b);
    EXPECT_LE(d, std::max(a.size(), b.size()));
  }
}

TEST(Text, NesPropertiesOnUtf8) {
  std::mt19937_64 rng(9);
  const std::vector<std::string> parts{"a", "B", "\xC3\xA9", "\xC3\x89", "\xE4\xB8\xAD", " ", "1"};
  for (int i = 0; i < 1000; ++i) {
    auto rnd = [&] {
      std::string s;
      for (int k = static_cast<int>(rng() % 7); k > 0; --k) s += parts[rng() % parts.size()];
      return s;
    };
    const auto a = rnd(), b = rnd();
    for (bool cs : {true, false}) {
      const double v = normalized_edit_similarity(a, b, cs);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_EQ(v, normalized_edit_similarity(b, a, cs));
      EXPECT_EQ(v == 1.0, texts_equal(a, b, cs));
      const auto ua = test::oracle::utf8_to_u32(a), ub = test::oracle::utf8_to_u32(b);
      if (cs) {
        const double n = static_cast<double>(std::max(ua.size(), ub.size()));
        const double want = n == 0 ? 1.0 : 1.0 - static_cast<double>(test::oracle::edit_distance(ua, ub)) / n;
        EXPECT_DOUBLE_EQ(v, want);
      }
    }
  }
}

TEST(Text, RecognitionScore) {
  const auto s = recognition_score({{"HELLO", "HELO"}, {"Gate", "gate"}}, false);
  EXPECT_DOUBLE_EQ(s.word_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(s.mean_nes, 0.9);
  const auto e = recognition_score({}, true);
  EXPECT_EQ(e.word_accuracy, 0.0);
  EXPECT_EQ(e.mean_nes, 0.0);
}

TEST(Params, SchemaValidation) {
  auto p = params_from_json(ProtocolKind::LocalizationIou, {{"iou_threshold", 0.7}});
  EXPECT_DOUBLE_EQ(p.iou_threshold, 0.7);
  EXPECT_THROW(params_from_json(ProtocolKind::LocalizationIou, {{"tr", 0.7}}), Error);
  EXPECT_THROW(params_from_json(ProtocolKind::LocalizationIou, {{"iou_threshold", 0}}), Error);
  EXPECT_THROW(params_from_json(ProtocolKind::LocalizationIou, {{"iou_threshold", 1.5}}), Error);
  EXPECT_THROW(params_from_json(ProtocolKind::Recognition, {{"case_sensitive", 1}}), Error);
  EXPECT_NO_THROW(params_from_json(ProtocolKind::LocalizationDetEval, {{"scatter_penalty", 0}}));
  EXPECT_EQ(params_to_json(ProtocolKind::LocalizationDetEval, Params{}).dump(),
            R"({"dontcare_overlap":0.5,"scatter_penalty":0.8,"tp":0.4,"tr":0.8})");
  EXPECT_EQ(kind_from_string("e2e"), ProtocolKind::EndToEnd);
  EXPECT_EQ(kind_from_string("localization_deteval"), ProtocolKind::LocalizationDetEval);
  EXPECT_THROW(kind_from_string("map"), Error);
  const auto round = protocol_from_json(to_json(Protocol{"x", ProtocolKind::EndToEnd, p, false}));
  EXPECT_EQ(round.kind, ProtocolKind::EndToEnd);
  EXPECT_FALSE(round.per_sample);
}

TEST(Iou, WorkedExample) {
  const std::vector<ingest::Detection> dets{det(rect(0, 0, 60, 10)), det(rect(45, 0, 100, 10)),
                                            det(rect(0, 50, 20, 60))};
  const auto s = evaluate_sample(two_words(), dets, proto(ProtocolKind::LocalizationIou));
  ASSERT_EQ(s.matches.size(), 1u);
  EXPECT_EQ(s.matches[0].det, std::vector<std::size_t>{0});
  EXPECT_DOUBLE_EQ(s.matches[0].value, 0.6);
  EXPECT_DOUBLE_EQ(s.precision, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.hmean, 0.4);
  EXPECT_EQ(s.unmatched_det, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.unmatched_gt, std::vector<std::string>{"B"});
}

TEST(Iou, ThresholdIsInclusive) {
  // IoU exactly 0.5: (0,0)-(100,10) vs (0,0)-(50,10).
  const GtSample gt{"i", {gt_word("A", rect(0, 0, 100, 10))}};
  const auto s = evaluate_sample(gt, {det(rect(0, 0, 50, 10))}, proto(ProtocolKind::LocalizationIou));
  EXPECT_EQ(s.matches.size(), 1u);
}

TEST(Iou, EmptySampleIsPerfectButAggregateIsEmpty) {
  const GtSample gt{"i", {}};
  const auto s = evaluate_sample(gt, {}, proto(ProtocolKind::LocalizationIou));
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.recall, 1.0);
  const auto o = aggregate({s}, proto(ProtocolKind::LocalizationIou));
  EXPECT_TRUE(o.empty);
  EXPECT_EQ(o.hmean, 0.0);
}

TEST(DetEval, WorkedExampleSplit) {
  const std::vector<ingest::Detection> dets{det(rect(0, 0, 60, 10)), det(rect(45, 0, 100, 10)),
                                            det(rect(0, 50, 20, 60))};
  const auto s = evaluate_sample(two_words(), dets, proto(ProtocolKind::LocalizationDetEval));
  ASSERT_EQ(s.matches.size(), 1u);
  EXPECT_EQ(s.matches[0].kind, "one_to_many");
  EXPECT_DOUBLE_EQ(s.matches[0].gt_credit, 0.8);
  EXPECT_NEAR(s.precision, 1.6 / 3.0, 1e-12);
  EXPECT_NEAR(s.recall, 0.4, 1e-12);
}

TEST(DetEval, OneToOneAndMerge) {
  // Two GTs covered by one merged detection.
  // Each GT alone covers under tp of the detection, together they pass.
  const GtSample gt{"i", {gt_word("A", rect(0, 0, 30, 10)), gt_word("B", rect(40, 0, 70, 10)),
                          gt_word("C", rect(0, 50, 40, 60))}};
  const std::vector<ingest::Detection> dets{det(rect(0, 0, 80, 10)), det(rect(1, 50, 40, 60))};
  const auto s = evaluate_sample(gt, dets, proto(ProtocolKind::LocalizationDetEval));
  ASSERT_EQ(s.matches.size(), 2u);
  EXPECT_EQ(s.matches[0].kind, "one_to_one");
  EXPECT_EQ(s.matches[1].kind, "many_to_one");
  EXPECT_EQ(s.matches[1].gt, (std::vector<std::string>{"A", "B"}));
  EXPECT_NEAR(s.recall, (1.0 + 0.8 + 0.8) / 3.0, 1e-12);
  EXPECT_NEAR(s.precision, (1.0 + 0.8) / 2.0, 1e-12);
}

TEST(DetEval, ThresholdsAreInclusive) {
  // Area recall exactly 0.8, precision 1.
  const GtSample gt{"i", {gt_word("A", rect(0, 0, 100, 10))}};
  const auto s = evaluate_sample(gt, {det(rect(0, 0, 80, 10))}, proto(ProtocolKind::LocalizationDetEval));
  EXPECT_EQ(s.matches.size(), 1u);
}

TEST(EndToEnd, TextMustMatch) {
  const std::vector<ingest::Detection> dets{det(rect(0, 0, 100, 10), "hello"), det(rect(0, 50, 100, 60), "Word")};
  const auto s = evaluate_sample(two_words(), dets, proto(ProtocolKind::EndToEnd));
  ASSERT_EQ(s.matches.size(), 1u);
  EXPECT_EQ(s.matches[0].gt, std::vector<std::string>{"A"});
  ASSERT_EQ(s.text_mismatches.size(), 1u);
  EXPECT_DOUBLE_EQ(s.text_mismatches[0].nes, 0.8);
  EXPECT_DOUBLE_EQ(s.hmean, 0.5);
  auto cs = proto(ProtocolKind::EndToEnd);
  cs.params.case_sensitive = true;
  EXPECT_TRUE(evaluate_sample(two_words(), dets, cs).matches.empty());
  EXPECT_THROW(evaluate_sample(two_words(), {det(rect(0, 0, 1, 1))}, proto(ProtocolKind::EndToEnd)), Error);
}

TEST(Recognition, AlignedByPosition) {
  GtSample gt = two_words();
  gt.words.push_back(gt_word("C", rect(0, 80, 10, 90), "", false));
  std::vector<ingest::Detection> dets(4);
  dets[0].transcription = "hello";
  dets[1].transcription = "";
  dets[2].transcription = "dc";
  dets[3].transcription = "extra";
  const auto s = evaluate_sample(gt, dets, proto(ProtocolKind::Recognition));
  EXPECT_EQ(s.pairs, 2u);
  EXPECT_EQ(s.correct, 1u);
  EXPECT_EQ(s.ignored_det, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.num_det_considered, 2u);
  const auto o = aggregate({s}, proto(ProtocolKind::Recognition));
  EXPECT_DOUBLE_EQ(o.word_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(o.mean_nes, 0.5);
  EXPECT_NE(overall_json(o, proto(ProtocolKind::Recognition), "x").find("\"mean_nes\": 0.500000"),
            std::string::npos);
}

TEST(Aggregate, IsMicroAveraged) {
  const auto p = proto(ProtocolKind::LocalizationIou);
  const GtSample a{"a", {gt_word("A", rect(0, 0, 10, 10))}};
  GtSample b{"b", {}};
  for (int i = 0; i < 3; ++i) b.words.push_back(gt_word("B" + std::to_string(i), rect(20 * i, 0, 20 * i + 10, 10)));
  const auto sa = evaluate_sample(a, {det(rect(0, 0, 10, 10))}, p);
  const auto sb = evaluate_sample(b, {det(rect(0, 0, 10, 10)), det(rect(50, 50, 60, 60))}, p);
  const auto o = aggregate({sa, sb}, p);
  EXPECT_DOUBLE_EQ(o.recall, 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(o.precision, 2.0 / 3.0);
  EXPECT_EQ(o.num_images, 2u);
}

TEST(DontCare, OverlapBoundaryIsExclusive) {
  const std::vector<geometry::Quad> dc{rect(5, 0, 20, 10)};
  auto f = filter_dontcare({rect(0, 0, 10, 10)}, dc);
  EXPECT_EQ(f.considered.size(), 1u);
  f = filter_dontcare({rect(0.1, 0, 10.1, 10)}, dc);
  EXPECT_EQ(f.ignored.size(), 1u);
}

TEST(DontCare, IgnoredDetsDoNotCount) {
  GtSample gt = two_words();
  gt.words.push_back(gt_word("X", rect(0, 100, 50, 120), "", false));
  const auto s = evaluate_sample(gt, {det(rect(0, 0, 100, 10)), det(rect(1, 101, 49, 119))},
                                 proto(ProtocolKind::LocalizationIou));
  EXPECT_EQ(s.ignored_det, std::vector<std::size_t>{1});
  EXPECT_EQ(s.num_det_considered, 1u);
  EXPECT_EQ(s.num_gt_care, 2u);
  EXPECT_DOUBLE_EQ(s.precision, 1.0);
}

TEST(GroundTruth, RrcTextForm) {
  const auto zip = test::make_zip({{"gt_img1.txt", "0,0,10,0,10,5,0,5,Hi, there\n20,0,30,0,30,5,20,5,###\n"}});
  const auto gt = load_gt(zip);
  ASSERT_EQ(gt.size(), 1u);
  const auto& s = gt.at("img1");
  ASSERT_EQ(s.words.size(), 2u);
  EXPECT_EQ(s.words[0].transcription, "Hi, there");
  EXPECT_FALSE(s.words[1].care);
  EXPECT_THROW(load_gt(test::make_zip({{"notes.txt", ""}})), Error);
  EXPECT_THROW(gt_from_rrc_text("x", "0,0,1\n"), Error);
}

TEST(GroundTruth, XmlFormUsesWordNodes) {
  const auto corpus = test::make_corpus(4, 3);
  const auto ids = test::Corpus::default_ids(3);
  const auto gt = load_gt(corpus.gt_zip(ids));
  ASSERT_EQ(gt.size(), 3u);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::size_t words = 0;
    annotation::for_each_node(corpus.trees[i], [&](const annotation::Node& n) {
      words += n.granularity == annotation::Granularity::Word;
    });
    EXPECT_EQ(gt.at(ids[i]).words.size(), words);
  }
}

TEST(Files, DeterministicAndSnapshotted) {
  const auto corpus = test::make_corpus(5, 4);
  const auto ids = test::Corpus::default_ids(4);
  const auto gt = corpus.gt_zip(ids);
  const auto sub = corpus.submission_zip(ids, false, 2);
  for (auto kind : {ProtocolKind::LocalizationIou, ProtocolKind::LocalizationDetEval, ProtocolKind::EndToEnd}) {
    const ingest::FormatSpec fmt{"rrc", ingest::Grammar::QuadConfidenceTranscription};
    const auto a = evaluate_archives(gt, sub, proto(kind), fmt);
    const auto b = evaluate_archives(gt, sub, proto(kind), fmt);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.size(), 1u + ids.size());
    EXPECT_NE(a.at("overall.json").find(sha256_hex(gt)), std::string::npos);
  }
  auto no_samples = proto(ProtocolKind::LocalizationIou);
  no_samples.per_sample = false;
  EXPECT_EQ(evaluate_archives(gt, sub, no_samples, {"rrc", ingest::Grammar::QuadConfidenceTranscription}).size(), 1u);
}

TEST(Files, InvalidSubmissionCarriesReport) {
  const auto corpus = test::make_corpus(5, 2);
  const auto ids = test::Corpus::default_ids(2);
  try {
    evaluate_archives(corpus.gt_zip(ids), test::make_zip({{"res_" + ids[0] + ".txt", "1,2,3\n"}}),
                      proto(ProtocolKind::LocalizationIou), {"rrc", ingest::Grammar::Quad});
    FAIL();
  } catch (const InvalidSubmission& e) {
    ASSERT_EQ(e.report().errors.size(), 1u);
    EXPECT_EQ(e.report().errors[0].line, 1);
  }
}

TEST(Oracle, MetricsSmall) {
  const auto r = test::run_metric_oracle(150, 21);
  EXPECT_EQ(r.cardinality_mismatches, 0) << r.first_failure;
  EXPECT_EQ(r.credit_violations, 0) << r.first_failure;
  EXPECT_EQ(r.bound_violations, 0) << r.first_failure;
  EXPECT_GT(r.deteval_groups, 0);
  EXPECT_NEAR(r.example_p, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.example_r, 0.5, 1e-12);
  EXPECT_NEAR(r.example_h, 0.4, 1e-12);
}

TEST(Oracle, DontCareSmall) {
  const auto r = test::run_dontcare_metamorphic(80, 22);
  EXPECT_EQ(r.violations, 0) << r.first_failure;
  EXPECT_GT(r.injected, 0);
}
