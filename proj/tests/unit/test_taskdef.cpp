#include <gtest/gtest.h>

#include "rrc/taskdef.hpp"
#include "rrc/util/fs.hpp"
#include "rrc/util/hash.hpp"
#include "rrc/util/zip.hpp"
#include "support.hpp"

using namespace rrc;
using namespace rrc::taskdef;
using datastore::Subset;
using rrc::test::TempDir;

namespace {

std::string code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "ok";
}

evalcore::Protocol proto(std::string id, evalcore::ProtocolKind k, bool per_sample = true) {
  return {std::move(id), k, {}, per_sample};
}

struct Tasks : ::testing::Test {
  TempDir dir;
  datastore::Store store{dir.path() / "store"};
  TaskStore tasks{store};
  std::vector<std::string> ids;

  void SetUp() override {
    store.create_collection("c", "C", "boss");
    for (int i = 0; i < 3; ++i) {
      ids.push_back(store.import_image("c", test::tiny_png(i), "x.png", "boss").record.id);
      store.save_annotation("c", ids.back(), test::sample_tree(i), "boss", 0);
    }
    store.assign_subset("c", {ids[0], ids[1]}, Subset::PublicTest, "boss");
    store.assign_subset("c", {ids[2]}, Subset::SequesteredTest, "boss");
  }

  ResearchTask task(std::string id, Subset subset = Subset::PublicTest) {
    ResearchTask t;
    t.task_id = std::move(id);
    t.title = "Words";
    t.gt = GtSource{true, "c", subset, {}};
    t.input_format = {"rrc", ingest::Grammar::QuadConfidenceTranscription};
    t.evaluations = {proto("iou", evalcore::ProtocolKind::LocalizationIou, subset != Subset::SequesteredTest),
                     proto("e2e", evalcore::ProtocolKind::EndToEnd, false)};
    return t;
  }
};

}  // namespace

TEST_F(Tasks, DefineAndReload) {
  tasks.define_task(task("words"));
  const auto t = tasks.load("words");
  EXPECT_EQ(t.evaluations.size(), 2u);
  EXPECT_EQ(t.protocol("e2e").kind, evalcore::ProtocolKind::EndToEnd);
  EXPECT_EQ(code_of([&] { t.protocol("nope"); }), "UnknownProtocol");
  EXPECT_EQ(code_of([&] { tasks.define_task(task("words")); }), "DuplicateId");
  EXPECT_EQ(code_of([&] { tasks.load("other"); }), "UnknownTask");
  EXPECT_EQ(tasks.list().size(), 1u);
  EXPECT_EQ(to_json(task_from_json(to_json(t))), to_json(t));
}

TEST_F(Tasks, ValidationRejectsBadDescriptors) {
  auto t = task("bad");
  t.input_format.grammar = ingest::Grammar::TranscriptionOnly;
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");
  t = task("bad");
  t.input_format.grammar = ingest::Grammar::QuadConfidence;
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");  // e2e needs text
  t = task("bad");
  t.evaluations.push_back(proto("iou", evalcore::ProtocolKind::LocalizationDetEval));
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");
  t = task("bad");
  t.evaluations.push_back(proto("rec", evalcore::ProtocolKind::Recognition));
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");
  t = task("Bad Id");
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");
  t = task("bad");
  t.default_evaluation = 2;
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");
  t = task("bad", Subset::SequesteredTest);
  t.evaluations[0].per_sample = true;
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "BadParams");
  t = task("bad");
  t.gt.collection = "missing";
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "UnresolvableGT");
  t = task("bad");
  t.gt = GtSource{false, {}, Subset::PublicTest, (dir.path() / "none.zip").string()};
  EXPECT_EQ(code_of([&] { tasks.define_task(t); }), "UnresolvableGT");
  EXPECT_EQ(code_of([&] { task_from_json(nlohmann::json{{"id", "x"}}); }), "BadParams");
}

TEST_F(Tasks, FreezeIsContentAddressedAndIdempotent) {
  tasks.define_task(task("words"));
  const auto a = tasks.freeze_gt("words");
  EXPECT_EQ(a.image_ids.size(), 2u);
  EXPECT_EQ(sha256_hex(tasks.snapshot_bytes(a.hash)), a.hash);
  EXPECT_EQ(tasks.load("words").snapshot, a.hash);
  const auto b = tasks.freeze_gt("words");
  EXPECT_EQ(a.hash, b.hash);

  // New GT gives a new snapshot; the old one stays readable.
  store.save_annotation("c", ids[0], test::sample_tree(5), "boss", 1);
  const auto c = tasks.freeze_gt("words");
  EXPECT_NE(c.hash, a.hash);
  EXPECT_NO_THROW(tasks.snapshot_bytes(a.hash));
  EXPECT_EQ(code_of([&] { tasks.snapshot_bytes("../x"); }), "UnknownSnapshot");
  EXPECT_EQ(code_of([&] { tasks.snapshot_bytes(std::string(64, 'a')); }), "UnknownSnapshot");

  // Snapshot entries are exactly the canonical XML of the head revisions.
  for (const auto& e : zip::read_archive(tasks.snapshot_bytes(c.hash))) {
    const std::string iid = e.name.substr(0, e.name.size() - 4);
    EXPECT_EQ(e.data, annotation::tree_to_xml(iid, store.load_annotation("c", iid).tree));
  }
}

TEST_F(Tasks, ExternalGt) {
  const auto corpus = test::make_corpus(3, 2);
  const auto path = dir.path() / "gt.zip";
  test::write_file(path, corpus.gt_zip(test::Corpus::default_ids(2)));
  auto t = task("ext");
  t.gt = GtSource{false, {}, Subset::PublicTest, path.string()};
  tasks.define_task(t);
  const auto snap = tasks.freeze_gt("ext");
  EXPECT_EQ(snap.image_ids, test::Corpus::default_ids(2));
}

TEST_F(Tasks, BundleContents) {
  tasks.define_task(task("words"));
  const auto exe = dir.path() / "fake-rrc";
  test::write_file(exe, "#!/bin/sh\n");
  EXPECT_EQ(code_of([&] { tasks.export_bundle("words", "", exe); }), "NotFrozen");
  const auto snap = tasks.freeze_gt("words");
  EXPECT_EQ(code_of([&] { tasks.export_bundle("words", "nope", exe); }), "UnknownProtocol");
  const auto bundle = tasks.export_bundle("words", "e2e", exe);
  std::map<std::string, zip::Entry> entries;
  for (auto& e : zip::read_archive(bundle)) entries.emplace(e.name, e);
  for (const char* name : {"bin/rrc", "gt/snapshot.zip", "serve", "task.json", "ui/index.html"}) {
    EXPECT_TRUE(entries.contains(name)) << name;
  }
  EXPECT_EQ(entries.at("gt/snapshot.zip").data, tasks.snapshot_bytes(snap.hash));
  EXPECT_EQ(entries.at("serve").unix_mode & 0111, 0111u);
  EXPECT_EQ(entries.at("bin/rrc").unix_mode & 0111, 0111u);
  const auto t = task_from_json(nlohmann::json::parse(entries.at("task.json").data));
  ASSERT_EQ(t.evaluations.size(), 1u);
  EXPECT_EQ(t.evaluations[0].id, "e2e");
  EXPECT_FALSE(t.gt.internal);
}

TEST_F(Tasks, SequesteredNeverLeaves) {
  tasks.define_task(task("hidden", Subset::SequesteredTest));
  tasks.freeze_gt("hidden");
  EXPECT_EQ(code_of([&] { tasks.export_bundle("hidden", "", dir.path() / "x"); }), "SequesteredLeak");
}
