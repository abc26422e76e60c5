#include "rrc/taskdef.hpp"

#include <fmt/format.h>

#include "rrc/util/fs.hpp"
#include "rrc/util/hash.hpp"
#include "rrc/util/zip.hpp"

namespace rrc::taskdef {

namespace stdfs = std::filesystem;
using nlohmann::json;

const evalcore::Protocol& ResearchTask::protocol(std::string_view id) const {
  for (const auto& p : evaluations) {
    if (p.id == id) return p;
  }
  throw Error("UnknownProtocol", fmt::format("task '{}' has no protocol '{}'", task_id, id));
}

json to_json(const ResearchTask& t) {
  json gt;
  if (t.gt.internal) {
    gt = {{"collection", t.gt.collection}, {"subset", datastore::to_string(t.gt.subset)}};
  } else {
    gt = {{"external", t.gt.external_path}};
  }
  json evals = json::array();
  for (const auto& p : t.evaluations) evals.push_back(evalcore::to_json(p));
  return {{"challenge", t.challenge_id},
          {"id", t.task_id},
          {"title", t.title},
          {"gt_source", gt},
          {"input_format", ingest::to_json(t.input_format)},
          {"evaluations", evals},
          {"default_evaluation", t.default_evaluation},
          {"snapshot", t.snapshot}};
}

ResearchTask task_from_json(const json& j) {
  ResearchTask t;
  try {
    t.challenge_id = j.value("challenge", std::string());
    t.task_id = j.at("id").get<std::string>();
    t.title = j.value("title", t.task_id);
    const json& gt = j.at("gt_source");
    if (gt.contains("external")) {
      t.gt.internal = false;
      t.gt.external_path = gt.at("external").get<std::string>();
    } else {
      t.gt.collection = gt.at("collection").get<std::string>();
      t.gt.subset = datastore::subset_from_string(gt.at("subset").get<std::string>());
    }
    t.input_format = ingest::format_from_json(j.at("input_format"));
    for (const auto& e : j.at("evaluations")) t.evaluations.push_back(evalcore::protocol_from_json(e));
    t.default_evaluation = j.value("default_evaluation", 0);
    t.snapshot = j.value("snapshot", std::string());
  } catch (const json::exception& e) {
    throw Error("BadParams", fmt::format("malformed task descriptor: {}", e.what()));
  } catch (const Error& e) {
    if (e.code() == "BadParams") throw;
    throw Error("BadParams", e.what());
  }

  if (!datastore::is_valid_slug(t.task_id)) {
    throw Error("BadParams", fmt::format("task id '{}' must match [a-z0-9-]{{1,64}}", t.task_id));
  }
  if (t.evaluations.empty()) throw Error("BadParams", "a task needs at least one evaluation");
  if (t.default_evaluation < 0 || t.default_evaluation >= static_cast<int>(t.evaluations.size())) {
    throw Error("BadParams", "default_evaluation is out of range");
  }
  if (t.gt.internal && t.gt.subset == datastore::Subset::Unassigned) {
    throw Error("BadParams", "GT subset must be assigned");
  }
  for (std::size_t i = 0; i < t.evaluations.size(); ++i) {
    const auto& p = t.evaluations[i];
    for (std::size_t k = 0; k < i; ++k) {
      if (t.evaluations[k].id == p.id) {
        throw Error("BadParams", fmt::format("duplicate protocol id '{}'", p.id));
      }
    }
    const auto g = t.input_format.grammar;
    const bool geometric = p.kind != evalcore::ProtocolKind::Recognition;
    if (geometric && !ingest::has_quad(g)) {
      throw Error("BadParams", fmt::format("{}: protocol needs quads but grammar is {}", p.id,
                                           ingest::to_string(g)));
    }
    if (!geometric && g != ingest::Grammar::TranscriptionOnly) {
      throw Error("BadParams", fmt::format("{}: recognition needs the transcription-only grammar",
                                           p.id));
    }
    if (p.kind == evalcore::ProtocolKind::EndToEnd && !ingest::has_transcription(g)) {
      throw Error("BadParams", fmt::format("{}: end-to-end needs transcriptions", p.id));
    }
    if (p.per_sample && t.sequestered()) {
      throw Error("BadParams", fmt::format("{}: per_sample output would expose sequestered GT",
                                           p.id));
    }
  }
  return t;
}

stdfs::path TaskStore::task_dir(std::string_view tid) const {
  if (!datastore::is_valid_slug(tid)) {
    throw Error("UnknownTask", fmt::format("unknown task '{}'", tid));
  }
  return store_.root() / "tasks" / std::string(tid);
}

ResearchTask TaskStore::define_task(const ResearchTask& input) {
  ResearchTask task = task_from_json(to_json(input));
  task.snapshot.clear();
  if (task.gt.internal) {
    try {
      store_.load_collection(task.gt.collection);
    } catch (const Error&) {
      throw Error("UnresolvableGT", fmt::format("no collection '{}'", task.gt.collection));
    }
  } else {
    auto bytes = fs::try_read_file(task.gt.external_path);
    if (!bytes) {
      throw Error("UnresolvableGT", fmt::format("no GT archive at '{}'", task.gt.external_path));
    }
    try {
      evalcore::load_gt(*bytes);
    } catch (const Error& e) {
      throw Error("UnresolvableGT", fmt::format("GT archive is unreadable: {}", e.what()));
    }
  }
  const auto dir = task_dir(task.task_id);
  stdfs::create_directories(dir);
  if (!fs::write_file_if_absent(dir / "task.json", to_json(task).dump(2) + "\n")) {
    throw Error("DuplicateId", fmt::format("task '{}' already exists", task.task_id));
  }
  return task;
}

ResearchTask TaskStore::load(std::string_view tid) const {
  auto text = fs::try_read_file(task_dir(tid) / "task.json");
  if (!text) throw Error("UnknownTask", fmt::format("unknown task '{}'", tid));
  return task_from_json(json::parse(*text));
}

std::vector<ResearchTask> TaskStore::list() const {
  std::vector<ResearchTask> out;
  const auto dir = store_.root() / "tasks";
  if (!stdfs::exists(dir)) return out;
  for (const auto& name : fs::list_names(dir)) {
    if (stdfs::exists(dir / name / "task.json")) out.push_back(load(name));
  }
  return out;
}

std::string TaskStore::build_snapshot(const ResearchTask& task) const {
  std::vector<zip::Entry> entries;
  if (task.gt.internal) {
    for (const auto& rec : store_.list_images(task.gt.collection)) {
      if (rec.subset != task.gt.subset || store_.head_revision(task.gt.collection, rec.id) == 0) {
        continue;
      }
      const auto v = store_.load_annotation(task.gt.collection, rec.id);
      entries.push_back({rec.id + ".xml", annotation::tree_to_xml(rec.id, v.tree), false, 0644});
    }
  } else {
    auto bytes = fs::try_read_file(task.gt.external_path);
    if (!bytes) throw Error("UnresolvableGT", "external GT archive disappeared");
    evalcore::load_gt(*bytes);
    for (auto& e : zip::read_archive(*bytes)) {
      if (!e.is_directory) entries.push_back({e.name, std::move(e.data), false, 0644});
    }
  }
  return zip::write_sorted(std::move(entries), zip::Method::Stored);
}

stdfs::path TaskStore::snapshot_path(std::string_view hash) const {
  return store_.root() / "snapshots" / (std::string(hash) + ".zip");
}

GtSnapshot TaskStore::freeze_gt(std::string_view tid) {
  const auto dir = task_dir(tid);
  fs::FileLock lock(dir / "task.lock");
  ResearchTask task = load(tid);
  const std::string bytes = build_snapshot(task);
  GtSnapshot snap{sha256_hex(bytes), {}};
  for (const auto& [id, _] : evalcore::load_gt(bytes)) snap.image_ids.push_back(id);

  stdfs::create_directories(store_.root() / "snapshots");
  fs::write_file_if_absent(snapshot_path(snap.hash), bytes);
  if (task.snapshot != snap.hash) {
    task.snapshot = snap.hash;
    fs::write_file_atomic(dir / "task.json", to_json(task).dump(2) + "\n");
  }
  return snap;
}

std::string TaskStore::snapshot_bytes(std::string_view hash) const {
  if (hash.size() != 64 || hash.find_first_not_of("0123456789abcdef") != std::string_view::npos) {
    throw Error("UnknownSnapshot", fmt::format("bad snapshot id '{}'", hash));
  }
  auto bytes = fs::try_read_file(snapshot_path(hash));
  if (!bytes) throw Error("UnknownSnapshot", fmt::format("no snapshot '{}'", hash));
  return *bytes;
}

std::string TaskStore::export_bundle(std::string_view tid, std::string_view protocol_id,
                                     const stdfs::path& executable) const {
  ResearchTask task = load(tid);
  if (task.sequestered()) {
    throw Error("SequesteredLeak", "bundles can only be built from public subsets");
  }
  if (task.snapshot.empty()) throw Error("NotFrozen", "freeze the task's GT first");
  const evalcore::Protocol protocol =
      protocol_id.empty() ? task.evaluations.at(task.default_evaluation) : task.protocol(protocol_id);
  task.evaluations = {protocol};
  task.default_evaluation = 0;
  task.gt = GtSource{false, {}, datastore::Subset::PublicTest, "gt/snapshot.zip"};

  zip::Writer w(zip::Method::Deflate);
  w.add("bin/rrc", fs::read_file(executable), 0755);
  w.add("gt/snapshot.zip", snapshot_bytes(task.snapshot));
  w.add("serve",
        "#!/bin/sh\n"
        "here=$(cd \"$(dirname \"$0\")\" && pwd)\n"
        "exec \"$here/bin/rrc\" serve --bundle \"$here\" \"$@\"\n",
        0755);
  w.add("task.json", to_json(task).dump(2) + "\n");
  w.add("ui/index.html", bundle_index_html());
  return w.finish();
}

std::string_view bundle_index_html() {
  return R"html(<!doctype html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>Offline evaluation</title>
<style>
body { font: 14px sans-serif; margin: 2em; max-width: 60em; }
pre { background: #f4f4f4; padding: 1em; overflow: auto; }
</style>
</head>
<body>
<h1 id="title">Offline evaluation</h1>
<form id="f">
  <input type="file" id="archive" accept=".zip">
  <button>Evaluate</button>
</form>
<pre id="out"></pre>
<script>
fetch('/api/task').then(r => r.json()).then(t => {
  document.getElementById('title').textContent = t.title;
});
document.getElementById('f').onsubmit = async (e) => {
  e.preventDefault();
  const file = document.getElementById('archive').files[0];
  if (!file) return;
  const r = await fetch('/api/evaluate', {method: 'POST', body: file,
                                          headers: {'Content-Type': 'application/zip'}});
  document.getElementById('out').textContent = await r.text();
};
</script>
</body>
</html>
)html";
}

}  // namespace rrc::taskdef
