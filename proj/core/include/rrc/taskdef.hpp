#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/datastore.hpp"
#include "rrc/evalcore.hpp"
#include "rrc/ingest.hpp"

/// Research tasks: what GT a task is scored against, what submissions look
/// like and which evaluation protocols run on them.
///
///     tasks/<tid>/task.json
///     snapshots/<sha256>.zip      frozen GT, content addressed
namespace rrc::taskdef {

struct GtSource {
  /// Internal: a subset of a curated collection. External: a GT archive path.
  bool internal = true;
  std::string collection;
  datastore::Subset subset = datastore::Subset::PublicTest;
  std::string external_path;
};

struct ResearchTask {
  std::string challenge_id;
  std::string task_id;
  std::string title;
  GtSource gt;
  ingest::FormatSpec input_format;
  std::vector<evalcore::Protocol> evaluations;
  int default_evaluation = 0;
  /// Hash of the current frozen GT; empty until freeze_gt runs.
  std::string snapshot;

  const evalcore::Protocol& protocol(std::string_view id) const;  // throws UnknownProtocol
  bool sequestered() const {
    return gt.internal && gt.subset == datastore::Subset::SequesteredTest;
  }
};

nlohmann::json to_json(const ResearchTask& t);
/// Validates everything but GT resolvability. Throws BadParams.
ResearchTask task_from_json(const nlohmann::json& j);

struct GtSnapshot {
  std::string hash;
  std::vector<std::string> image_ids;
};

class TaskStore {
 public:
  explicit TaskStore(datastore::Store& store) : store_(store) {}

  /// Persists a new task. Throws BadParams, UnresolvableGT, DuplicateId.
  ResearchTask define_task(const ResearchTask& task);
  ResearchTask load(std::string_view tid) const;  // throws UnknownTask
  std::vector<ResearchTask> list() const;

  /// Copies the bound GT into an immutable, content-addressed archive and
  /// points the task at it. Freezing unchanged GT yields the same hash.
  GtSnapshot freeze_gt(std::string_view tid);
  std::string snapshot_bytes(std::string_view hash) const;  // throws UnknownSnapshot
  std::filesystem::path snapshot_path(std::string_view hash) const;

  /// Self-contained archive: task.json, gt/snapshot.zip, ui/, bin/rrc and a
  /// `serve` entry point. Throws SequesteredLeak, NotFrozen, UnknownProtocol.
  std::string export_bundle(std::string_view tid, std::string_view protocol_id,
                            const std::filesystem::path& executable) const;

 private:
  std::filesystem::path task_dir(std::string_view tid) const;
  std::string build_snapshot(const ResearchTask& task) const;

  datastore::Store& store_;
};

/// Minimal results viewer shipped in bundles.
std::string_view bundle_index_html();

}  // namespace rrc::taskdef
