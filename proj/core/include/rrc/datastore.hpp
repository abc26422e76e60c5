#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/annotation.hpp"
#include "rrc/util/time.hpp"

/// File-backed store for collections, images, versioned annotation trees,
/// masks, subset assignment and the per-collection audit log.
///
/// Layout under the store root:
///
///     collections/<cid>/collection.json
///     collections/<cid>/images/<iid>.<ext>      original upload
///     collections/<cid>/images/<iid>.json       ImageRecord
///     collections/<cid>/gt/<iid>/v<NNNNN>.xml   one file per revision
///     collections/<cid>/gt/<iid>/head           head pointer (hint)
///     collections/<cid>/masks/<iid>/<node>.png
///     collections/<cid>/audit.log               JSON lines
///
/// Revision files are created with link-if-absent, so two writers racing on
/// the same head cannot both succeed. The head file is only a hint: the head
/// is the last revision in the gap-free chain starting at the hint.
namespace rrc::datastore {

enum class Role { Contributor, Owner, Admin };
enum class Subset { Unassigned, Training, Validation, PublicTest, SequesteredTest };

std::string_view to_string(Role r);
Role role_from_string(std::string_view s);
std::string_view to_string(Subset s);
/// Throws Error("UnknownSubset") for anything but the five subset names.
Subset subset_from_string(std::string_view s);

struct Member {
  std::string user;
  Role role;
};

struct Collection {
  std::string id;
  std::string title;
  std::string created_at;
  std::vector<Member> members;

  std::optional<Role> role_of(std::string_view user) const;
};

struct Comment {
  std::string author;
  std::string timestamp;
  std::string text;
};

struct ImageRecord {
  std::string id;
  std::string filename;
  std::string stored_name;
  std::string checksum;
  int width = 0;
  int height = 0;
  Subset subset = Subset::Unassigned;
  std::optional<int> quality_rating;
  std::vector<Comment> comments;
};

struct ImportResult {
  ImageRecord record;
  /// Set when identical bytes were already stored; `record` is the original.
  std::optional<std::string> duplicate_of;
};

nlohmann::json to_json(const ImageRecord& r);
ImageRecord image_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Collection& c);

/// [a-z0-9-]{1,64}
bool is_valid_slug(std::string_view id);

class Store {
 public:
  explicit Store(std::filesystem::path root, Clock clock = system_clock());

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path collection_dir(std::string_view cid) const;
  TimePoint now() const { return clock_(); }

  // Collections --------------------------------------------------------------
  Collection create_collection(std::string_view id, std::string_view title,
                               std::string_view creator);
  Collection load_collection(std::string_view id) const;
  std::vector<std::string> list_collections() const;
  /// Adds or changes a member. Actor must be admin; the last admin cannot be
  /// demoted.
  Collection set_member(std::string_view cid, std::string_view actor, std::string_view user,
                        Role role);
  /// Throws Error("Forbidden") unless `actor` holds one of `allowed`.
  Role require_role(std::string_view cid, std::string_view actor,
                    std::initializer_list<Role> allowed) const;

  // Images -------------------------------------------------------------------
  ImportResult import_image(std::string_view cid, std::string_view bytes,
                            std::string_view filename, std::string_view actor);
  ImageRecord load_image(std::string_view cid, std::string_view iid) const;
  bool has_image(std::string_view cid, std::string_view iid) const;
  std::vector<ImageRecord> list_images(std::string_view cid) const;
  std::string image_bytes(std::string_view cid, std::string_view iid) const;
  /// Locked read-modify-write of an image record.
  ImageRecord update_image(std::string_view cid, std::string_view iid,
                           const std::function<void(ImageRecord&)>& fn);
  int assign_subset(std::string_view cid, const std::vector<std::string>& image_ids,
                    Subset subset, std::string_view actor);

  // Annotations --------------------------------------------------------------
  /// 0 when the image has no saved revision.
  int head_revision(std::string_view cid, std::string_view iid) const;
  /// Compare-and-set save. Throws Error("StaleHead") when `expected_head`
  /// is not the current head and InvalidTree when the tree is malformed.
  annotation::Version save_annotation(std::string_view cid, std::string_view iid,
                                      annotation::Tree tree, std::string_view author,
                                      int expected_head, std::string_view note = {});
  /// Head when `revision` is empty. Throws Error("NoSuchRevision").
  annotation::Version load_annotation(std::string_view cid, std::string_view iid,
                                      std::optional<int> revision = std::nullopt) const;
  std::string load_annotation_xml(std::string_view cid, std::string_view iid,
                                  std::optional<int> revision = std::nullopt) const;

  /// Stores a label image for `node_id`; dimensions must equal the image's.
  /// Returns the MaskRef path to put in the tree.
  std::string save_mask(std::string_view cid, std::string_view iid, std::string_view node_id,
                        std::string_view png_bytes);

  // Audit --------------------------------------------------------------------
  void audit(std::string_view cid, std::string_view actor, std::string_view action,
             std::string_view target, const nlohmann::json& detail) const;
  std::vector<nlohmann::json> read_audit(std::string_view cid) const;

 private:
  std::filesystem::path image_record_path(std::string_view cid, std::string_view iid) const;
  std::filesystem::path gt_dir(std::string_view cid, std::string_view iid) const;
  void check_masks(std::string_view cid, std::string_view iid, const annotation::Tree& tree) const;

  std::filesystem::path root_;
  Clock clock_;
};

}  // namespace rrc::datastore
