#include "rrc/datastore.hpp"

#include <algorithm>
#include <charconv>

#include <fmt/format.h>

#include "rrc/util/fs.hpp"
#include "rrc/util/hash.hpp"
#include "rrc/util/image.hpp"

namespace rrc::datastore {

namespace stdfs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kRoleNames[] = {"contributor", "owner", "admin"};
constexpr std::string_view kSubsetNames[] = {"unassigned", "training", "validation",
                                             "public-test", "sequestered-test"};

std::string revision_file(int revision) { return fmt::format("v{:05d}.xml", revision); }


void write_json(const stdfs::path& p, const json& j) { fs::write_file_atomic(p, j.dump(2) + "\n"); }

Collection collection_from_json(const json& j) {
  Collection c;
  c.id = j.at("id");
  c.title = j.at("title");
  c.created_at = j.at("created_at");
  for (const auto& m : j.at("members")) {
    c.members.push_back({m.at("user"), role_from_string(m.at("role").get<std::string>())});
  }
  return c;
}

}  // namespace

std::string_view to_string(Role r) { return kRoleNames[static_cast<int>(r)]; }

Role role_from_string(std::string_view s) {
  for (int i = 0; i < 3; ++i) {
    if (kRoleNames[i] == s) return static_cast<Role>(i);
  }
  throw Error("UnknownRole", fmt::format("unknown collection role '{}'", s));
}

std::string_view to_string(Subset s) { return kSubsetNames[static_cast<int>(s)]; }

Subset subset_from_string(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kSubsetNames[i] == s) return static_cast<Subset>(i);
  }
  throw Error("UnknownSubset", fmt::format("unknown subset '{}'", s));
}

std::optional<Role> Collection::role_of(std::string_view user) const {
  for (const auto& m : members) {
    if (m.user == user) return m.role;
  }
  return std::nullopt;
}

bool is_valid_slug(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

json to_json(const ImageRecord& r) {
  json comments = json::array();
  for (const auto& c : r.comments) {
    comments.push_back({{"author", c.author}, {"timestamp", c.timestamp}, {"text", c.text}});
  }
  return {{"id", r.id},
          {"filename", r.filename},
          {"stored_name", r.stored_name},
          {"checksum", r.checksum},
          {"width", r.width},
          {"height", r.height},
          {"subset", to_string(r.subset)},
          {"quality_rating", r.quality_rating ? json(*r.quality_rating) : json(nullptr)},
          {"comments", comments}};
}

ImageRecord image_from_json(const json& j) {
  ImageRecord r;
  r.id = j.at("id");
  r.filename = j.at("filename");
  r.stored_name = j.at("stored_name");
  r.checksum = j.at("checksum");
  r.width = j.at("width");
  r.height = j.at("height");
  r.subset = subset_from_string(j.at("subset").get<std::string>());
  if (!j.at("quality_rating").is_null()) r.quality_rating = j.at("quality_rating").get<int>();
  for (const auto& c : j.at("comments")) r.comments.push_back({c.at("author"), c.at("timestamp"), c.at("text")});
  return r;
}

json to_json(const Collection& c) {
  json members = json::array();
  for (const auto& m : c.members) members.push_back({{"user", m.user}, {"role", to_string(m.role)}});
  return {{"id", c.id}, {"title", c.title}, {"created_at", c.created_at}, {"members", members}};
}

Store::Store(stdfs::path root, Clock clock) : root_(std::move(root)), clock_(std::move(clock)) {
  stdfs::create_directories(root_ / "collections");
}

stdfs::path Store::collection_dir(std::string_view cid) const {
  if (!is_valid_slug(cid)) throw Error("InvalidSlug", fmt::format("invalid collection id '{}'", cid));
  return root_ / "collections" / std::string(cid);
}

stdfs::path Store::image_record_path(std::string_view cid, std::string_view iid) const {
  if (!is_valid_slug(iid)) throw Error("UnknownImage", fmt::format("unknown image '{}'", iid));
  return collection_dir(cid) / "images" / (std::string(iid) + ".json");
}

stdfs::path Store::gt_dir(std::string_view cid, std::string_view iid) const {
  return collection_dir(cid) / "gt" / std::string(iid);
}

// ---- collections -------------------------------------------------------------

Collection Store::create_collection(std::string_view id, std::string_view title,
                                    std::string_view creator) {
  if (!is_valid_slug(id)) throw Error("InvalidSlug", fmt::format("invalid collection id '{}'", id));
  const auto target = collection_dir(id);
  if (stdfs::exists(target)) throw Error("DuplicateId", fmt::format("collection '{}' exists", id));

  Collection c{std::string(id), std::string(title), to_iso8601(now()),
               {{std::string(creator), Role::Admin}}};
  // Build the skeleton aside and publish it with one rename.
  const auto staging = fs::temp_sibling(target);
  for (const char* sub : {"images", "gt", "masks", "workflow", "verification"}) {
    stdfs::create_directories(staging / sub);
  }
  write_json(staging / "collection.json", to_json(c));
  if (!fs::rename_noreplace(staging, target)) {
    stdfs::remove_all(staging);
    throw Error("DuplicateId", fmt::format("collection '{}' exists", id));
  }
  audit(id, creator, "create_collection", id, {{"title", title}});
  return c;
}

Collection Store::load_collection(std::string_view id) const {
  const auto p = collection_dir(id) / "collection.json";
  auto text = fs::try_read_file(p);
  if (!text) throw Error("UnknownCollection", fmt::format("unknown collection '{}'", id));
  return collection_from_json(json::parse(*text));
}

std::vector<std::string> Store::list_collections() const {
  return fs::list_names(root_ / "collections");
}

Collection Store::set_member(std::string_view cid, std::string_view actor, std::string_view user,
                             Role role) {
  require_role(cid, actor, {Role::Admin});
  fs::FileLock lock(collection_dir(cid) / "collection.lock");
  Collection c = load_collection(cid);
  auto it = std::find_if(c.members.begin(), c.members.end(),
                         [&](const Member& m) { return m.user == user; });
  if (it == c.members.end()) {
    c.members.push_back({std::string(user), role});
  } else {
    if (it->role == Role::Admin && role != Role::Admin) {
      const auto admins = std::count_if(c.members.begin(), c.members.end(),
                                        [](const Member& m) { return m.role == Role::Admin; });
      if (admins <= 1) throw Error("LastAdmin", "a collection needs at least one admin");
    }
    it->role = role;
  }
  write_json(collection_dir(cid) / "collection.json", to_json(c));
  audit(cid, actor, "set_member", user, {{"role", to_string(role)}});
  return c;
}

Role Store::require_role(std::string_view cid, std::string_view actor,
                         std::initializer_list<Role> allowed) const {
  const auto role = load_collection(cid).role_of(actor);
  if (!role || std::find(allowed.begin(), allowed.end(), *role) == allowed.end()) {
    throw Error("Forbidden", fmt::format("'{}' lacks the required role on '{}'", actor, cid));
  }
  return *role;
}

// ---- images ------------------------------------------------------------------

ImportResult Store::import_image(std::string_view cid, std::string_view bytes,
                                 std::string_view filename, std::string_view actor) {
  require_role(cid, actor, {Role::Admin, Role::Owner});
  const auto raster = image::decode(bytes);
  const auto format = image::sniff(bytes);
  const std::string checksum = sha256_hex(bytes);
  const std::string iid = checksum.substr(0, 16);

  ImageRecord rec;
  rec.id = iid;
  rec.filename = std::string(filename);
  rec.stored_name = fmt::format("{}.{}", iid, image::extension(format));
  rec.checksum = checksum;
  rec.width = raster.width;
  rec.height = raster.height;

  const auto dir = collection_dir(cid) / "images";
  fs::write_file_if_absent(dir / rec.stored_name, bytes);
  if (!fs::write_file_if_absent(image_record_path(cid, iid), to_json(rec).dump(2) + "\n")) {
    return {load_image(cid, iid), iid};
  }
  audit(cid, actor, "import_image", iid, {{"filename", filename}, {"checksum", checksum}});
  return {rec, std::nullopt};
}

ImageRecord Store::load_image(std::string_view cid, std::string_view iid) const {
  auto text = fs::try_read_file(image_record_path(cid, iid));
  if (!text) throw Error("UnknownImage", fmt::format("unknown image '{}'", iid));
  return image_from_json(json::parse(*text));
}

bool Store::has_image(std::string_view cid, std::string_view iid) const {
  return is_valid_slug(iid) && stdfs::exists(image_record_path(cid, iid));
}

std::vector<ImageRecord> Store::list_images(std::string_view cid) const {
  std::vector<ImageRecord> out;
  for (const auto& name : fs::list_names(collection_dir(cid) / "images")) {
    if (name.ends_with(".json")) out.push_back(load_image(cid, name.substr(0, name.size() - 5)));
  }
  return out;
}

std::string Store::image_bytes(std::string_view cid, std::string_view iid) const {
  const auto rec = load_image(cid, iid);
  return fs::read_file(collection_dir(cid) / "images" / rec.stored_name);
}

ImageRecord Store::update_image(std::string_view cid, std::string_view iid,
                                const std::function<void(ImageRecord&)>& fn) {
  const auto path = image_record_path(cid, iid);
  fs::FileLock lock(path.parent_path() / (std::string(iid) + ".lock"));
  ImageRecord rec = load_image(cid, iid);
  fn(rec);
  write_json(path, to_json(rec));
  return rec;
}

int Store::assign_subset(std::string_view cid, const std::vector<std::string>& image_ids,
                         Subset subset, std::string_view actor) {
  require_role(cid, actor, {Role::Admin, Role::Owner});
  for (const auto& iid : image_ids) {
    if (!has_image(cid, iid)) throw Error("UnknownImage", fmt::format("unknown image '{}'", iid));
  }
  int updated = 0;
  for (const auto& iid : image_ids) {
    Subset before{};
    update_image(cid, iid, [&](ImageRecord& r) {
      before = r.subset;
      r.subset = subset;
    });
    audit(cid, actor, "assign_subset", iid,
          {{"from", to_string(before)}, {"to", to_string(subset)}});
    ++updated;
  }
  return updated;
}

// ---- annotations -------------------------------------------------------------

int Store::head_revision(std::string_view cid, std::string_view iid) const {
  const auto dir = gt_dir(cid, iid);
  int head = 0;
  if (auto hint = fs::try_read_file(dir / "head")) {
    const auto [p, ec] = std::from_chars(hint->data(), hint->data() + hint->size(), head);
    if (ec != std::errc()) head = 0;
  }
  // The hint may lag one step behind after an interrupted save, never ahead.
  while (head > 0 && !stdfs::exists(dir / revision_file(head))) --head;
  while (stdfs::exists(dir / revision_file(head + 1))) ++head;
  return head;
}

void Store::check_masks(std::string_view cid, std::string_view iid,
                        const annotation::Tree& tree) const {
  std::optional<ImageRecord> rec;
  annotation::for_each_node(tree, [&](const annotation::Node& n) {
    const auto* mask = std::get_if<annotation::MaskRef>(&n.region);
    if (!mask) return;
    const std::string expected = fmt::format("masks/{}/{}.png", iid, n.id);
    if (mask->path != expected) {
      throw annotation::InvalidTree(n.id, "mask reference must be " + expected);
    }
    auto bytes = fs::try_read_file(collection_dir(cid) / mask->path);
    if (!bytes) throw annotation::InvalidTree(n.id, "mask file is missing");
    if (!rec) rec = load_image(cid, iid);
    const auto raster = image::decode(*bytes);
    if (raster.width != rec->width || raster.height != rec->height) {
      throw annotation::InvalidTree(n.id, "mask dimensions differ from the image");
    }
  });
}

annotation::Version Store::save_annotation(std::string_view cid, std::string_view iid,
                                           annotation::Tree tree, std::string_view author,
                                           int expected_head, std::string_view note) {
  if (!has_image(cid, iid)) throw Error("UnknownImage", fmt::format("unknown image '{}'", iid));
  tree = annotation::quantize(std::move(tree));
  annotation::validate(tree);
  check_masks(cid, iid, tree);

  const auto dir = gt_dir(cid, iid);
  stdfs::create_directories(dir);
  const int head = head_revision(cid, iid);
  if (head != expected_head) {
    throw Error("StaleHead", fmt::format("head is {}, expected {}", head, expected_head));
  }
  annotation::Version v{std::string(iid), head + 1, std::string(author), to_iso8601(now()),
                        std::string(note), std::move(tree)};
  fs::fault_point("save.before_revision");
  if (!fs::write_file_if_absent(dir / revision_file(v.revision), annotation::to_xml(v))) {
    throw Error("StaleHead", fmt::format("revision {} was written concurrently", v.revision));
  }
  fs::fault_point("save.after_revision");
  fs::write_file_atomic(dir / "head", fmt::format("{}\n", v.revision));
  fs::fault_point("save.after_head");
  audit(cid, author, "save_annotation", iid, {{"revision", v.revision}});
  return v;
}

std::string Store::load_annotation_xml(std::string_view cid, std::string_view iid,
                                       std::optional<int> revision) const {
  if (!has_image(cid, iid)) throw Error("UnknownImage", fmt::format("unknown image '{}'", iid));
  const int head = head_revision(cid, iid);
  const int rev = revision.value_or(head);
  if (rev < 1 || rev > head) {
    throw Error("NoSuchRevision", fmt::format("revision {} does not exist (head {})", rev, head));
  }
  return fs::read_file(gt_dir(cid, iid) / revision_file(rev));
}

annotation::Version Store::load_annotation(std::string_view cid, std::string_view iid,
                                           std::optional<int> revision) const {
  return annotation::from_xml(load_annotation_xml(cid, iid, revision));
}

std::string Store::save_mask(std::string_view cid, std::string_view iid, std::string_view node_id,
                             std::string_view png_bytes) {
  if (!annotation::is_valid_node_id(node_id)) {
    throw Error("InvalidTree", fmt::format("malformed node id '{}'", node_id));
  }
  const auto rec = load_image(cid, iid);
  if (image::sniff(png_bytes) != image::Format::Png) {
    throw Error("UndecodableImage", "masks must be PNG");
  }
  const auto raster = image::decode(png_bytes);
  if (raster.width != rec.width || raster.height != rec.height) {
    throw Error("MaskSizeMismatch", "mask dimensions differ from the image");
  }
  const std::string rel = fmt::format("masks/{}/{}.png", iid, node_id);
  const auto path = collection_dir(cid) / rel;
  stdfs::create_directories(path.parent_path());
  fs::write_file_atomic(path, png_bytes);
  return rel;
}

// ---- audit -------------------------------------------------------------------

void Store::audit(std::string_view cid, std::string_view actor, std::string_view action,
                  std::string_view target, const json& detail) const {
  nlohmann::ordered_json line;
  line["ts"] = to_iso8601(now());
  line["actor"] = actor;
  line["action"] = action;
  line["target"] = target;
  line["detail"] = detail;
  fs::append_line(collection_dir(cid) / "audit.log", line.dump());
}

std::vector<json> Store::read_audit(std::string_view cid) const {
  std::vector<json> out;
  const auto text = fs::try_read_file(collection_dir(cid) / "audit.log").value_or("");
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) out.push_back(json::parse(text.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

}  // namespace rrc::datastore
