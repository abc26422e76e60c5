#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/error.hpp"
#include "rrc/geometry.hpp"

/// Hierarchical per-image annotation trees and their canonical XML form.
namespace rrc::annotation {

enum class Granularity { Atom, Char, Word, Line, Block };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

/// Pixel-level region stored as a label image next to the tree.
struct MaskRef {
  std::string path;
  friend bool operator==(const MaskRef&, const MaskRef&) = default;
};

using Region = std::variant<MaskRef, geometry::Quad>;

struct Node {
  std::string id;
  Granularity granularity = Granularity::Word;
  Region region;
  std::string transcription;
  bool care = true;
  std::map<std::string, std::string> metadata;
  std::vector<Node> children;

  const geometry::Quad* quad() const { return std::get_if<geometry::Quad>(&region); }

  friend bool operator==(const Node&, const Node&) = default;
};

using Tree = std::vector<Node>;

/// One stored revision of an image's annotation.
struct Version {
  std::string image_id;
  int revision = 0;
  std::string author;
  std::string timestamp;
  std::string note;
  Tree tree;

  friend bool operator==(const Version&, const Version&) = default;
};

/// Tree invariant violation; `path()` is the slash-joined id chain of the
/// first offending node.
class InvalidTree : public Error {
 public:
  InvalidTree(std::string path, const std::string& message)
      : Error("InvalidTree", message + " at " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Node ids double as file names: [A-Za-z0-9_-]{1,128}.
bool is_valid_node_id(std::string_view id);

/// Checks id grammar and uniqueness, parent-prefixed child ids, strictly
/// decreasing granularity, non-empty transcriptions on cared-for words and
/// XML-safe text. Throws InvalidTree on the first violation (pre-order).
void validate(const Tree& tree);

/// Rounds quad coordinates to the 0.01 px grid used by the canonical form
/// and re-canonicalises them. Throws InvalidTree when rounding degenerates
/// a quad.
Tree quantize(Tree tree);

/// Pre-order visit of every node.
template <typename Fn>
void for_each_node(const Tree& tree, Fn&& fn) {
  for (const auto& n : tree) {
    fn(n);
    for_each_node(n.children, fn);
  }
}

Node* find_node(Tree& tree, std::string_view id);
const Node* find_node(const Tree& tree, std::string_view id);

/// Canonical coordinate text: at most two fraction digits, no trailing zeros.
std::string format_coord(double v);

/// Canonical XML for a stored revision.
std::string to_xml(const Version& v);

/// Canonical XML for a bare tree (GT snapshots): only the image attribute.
std::string tree_to_xml(std::string_view image_id, const Tree& tree);

/// Parses either document flavour; missing revision fields stay default.
/// Throws rrc::Error("BadXml") on malformed input.
Version from_xml(std::string_view xml);

/// API form of a tree. Nodes carry `points` (8 numbers), `rect`
/// (x0,y0,x1,y1, axis aligned) or `mask`; output always uses `points`.
nlohmann::json tree_to_json(const Tree& tree);
/// Throws InvalidTree (structure) or GeometryError (bad corners).
Tree tree_from_json(const nlohmann::json& j);

}  // namespace rrc::annotation
