#include "rrc/annotation.hpp"

#include <expat.h>

#include <charconv>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace rrc::annotation {

namespace {

constexpr std::string_view kGranularityNames[] = {"atom", "char", "word", "line", "block"};

int rank(Granularity g) { return static_cast<int>(g); }

bool has_control_chars(std::string_view s) {
  for (const char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x20 && c != '\t' && c != '\n' && c != '\r') return true;
  }
  return false;
}

void validate_nodes(const Tree& nodes, const Node* parent, const std::string& parent_path,
                    std::set<std::string>& seen) {
  for (const auto& n : nodes) {
    const std::string path = parent_path.empty() ? n.id : parent_path + "/" + n.id;
    if (!is_valid_node_id(n.id)) throw InvalidTree(path, "malformed node id");
    if (!seen.insert(n.id).second) throw InvalidTree(path, "duplicate node id");
    if (parent) {
      if (!n.id.starts_with(parent->id + "_")) {
        throw InvalidTree(path, "child id must be prefixed by its parent id");
      }
      if (rank(n.granularity) >= rank(parent->granularity)) {
        throw InvalidTree(path, fmt::format("{} cannot be nested in {}", to_string(n.granularity),
                                            to_string(parent->granularity)));
      }
    }
    if (n.care && n.granularity == Granularity::Word && n.transcription.empty()) {
      throw InvalidTree(path, "cared-for word needs a transcription");
    }
    if (has_control_chars(n.transcription)) throw InvalidTree(path, "control character in text");
    for (const auto& [k, v] : n.metadata) {
      if (k.empty() || has_control_chars(k) || has_control_chars(v)) {
        throw InvalidTree(path, "bad metadata entry");
      }
    }
    if (const auto* mask = std::get_if<MaskRef>(&n.region)) {
      if (mask->path.empty() || has_control_chars(mask->path)) {
        throw InvalidTree(path, "bad mask reference");
      }
    }
    validate_nodes(n.children, &n, path, seen);
  }
}

double round2(double v) { return std::round(v * 100.0) / 100.0 + 0.0; }

void quantize_nodes(Tree& nodes, const std::string& parent_path) {
  for (auto& n : nodes) {
    const std::string path = parent_path.empty() ? n.id : parent_path + "/" + n.id;
    if (const auto* q = n.quad()) {
      auto flat = q->flat();
      for (auto& v : flat) v = round2(v);
      try {
        n.region = geometry::canonicalize_quad(flat);
      } catch (const geometry::GeometryError& e) {
        throw InvalidTree(path, std::string("quad degenerates on the 0.01 px grid: ") + e.what());
      }
    }
    quantize_nodes(n.children, path);
  }
}

// ---- serialization --------------------------------------------------------

std::string escape_attr(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\t': out += "&#9;"; break;
      case '\n': out += "&#10;"; break;
      case '\r': out += "&#13;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string escape_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '\r': out += "&#13;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string points_attr(const geometry::Quad& q) {
  std::string out;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i) out.push_back(' ');
    out += format_coord(q[i].x);
    out.push_back(',');
    out += format_coord(q[i].y);
  }
  return out;
}

void write_nodes(std::string& out, const Tree& nodes, int depth) {
  for (const auto& n : nodes) {
    const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    out += pad;
    out += fmt::format("<node id=\"{}\" care=\"{}\" granularity=\"{}\"", escape_attr(n.id),
                       n.care ? "true" : "false", to_string(n.granularity));
    if (const auto* mask = std::get_if<MaskRef>(&n.region)) {
      out += fmt::format(" mask=\"{}\"", escape_attr(mask->path));
    } else {
      out += fmt::format(" points=\"{}\"", points_attr(std::get<geometry::Quad>(n.region)));
    }
    if (n.metadata.empty() && n.transcription.empty() && n.children.empty()) {
      out += "/>\n";
      continue;
    }
    out += ">\n";
    for (const auto& [k, v] : n.metadata) {
      out += fmt::format("{}  <meta key=\"{}\" value=\"{}\"/>\n", pad, escape_attr(k),
                         escape_attr(v));
    }
    if (!n.transcription.empty()) {
      out += fmt::format("{}  <text>{}</text>\n", pad, escape_text(n.transcription));
    }
    write_nodes(out, n.children, depth + 1);
    out += pad;
    out += "</node>\n";
  }
}

std::string document(std::string_view root_attrs, const Tree& tree) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<annotation";
  out += root_attrs;
  if (tree.empty()) {
    out += "/>\n";
    return out;
  }
  out += ">\n";
  write_nodes(out, tree, 1);
  out += "</annotation>\n";
  return out;
}

// ---- parsing ---------------------------------------------------------------

[[noreturn]] void bad_xml(const std::string& why) { throw Error("BadXml", "annotation XML: " + why); }

double parse_number(std::string_view s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    bad_xml(fmt::format("bad coordinate '{}'", s));
  }
  return v;
}

geometry::Quad parse_points(std::string_view s) {
  std::array<double, 8> vals{};
  std::size_t idx = 0;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t end = s.find_first_of(", ", pos);
    const std::string_view tok = s.substr(pos, end == std::string_view::npos ? s.npos : end - pos);
    if (idx >= 8) bad_xml("too many coordinates in points");
    vals[idx++] = parse_number(tok);
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  if (idx != 8) bad_xml("points needs 4 x,y pairs");
  try {
    return geometry::canonicalize_quad(vals);
  } catch (const geometry::GeometryError& e) {
    bad_xml(std::string("invalid quad: ") + e.what());
  }
}

struct ParseState {
  Version version;
  std::vector<Node*> stack;
  bool in_root = false;
  bool in_text = false;
  bool saw_root = false;
  std::string text;
  std::string error;
  XML_Parser parser = nullptr;

  void fail(std::string why) {
    if (error.empty()) error = std::move(why);
    XML_StopParser(parser, XML_FALSE);
  }
};

std::map<std::string, std::string> attr_map(const XML_Char** attrs) {
  std::map<std::string, std::string> m;
  for (int i = 0; attrs[i]; i += 2) m[attrs[i]] = attrs[i + 1];
  return m;
}

void on_start(void* ud, const XML_Char* name_c, const XML_Char** attrs_c) {
  auto& st = *static_cast<ParseState*>(ud);
  if (!st.error.empty()) return;
  const std::string_view name(name_c);
  auto attrs = attr_map(attrs_c);
  try {
    if (!st.in_root) {
      if (name != "annotation" || st.saw_root) return st.fail("root element must be <annotation>");
      st.in_root = st.saw_root = true;
      auto& v = st.version;
      for (const auto& [k, val] : attrs) {
        if (k == "image") v.image_id = val;
        else if (k == "author") v.author = val;
        else if (k == "timestamp") v.timestamp = val;
        else if (k == "note") v.note = val;
        else if (k == "revision") v.revision = static_cast<int>(parse_number(val));
        else return st.fail("unknown root attribute " + k);
      }
      return;
    }
    if (st.in_text) return st.fail("markup inside <text>");
    if (name == "node") {
      Node n;
      if (!attrs.contains("id") || !attrs.contains("granularity")) {
        return st.fail("node needs id and granularity");
      }
      n.id = attrs["id"];
      n.granularity = granularity_from_string(attrs["granularity"]);
      const auto& care = attrs["care"];
      if (care != "true" && care != "false") return st.fail("care must be true or false");
      n.care = care == "true";
      if (attrs.contains("points") == attrs.contains("mask")) {
        return st.fail("node needs exactly one of points or mask");
      }
      if (attrs.contains("points")) {
        n.region = parse_points(attrs["points"]);
      } else {
        n.region = MaskRef{attrs["mask"]};
      }
      for (const auto& [k, _] : attrs) {
        if (k != "id" && k != "care" && k != "granularity" && k != "points" && k != "mask") {
          return st.fail("unknown node attribute " + k);
        }
      }
      Tree& siblings = st.stack.empty() ? st.version.tree : st.stack.back()->children;
      siblings.push_back(std::move(n));
      st.stack.push_back(&siblings.back());
    } else if (name == "meta") {
      if (st.stack.empty()) return st.fail("<meta> outside node");
      if (attrs.size() != 2 || !attrs.contains("key") || !attrs.contains("value")) {
        return st.fail("meta needs key and value");
      }
      st.stack.back()->metadata[attrs["key"]] = attrs["value"];
    } else if (name == "text") {
      if (st.stack.empty()) return st.fail("<text> outside node");
      st.in_text = true;
      st.text.clear();
    } else {
      st.fail("unknown element " + std::string(name));
    }
  } catch (const std::exception& e) {
    st.fail(e.what());
  }
}

void on_end(void* ud, const XML_Char* name_c) {
  auto& st = *static_cast<ParseState*>(ud);
  if (!st.error.empty()) return;
  const std::string_view name(name_c);
  if (name == "text") {
    st.in_text = false;
    st.stack.back()->transcription = st.text;
  } else if (name == "node") {
    st.stack.pop_back();
  } else if (name == "annotation") {
    st.in_root = false;
  }
}

void on_chars(void* ud, const XML_Char* s, int len) {
  auto& st = *static_cast<ParseState*>(ud);
  if (!st.error.empty()) return;
  const std::string_view chunk(s, static_cast<std::size_t>(len));
  if (st.in_text) {
    st.text += chunk;
  } else if (chunk.find_first_not_of(" \t\r\n") != std::string_view::npos) {
    st.fail("stray character data");
  }
}

}  // namespace

std::string_view to_string(Granularity g) { return kGranularityNames[rank(g)]; }

Granularity granularity_from_string(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kGranularityNames[i] == s) return static_cast<Granularity>(i);
  }
  throw Error("BadGranularity", fmt::format("unknown granularity '{}'", s));
}

bool is_valid_node_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (const char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

void validate(const Tree& tree) {
  std::set<std::string> seen;
  validate_nodes(tree, nullptr, "", seen);
}

Tree quantize(Tree tree) {
  quantize_nodes(tree, "");
  return tree;
}

Node* find_node(Tree& tree, std::string_view id) {
  for (auto& n : tree) {
    if (n.id == id) return &n;
    if (auto* hit = find_node(n.children, id)) return hit;
  }
  return nullptr;
}

const Node* find_node(const Tree& tree, std::string_view id) {
  return find_node(const_cast<Tree&>(tree), id);
}

std::string format_coord(double v) {
  std::string s = fmt::format("{:.2f}", round2(v));
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  return s;
}

std::string to_xml(const Version& v) {
  std::string attrs = fmt::format(" author=\"{}\" image=\"{}\"", escape_attr(v.author),
                                  escape_attr(v.image_id));
  if (!v.note.empty()) attrs += fmt::format(" note=\"{}\"", escape_attr(v.note));
  attrs += fmt::format(" revision=\"{}\" timestamp=\"{}\"", v.revision, escape_attr(v.timestamp));
  return document(attrs, v.tree);
}

std::string tree_to_xml(std::string_view image_id, const Tree& tree) {
  return document(fmt::format(" image=\"{}\"", escape_attr(image_id)), tree);
}

Version from_xml(std::string_view xml) {
  ParseState st;
  XML_Parser parser = XML_ParserCreate("UTF-8");
  if (!parser) throw Error("IoError", "cannot create XML parser");
  st.parser = parser;
  XML_SetUserData(parser, &st);
  XML_SetElementHandler(parser, on_start, on_end);
  XML_SetCharacterDataHandler(parser, on_chars);
  const auto status = XML_Parse(parser, xml.data(), static_cast<int>(xml.size()), XML_TRUE);
  std::string expat_error;
  if (status == XML_STATUS_ERROR && st.error.empty()) {
    expat_error = fmt::format("{} at line {}", XML_ErrorString(XML_GetErrorCode(parser)),
                              XML_GetCurrentLineNumber(parser));
  }
  XML_ParserFree(parser);
  if (!st.error.empty()) bad_xml(st.error);
  if (!expat_error.empty()) bad_xml(expat_error);
  if (!st.saw_root) bad_xml("empty document");
  return std::move(st.version);
}

}  // namespace rrc::annotation

namespace rrc::annotation {

namespace {

nlohmann::json node_to_json(const Node& n) {
  nlohmann::json j{{"id", n.id},
                   {"granularity", to_string(n.granularity)},
                   {"care", n.care},
                   {"transcription", n.transcription}};
  if (const auto* q = n.quad()) {
    const auto f = q->flat();
    j["points"] = std::vector<double>(f.begin(), f.end());
  } else {
    j["mask"] = std::get<MaskRef>(n.region).path;
  }
  j["metadata"] = n.metadata;
  j["children"] = nlohmann::json::array();
  for (const auto& c : n.children) j["children"].push_back(node_to_json(c));
  return j;
}

Node node_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw InvalidTree(path, "node must be an object");
  Node n;
  try {
    n.id = j.at("id").get<std::string>();
    const std::string here = path.empty() ? n.id : path + "/" + n.id;
    n.granularity = granularity_from_string(j.value("granularity", std::string("word")));
    n.care = j.value("care", true);
    n.transcription = j.value("transcription", std::string());
    if (j.contains("points")) {
      n.region = geometry::canonicalize_quad(j.at("points").get<std::vector<double>>());
    } else if (j.contains("rect")) {
      const auto r = j.at("rect").get<std::vector<double>>();
      if (r.size() != 4) throw InvalidTree(here, "rect needs x0,y0,x1,y1");
      n.region = geometry::axis_rect(r[0], r[1], r[2], r[3]);
    } else if (j.contains("mask")) {
      n.region = MaskRef{j.at("mask").get<std::string>()};
    } else {
      throw InvalidTree(here, "node needs points, rect or mask");
    }
    if (j.contains("metadata")) n.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    if (j.contains("children")) {
      for (const auto& c : j.at("children")) n.children.push_back(node_from_json(c, here));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTree(path.empty() ? n.id : path, std::string("malformed node: ") + e.what());
  }
  return n;
}

}  // namespace

nlohmann::json tree_to_json(const Tree& tree) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& n : tree) out.push_back(node_to_json(n));
  return out;
}

Tree tree_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidTree("", "tree must be an array of nodes");
  Tree t;
  for (const auto& n : j) t.push_back(node_from_json(n, ""));
  return t;
}

}  // namespace rrc::annotation
