#include "rrc/ingest.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>
#include <unicode/utf8.h>

#include "rrc/annotation.hpp"
#include "rrc/util/zip.hpp"

namespace rrc::ingest {

using nlohmann::ordered_json;

namespace {

constexpr std::string_view kGrammarNames[] = {
    "quad", "quad+confidence", "quad+transcription", "quad+confidence+transcription",
    "transcription-only"};

constexpr std::string_view kPrefix = "res_";
constexpr std::string_view kSuffix = ".txt";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool valid_utf8(std::string_view s) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const int32_t n = static_cast<int32_t>(s.size());
  for (int32_t i = 0; i < n;) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) return false;
  }
  return true;
}

std::string printable(std::string_view s) {
  std::string out;
  for (char c : s.substr(0, 40)) {
    out += (static_cast<unsigned char>(c) < 0x20) ? '?' : c;
  }
  if (s.size() > 40) out += "...";
  return out;
}

void add_error(ValidationReport& r, Issue issue) {
  r.ok = false;
  if (r.errors.size() < kMaxReportedErrors) {
    r.errors.push_back(std::move(issue));
  } else {
    ++r.suppressed_errors;
  }
}

}  // namespace

std::string_view to_string(Grammar g) { return kGrammarNames[static_cast<int>(g)]; }

Grammar grammar_from_string(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kGrammarNames[i] == s) return static_cast<Grammar>(i);
  }
  throw Error("BadGrammar", fmt::format("unknown line grammar '{}'", s));
}

bool has_quad(Grammar g) { return g != Grammar::TranscriptionOnly; }
bool has_confidence(Grammar g) {
  return g == Grammar::QuadConfidence || g == Grammar::QuadConfidenceTranscription;
}
bool has_transcription(Grammar g) {
  return g == Grammar::QuadTranscription || g == Grammar::QuadConfidenceTranscription ||
         g == Grammar::TranscriptionOnly;
}

nlohmann::json to_json(const FormatSpec& f) {
  return {{"id", f.id}, {"archive_rule", "res_<image-id>.txt"}, {"grammar", to_string(f.grammar)}};
}

FormatSpec format_from_json(const nlohmann::json& j) {
  return {j.value("id", std::string("rrc")),
          grammar_from_string(j.at("grammar").get<std::string>())};
}

ordered_json to_json(const Issue& i) {
  ordered_json j{{"file", i.file}, {"line", i.line}, {"code", i.code}, {"message", i.message}};
  if (!i.reason.empty()) j["reason"] = i.reason;
  return j;
}

ordered_json to_json(const ValidationReport& r) {
  ordered_json j;
  j["ok"] = r.ok;
  j["errors"] = ordered_json::array();
  for (const auto& e : r.errors) j["errors"].push_back(to_json(e));
  j["warnings"] = ordered_json::array();
  for (const auto& w : r.warnings) j["warnings"].push_back(to_json(w));
  j["per_sample_counts"] = ordered_json::object();
  for (const auto& [id, n] : r.per_sample_counts) j["per_sample_counts"][id] = n;
  if (r.suppressed_errors) j["suppressed_errors"] = r.suppressed_errors;
  return j;
}

Detection parse_line(std::string_view line, Grammar grammar) {
  Detection d;
  if (grammar == Grammar::TranscriptionOnly) {
    d.transcription = std::string(line);
    return d;
  }
  const std::size_t numeric = has_confidence(grammar) ? 9 : 8;
  const std::size_t want = numeric + (has_transcription(grammar) ? 1 : 0);

  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    if (has_transcription(grammar) && fields.size() == numeric) {
      fields.push_back(line.substr(pos));
      break;
    }
    const auto comma = line.find(',', pos);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  if (fields.size() != want) {
    throw Error("WrongFieldCount",
                fmt::format("got {} fields, want {}", fields.size(), want));
  }

  std::array<double, 8> xy{};
  for (std::size_t i = 0; i < 8; ++i) {
    const auto v = parse_number(fields[i]);
    if (!v) {
      throw Error("NonNumericCoordinate",
                  fmt::format("field {} ('{}') is not a number", i + 1, printable(fields[i])));
    }
    xy[i] = *v;
  }
  if (has_confidence(grammar)) {
    const auto c = parse_number(fields[8]);
    if (!c) {
      throw Error("NonNumericConfidence",
                  fmt::format("confidence '{}' is not a number", printable(fields[8])));
    }
    if (*c < 0.0 || *c > 1.0) {
      throw Error("ConfidenceOutOfRange", fmt::format("confidence {} is outside [0,1]", *c));
    }
    d.confidence = *c;
  }
  if (has_transcription(grammar)) d.transcription = std::string(fields.back());
  d.quad = geometry::canonicalize_quad(std::span<const double>(xy));
  return d;
}

ParsedFile parse_result_file(std::string_view text, Grammar grammar, std::string_view file) {
  ParsedFile out;
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  const bool keep_empty = grammar == Grammar::TranscriptionOnly;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.ends_with('\r')) line.remove_suffix(1);
    if (line.empty() && !keep_empty) continue;
    if (!valid_utf8(line)) {
      out.errors.push_back({std::string(file), line_no, "InvalidEncoding",
                            "line is not valid UTF-8", {}});
      continue;
    }
    try {
      out.detections.push_back(parse_line(line, grammar));
    } catch (const geometry::GeometryError& e) {
      out.errors.push_back({std::string(file), line_no, "InvalidQuad",
                            fmt::format("invalid quad ({}): {}", e.code(), e.what()), e.code()});
    } catch (const Error& e) {
      out.errors.push_back({std::string(file), line_no, e.code(), e.what(), {}});
    }
  }
  return out;
}

std::string serialize(const Detection& d, Grammar grammar) {
  std::string out;
  if (has_quad(grammar) && d.quad) {
    for (double v : d.quad->flat()) {
      if (!out.empty()) out += ',';
      out += annotation::format_coord(v);
    }
  }
  if (has_confidence(grammar)) out += fmt::format(",{}", d.confidence.value_or(0.0));
  if (has_transcription(grammar)) {
    if (has_quad(grammar)) out += ',';
    out += d.transcription.value_or("");
  }
  return out;
}

std::string result_file_name(std::string_view image_id) {
  return fmt::format("{}{}{}", kPrefix, image_id, kSuffix);
}

ParsedArchive parse_archive(std::string_view zip_bytes, const FormatSpec& format,
                            const std::set<std::string>& image_ids) {
  ParsedArchive out;
  auto& report = out.report;
  std::vector<zip::Entry> entries;
  try {
    entries = zip::read_archive(zip_bytes);
  } catch (const Error& e) {
    report.ok = false;
    report.errors.push_back({"", 0, "CorruptArchive", e.what(), {}});
    return out;
  }

  std::set<std::string> seen;
  for (const auto& entry : entries) {
    if (entry.is_directory) continue;
    const std::string_view name = entry.name;
    if (!name.starts_with(kPrefix) || !name.ends_with(kSuffix) ||
        name.size() <= kPrefix.size() + kSuffix.size() || name.find('/') != std::string_view::npos) {
      add_error(report, {entry.name, 0, "UnexpectedFile",
                         "entries must be named res_<image-id>.txt at the archive root", {}});
      continue;
    }
    const std::string id(name.substr(kPrefix.size(), name.size() - kPrefix.size() - kSuffix.size()));
    if (!image_ids.contains(id)) {
      add_error(report, {entry.name, 0, "UnknownSample",
                         fmt::format("no image '{}' in this task", id), {}});
      continue;
    }
    if (!seen.insert(id).second) {
      add_error(report, {entry.name, 0, "DuplicateEntry", "file appears twice in the archive", {}});
      continue;
    }
    auto parsed = parse_result_file(entry.data, format.grammar, entry.name);
    for (auto& e : parsed.errors) add_error(report, std::move(e));
    report.per_sample_counts[id] = parsed.detections.size();
    out.samples[id] = std::move(parsed.detections);
  }
  for (const auto& id : image_ids) {
    if (seen.contains(id)) continue;
    report.warnings.push_back({result_file_name(id), 0, "MissingSample",
                               "no result file; scored as zero detections", {}});
    report.per_sample_counts[id] = 0;
    out.samples[id] = {};
  }
  return out;
}

ValidationReport validate_archive(std::string_view zip_bytes, const FormatSpec& format,
                                  const std::set<std::string>& image_ids) {
  return parse_archive(zip_bytes, format, image_ids).report;
}

}  // namespace rrc::ingest
