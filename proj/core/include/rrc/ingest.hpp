#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/geometry.hpp"

/// Result-file parsing and submission archive validation.
///
/// A result file holds one detection per line. Fields are comma separated;
/// when the grammar has a transcription it is always the last field and is
/// taken verbatim (it may contain commas and spaces).
namespace rrc::ingest {

enum class Grammar {
  Quad,
  QuadConfidence,
  QuadTranscription,
  QuadConfidenceTranscription,
  TranscriptionOnly,
};

std::string_view to_string(Grammar g);
/// "quad", "quad+confidence", ..., "transcription-only". Throws BadGrammar.
Grammar grammar_from_string(std::string_view s);

bool has_quad(Grammar g);
bool has_confidence(Grammar g);
bool has_transcription(Grammar g);

struct FormatSpec {
  std::string id = "rrc";
  Grammar grammar = Grammar::Quad;
};

nlohmann::json to_json(const FormatSpec& f);
FormatSpec format_from_json(const nlohmann::json& j);

struct Detection {
  std::optional<geometry::Quad> quad;
  std::optional<double> confidence;
  std::optional<std::string> transcription;
};

struct Issue {
  std::string file;
  int line = 0;  // 1-based; 0 for file- or archive-level issues
  std::string code;
  std::string message;
  std::string reason;  // InvalidQuad only: the geometry code
};

struct ValidationReport {
  bool ok = true;
  std::vector<Issue> errors;
  std::vector<Issue> warnings;
  std::map<std::string, std::size_t> per_sample_counts;
  std::size_t suppressed_errors = 0;  // errors beyond kMaxReportedErrors
};

inline constexpr std::size_t kMaxReportedErrors = 1000;

nlohmann::ordered_json to_json(const Issue& i);
nlohmann::ordered_json to_json(const ValidationReport& r);

/// Parses one line (no terminator). Throws rrc::Error with WrongFieldCount,
/// NonNumericCoordinate, NonNumericConfidence, ConfidenceOutOfRange or
/// InvalidQuad.
Detection parse_line(std::string_view line, Grammar grammar);

struct ParsedFile {
  std::vector<Detection> detections;
  std::vector<Issue> errors;
};

/// Parses a whole file. A leading UTF-8 BOM and trailing CRs are stripped.
/// Empty lines are skipped, except under transcription-only where each line
/// is one prediction aligned by position and only a final empty line after
/// the last terminator is dropped.
ParsedFile parse_result_file(std::string_view text, Grammar grammar, std::string_view file = {});

/// Inverse of parse_line. Coordinates are written with at most two decimals.
std::string serialize(const Detection& d, Grammar grammar);

std::string result_file_name(std::string_view image_id);

struct ParsedArchive {
  ValidationReport report;
  std::map<std::string, std::vector<Detection>> samples;  // every known id present
};

/// Reads a submission ZIP and parses every `res_<id>.txt`. Unknown ids and
/// stray entries are errors, missing ids are warnings. An unreadable archive
/// yields a single CorruptArchive error.
ParsedArchive parse_archive(std::string_view zip_bytes, const FormatSpec& format,
                            const std::set<std::string>& image_ids);

ValidationReport validate_archive(std::string_view zip_bytes, const FormatSpec& format,
                                  const std::set<std::string>& image_ids);

}  // namespace rrc::ingest
