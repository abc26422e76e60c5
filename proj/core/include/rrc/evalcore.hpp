#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/geometry.hpp"
#include "rrc/ingest.hpp"

/// Scoring engines. Everything here is a pure function of its inputs, so any
/// two producers (CLI, worker, bundle server) emit byte-identical results.
namespace rrc::evalcore {

// ---- text ------------------------------------------------------------------

/// UTF-8 to code points; ill-formed sequences become U+FFFD.
std::u32string decode_utf8(std::string_view s);

/// Simple (1:1) Unicode case folding per code point. No normalisation.
std::u32string fold_case(std::u32string s);

std::size_t levenshtein(std::u32string_view a, std::u32string_view b);

/// 1 - levenshtein / max(|a|,|b|) over code points; 1 when both are empty.
double normalized_edit_similarity(std::string_view a, std::string_view b,
                                  bool case_sensitive = true);

bool texts_equal(std::string_view a, std::string_view b, bool case_sensitive);

struct RecognitionScore {
  double word_accuracy = 0.0;
  double mean_nes = 0.0;
};

/// Aligned (gt, prediction) pairs. An empty list scores zero.
RecognitionScore recognition_score(
    const std::vector<std::pair<std::string, std::string>>& pairs, bool case_sensitive);

// ---- protocols ---------------------------------------------------------------

enum class ProtocolKind { LocalizationIou, LocalizationDetEval, Recognition, EndToEnd };

std::string_view to_string(ProtocolKind k);
/// Accepts the long names and the CLI short forms iou, deteval, recognition, e2e.
ProtocolKind kind_from_string(std::string_view s);

struct Params {
  double iou_threshold = 0.5;
  double dontcare_overlap = 0.5;
  double tr = 0.8;
  double tp = 0.4;
  double scatter_penalty = 0.8;
  bool case_sensitive = false;
};

/// Only the keys meaningful for `kind`, in sorted order.
nlohmann::json params_to_json(ProtocolKind kind, const Params& p);
/// Validates against the kind's schema. Throws BadParams naming the key.
Params params_from_json(ProtocolKind kind, const nlohmann::json& j);

/// Line grammar a plain `rrc eval` assumes for each kind.
ingest::Grammar default_grammar(ProtocolKind kind);

struct Protocol {
  std::string id;
  ProtocolKind kind = ProtocolKind::LocalizationIou;
  Params params;
  bool per_sample = true;
};

nlohmann::json to_json(const Protocol& p);
Protocol protocol_from_json(const nlohmann::json& j);

// ---- ground truth ------------------------------------------------------------

struct GtWord {
  std::string id;
  std::optional<geometry::Quad> quad;
  std::string transcription;
  bool care = true;
};

struct GtSample {
  std::string image_id;
  std::vector<GtWord> words;  // document order
};

using GtSet = std::map<std::string, GtSample>;

/// Reads a GT archive. Entries are either canonical annotation XML
/// (`<image-id>.xml`, word nodes only) or RRC text files (`gt_<image-id>.txt`,
/// `x1,y1,...,x4,y4,transcription`, `###` marks don't care).
GtSet load_gt(std::string_view zip_bytes);

GtSample gt_from_rrc_text(std::string image_id, std::string_view text);

// ---- per-sample evaluation ---------------------------------------------------

struct Match {
  std::vector<std::string> gt;
  std::vector<std::size_t> det;
  std::string kind;  // one_to_one, one_to_many, many_to_one
  double value = 0.0;  // IoU; DetEval: area recall of the group
  double area_precision = 0.0;  // DetEval only
  double gt_credit = 1.0;
  double det_credit = 1.0;
};

struct TextMismatch {
  std::string gt;
  std::size_t det = 0;
  std::string gt_text;
  std::string det_text;
  double nes = 0.0;
};

struct SampleEval {
  std::string image_id;
  std::vector<Match> matches;
  std::vector<std::string> unmatched_gt;
  std::vector<std::size_t> unmatched_det;
  std::vector<std::size_t> ignored_det;
  std::vector<TextMismatch> text_mismatches;

  std::size_t num_gt_care = 0;
  std::size_t num_det_considered = 0;
  double gt_credit = 0.0;
  double det_credit = 0.0;
  double precision = 1.0;
  double recall = 1.0;
  double hmean = 1.0;

  // recognition only
  std::size_t pairs = 0;
  std::size_t correct = 0;
  double nes_sum = 0.0;
};

struct Filtered {
  std::vector<std::size_t> considered;
  std::vector<std::size_t> ignored;
};

/// A detection is ignored iff area(det ∩ D)/area(det) > overlap for some
/// don't-care region D.
Filtered filter_dontcare(const std::vector<geometry::Quad>& dets,
                         const std::vector<geometry::Quad>& dontcare, double overlap = 0.5);

double hmean(double precision, double recall);

SampleEval evaluate_sample(const GtSample& gt, const std::vector<ingest::Detection>& dets,
                           const Protocol& protocol);

struct OverallEval {
  std::string protocol_id;
  ProtocolKind kind = ProtocolKind::LocalizationIou;
  std::size_t num_images = 0;
  std::size_t num_gt_care = 0;
  std::size_t num_det_considered = 0;
  std::size_t num_det_ignored = 0;
  double precision = 0.0;
  double recall = 0.0;
  double hmean = 0.0;
  double word_accuracy = 0.0;
  double mean_nes = 0.0;
  bool empty = false;
};

/// Micro aggregation: credits and counts are summed before dividing.
OverallEval aggregate(const std::vector<SampleEval>& samples, const Protocol& protocol);

// ---- result files ------------------------------------------------------------

/// Relative path -> file bytes: `overall.json` and, when the protocol asks
/// for it, `per_sample/<image-id>.json`.
using ResultFiles = std::map<std::string, std::string>;

std::string overall_json(const OverallEval& o, const Protocol& protocol,
                         std::string_view gt_snapshot);
std::string sample_json(const SampleEval& s, const GtSample& gt,
                        const std::vector<ingest::Detection>& dets);

ResultFiles evaluate_to_files(const GtSet& gt,
                              const std::map<std::string, std::vector<ingest::Detection>>& dets,
                              const Protocol& protocol, std::string_view gt_snapshot);

/// Raised when a submission fails validation; `report()` is the full report.
class InvalidSubmission : public Error {
 public:
  explicit InvalidSubmission(ingest::ValidationReport r);
  const ingest::ValidationReport& report() const noexcept { return report_; }

 private:
  ingest::ValidationReport report_;
};

/// The one entry point shared by the CLI, the worker and the bundle server.
/// The GT snapshot id in overall.json is the SHA-256 of `gt_zip`.
ResultFiles evaluate_archives(std::string_view gt_zip, std::string_view submission_zip,
                              const Protocol& protocol, const ingest::FormatSpec& format);

/// Writes result files below `dir` (created as needed, atomic per file).
void write_result_files(const std::filesystem::path& dir, const ResultFiles& files);

}  // namespace rrc::evalcore
