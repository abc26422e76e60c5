#include "rrc/evalcore.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include "rrc/annotation.hpp"
#include "rrc/util/fs.hpp"
#include "rrc/util/hash.hpp"
#include "rrc/util/json_writer.hpp"
#include "rrc/util/zip.hpp"

namespace rrc::evalcore {

using geometry::Quad;
using ingest::Detection;

// ---- text ------------------------------------------------------------------

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const int32_t n = static_cast<int32_t>(s.size());
  for (int32_t i = 0; i < n;) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    out.push_back(c < 0 ? U'�' : static_cast<char32_t>(c));
  }
  return out;
}

std::u32string fold_case(std::u32string s) {
  for (auto& c : s) c = static_cast<char32_t>(u_foldCase(static_cast<UChar32>(c), U_FOLD_CASE_DEFAULT));
  return s;
}

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

namespace {

std::u32string prepare(std::string_view s, bool case_sensitive) {
  auto u = decode_utf8(s);
  return case_sensitive ? u : fold_case(std::move(u));
}

}  // namespace

double normalized_edit_similarity(std::string_view a, std::string_view b, bool case_sensitive) {
  const auto ua = prepare(a, case_sensitive);
  const auto ub = prepare(b, case_sensitive);
  const std::size_t longest = std::max(ua.size(), ub.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(ua, ub)) / static_cast<double>(longest);
}

bool texts_equal(std::string_view a, std::string_view b, bool case_sensitive) {
  if (case_sensitive) return a == b;
  return prepare(a, false) == prepare(b, false);
}

RecognitionScore recognition_score(const std::vector<std::pair<std::string, std::string>>& pairs,
                                   bool case_sensitive) {
  if (pairs.empty()) return {};
  std::size_t correct = 0;
  double nes = 0.0;
  for (const auto& [gt, pred] : pairs) {
    if (texts_equal(gt, pred, case_sensitive)) ++correct;
    nes += normalized_edit_similarity(gt, pred, case_sensitive);
  }
  const double n = static_cast<double>(pairs.size());
  return {static_cast<double>(correct) / n, nes / n};
}

// ---- protocols ---------------------------------------------------------------

namespace {

constexpr std::string_view kKindNames[] = {"localization_iou", "localization_deteval",
                                           "recognition", "end_to_end"};
constexpr std::string_view kShortNames[] = {"iou", "deteval", "recognition", "e2e"};

struct ParamSpec {
  const char* key;
  bool is_bool;
  double lo;       // exclusive unless lo_inclusive
  bool lo_inclusive;
  double hi;       // inclusive
};

// Sorted by key; this order is also the output order.
const std::vector<ParamSpec>& schema(ProtocolKind kind) {
  static const std::vector<ParamSpec> iou{{"dontcare_overlap", false, 0, true, 1},
                                          {"iou_threshold", false, 0, false, 1}};
  static const std::vector<ParamSpec> deteval{{"dontcare_overlap", false, 0, true, 1},
                                              {"scatter_penalty", false, 0, true, 1},
                                              {"tp", false, 0, false, 1},
                                              {"tr", false, 0, false, 1}};
  static const std::vector<ParamSpec> recognition{{"case_sensitive", true, 0, false, 0}};
  static const std::vector<ParamSpec> e2e{{"case_sensitive", true, 0, false, 0},
                                          {"dontcare_overlap", false, 0, true, 1},
                                          {"iou_threshold", false, 0, false, 1}};
  switch (kind) {
    case ProtocolKind::LocalizationIou: return iou;
    case ProtocolKind::LocalizationDetEval: return deteval;
    case ProtocolKind::Recognition: return recognition;
    case ProtocolKind::EndToEnd: return e2e;
  }
  return iou;
}

double* real_field(Params& p, std::string_view key) {
  if (key == "iou_threshold") return &p.iou_threshold;
  if (key == "dontcare_overlap") return &p.dontcare_overlap;
  if (key == "tr") return &p.tr;
  if (key == "tp") return &p.tp;
  if (key == "scatter_penalty") return &p.scatter_penalty;
  return nullptr;
}

}  // namespace

std::string_view to_string(ProtocolKind k) { return kKindNames[static_cast<int>(k)]; }

ProtocolKind kind_from_string(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (kKindNames[i] == s || kShortNames[i] == s) return static_cast<ProtocolKind>(i);
  }
  throw Error("BadParams", fmt::format("unknown protocol kind '{}'", s));
}

nlohmann::json params_to_json(ProtocolKind kind, const Params& p) {
  nlohmann::json j = nlohmann::json::object();
  Params copy = p;
  for (const auto& field : schema(kind)) {
    if (field.is_bool) {
      j[field.key] = p.case_sensitive;
    } else {
      j[field.key] = *real_field(copy, field.key);
    }
  }
  return j;
}

Params params_from_json(ProtocolKind kind, const nlohmann::json& j) {
  Params p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw Error("BadParams", "params must be an object");
  const auto& specs = schema(kind);
  for (const auto& [key, value] : j.items()) {
    const auto it = std::find_if(specs.begin(), specs.end(),
                                 [&](const ParamSpec& s) { return key == s.key; });
    if (it == specs.end()) {
      throw Error("BadParams", fmt::format("{}: unknown parameter '{}'", to_string(kind), key));
    }
    if (it->is_bool) {
      if (!value.is_boolean()) throw Error("BadParams", fmt::format("{} must be a boolean", key));
      p.case_sensitive = value.get<bool>();
      continue;
    }
    if (!value.is_number()) throw Error("BadParams", fmt::format("{} must be a number", key));
    const double v = value.get<double>();
    const bool lo_ok = it->lo_inclusive ? v >= it->lo : v > it->lo;
    if (!lo_ok || !(v <= it->hi)) {
      throw Error("BadParams", fmt::format("{} = {} is out of range", key, v));
    }
    *real_field(p, key) = v;
  }
  return p;
}

ingest::Grammar default_grammar(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::Recognition: return ingest::Grammar::TranscriptionOnly;
    case ProtocolKind::EndToEnd: return ingest::Grammar::QuadTranscription;
    default: return ingest::Grammar::Quad;
  }
}

nlohmann::json to_json(const Protocol& p) {
  return {{"id", p.id},
          {"kind", to_string(p.kind)},
          {"params", params_to_json(p.kind, p.params)},
          {"per_sample", p.per_sample}};
}

Protocol protocol_from_json(const nlohmann::json& j) {
  Protocol p;
  p.id = j.at("id").get<std::string>();
  if (p.id.empty() || !annotation::is_valid_node_id(p.id)) {
    throw Error("BadParams", fmt::format("bad protocol id '{}'", p.id));
  }
  p.kind = kind_from_string(j.at("kind").get<std::string>());
  p.params = params_from_json(p.kind, j.contains("params") ? j.at("params") : nlohmann::json());
  p.per_sample = j.value("per_sample", true);
  return p;
}

// ---- ground truth ------------------------------------------------------------

GtSample gt_from_rrc_text(std::string image_id, std::string_view text) {
  const auto parsed = ingest::parse_result_file(text, ingest::Grammar::QuadTranscription,
                                                "gt_" + image_id + ".txt");
  if (!parsed.errors.empty()) {
    const auto& e = parsed.errors.front();
    throw Error("BadGroundTruth", fmt::format("{}:{}: {}", e.file, e.line, e.message));
  }
  GtSample s{std::move(image_id), {}};
  for (std::size_t i = 0; i < parsed.detections.size(); ++i) {
    const auto& d = parsed.detections[i];
    const bool care = *d.transcription != "###";
    s.words.push_back({fmt::format("w{}", i + 1), d.quad, care ? *d.transcription : "", care});
  }
  return s;
}

GtSet load_gt(std::string_view zip_bytes) {
  GtSet out;
  for (const auto& e : zip::read_archive(zip_bytes)) {
    if (e.is_directory) continue;
    const std::string_view name = e.name;
    GtSample sample;
    if (name.ends_with(".xml") && name.find('/') == std::string_view::npos) {
      const auto v = annotation::from_xml(e.data);
      sample.image_id = v.image_id;
      annotation::for_each_node(v.tree, [&](const annotation::Node& n) {
        if (n.granularity != annotation::Granularity::Word) return;
        const Quad* q = n.quad();
        sample.words.push_back({n.id, q ? std::optional<Quad>(*q) : std::nullopt,
                                n.transcription, n.care});
      });
    } else if (name.starts_with("gt_") && name.ends_with(".txt") &&
               name.find('/') == std::string_view::npos) {
      sample = gt_from_rrc_text(std::string(name.substr(3, name.size() - 7)), e.data);
    } else {
      throw Error("BadGroundTruth", fmt::format("unexpected entry '{}' in GT archive", name));
    }
    if (sample.image_id.empty()) {
      throw Error("BadGroundTruth", fmt::format("entry '{}' has no image id", name));
    }
    const std::string id = sample.image_id;
    if (!out.emplace(id, std::move(sample)).second) {
      throw Error("BadGroundTruth", fmt::format("image '{}' appears twice", id));
    }
  }
  return out;
}

// ---- matching ----------------------------------------------------------------

Filtered filter_dontcare(const std::vector<Quad>& dets, const std::vector<Quad>& dontcare,
                         double overlap) {
  Filtered f;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const double a = geometry::area(dets[i]);
    bool ignored = false;
    for (const auto& dc : dontcare) {
      if (geometry::intersection_area(dets[i], dc) / a > overlap) {
        ignored = true;
        break;
      }
    }
    (ignored ? f.ignored : f.considered).push_back(i);
  }
  return f;
}

double hmean(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

namespace {

struct Prepared {
  std::vector<const GtWord*> care;
  std::vector<Quad> dontcare;
  std::vector<Quad> det_quads;
  Filtered filtered;
};

Prepared prepare_geometric(const GtSample& gt, const std::vector<Detection>& dets,
                           const Params& params) {
  Prepared p;
  for (const auto& w : gt.words) {
    if (!w.quad) continue;
    if (w.care) {
      p.care.push_back(&w);
    } else {
      p.dontcare.push_back(*w.quad);
    }
  }
  for (const auto& d : dets) {
    if (!d.quad) throw Error("MissingQuads", "this protocol needs detection quads");
    p.det_quads.push_back(*d.quad);
  }
  p.filtered = filter_dontcare(p.det_quads, p.dontcare, params.dontcare_overlap);
  return p;
}

void finish(SampleEval& s) {
  s.precision = s.num_det_considered ? s.det_credit / static_cast<double>(s.num_det_considered) : 1.0;
  s.recall = s.num_gt_care ? s.gt_credit / static_cast<double>(s.num_gt_care) : 1.0;
  s.hmean = hmean(s.precision, s.recall);
  std::sort(s.unmatched_det.begin(), s.unmatched_det.end());
  std::sort(s.ignored_det.begin(), s.ignored_det.end());
}

// Greedy one-to-one IoU matching over care GT (rows) and considered dets
// (cols). Returns (row, col, iou) in acceptance order.
struct Pair {
  std::size_t g;
  std::size_t d;
  double iou;
};

std::vector<Pair> greedy_iou(const Prepared& p, double threshold) {
  const auto& cols = p.filtered.considered;
  std::vector<Pair> cand;
  for (std::size_t g = 0; g < p.care.size(); ++g) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double v = geometry::iou(*p.care[g]->quad, p.det_quads[cols[c]]);
      if (v >= threshold) cand.push_back({g, c, v});
    }
  }
  std::sort(cand.begin(), cand.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.g != b.g) return a.g < b.g;
    return a.d < b.d;
  });
  std::vector<bool> gt_used(p.care.size()), det_used(cols.size());
  std::vector<Pair> accepted;
  for (const auto& c : cand) {
    if (gt_used[c.g] || det_used[c.d]) continue;
    gt_used[c.g] = det_used[c.d] = true;
    accepted.push_back({c.g, cols[c.d], c.iou});
  }
  return accepted;
}

SampleEval eval_iou(const GtSample& gt, const std::vector<Detection>& dets, const Params& params,
                    bool end_to_end) {
  const Prepared p = prepare_geometric(gt, dets, params);
  if (end_to_end) {
    for (const auto& d : dets) {
      if (!d.transcription) throw Error("MissingTranscriptions", "end-to-end needs transcriptions");
    }
  }
  SampleEval s;
  s.image_id = gt.image_id;
  s.num_gt_care = p.care.size();
  s.num_det_considered = p.filtered.considered.size();
  s.ignored_det = p.filtered.ignored;

  std::vector<bool> gt_matched(p.care.size()), det_matched(dets.size());
  for (const auto& m : greedy_iou(p, params.iou_threshold)) {
    const GtWord& g = *p.care[m.g];
    if (end_to_end && !texts_equal(g.transcription, *dets[m.d].transcription, params.case_sensitive)) {
      s.text_mismatches.push_back({g.id, m.d, g.transcription, *dets[m.d].transcription,
                                   normalized_edit_similarity(g.transcription,
                                                              *dets[m.d].transcription,
                                                              params.case_sensitive)});
      continue;
    }
    gt_matched[m.g] = det_matched[m.d] = true;
    s.matches.push_back({{g.id}, {m.d}, "one_to_one", m.iou, 0.0, 1.0, 1.0});
  }
  for (std::size_t g = 0; g < p.care.size(); ++g) {
    if (!gt_matched[g]) s.unmatched_gt.push_back(p.care[g]->id);
  }
  for (std::size_t d : p.filtered.considered) {
    if (!det_matched[d]) s.unmatched_det.push_back(d);
  }
  s.gt_credit = s.det_credit = static_cast<double>(s.matches.size());
  finish(s);
  return s;
}

SampleEval eval_deteval(const GtSample& gt, const std::vector<Detection>& dets,
                        const Params& params) {
  const Prepared p = prepare_geometric(gt, dets, params);
  const auto& cols = p.filtered.considered;
  const std::size_t ng = p.care.size(), nd = cols.size();
  std::vector<double> gt_area(ng), det_area(nd);
  std::vector<std::vector<double>> inter(ng, std::vector<double>(nd));
  for (std::size_t g = 0; g < ng; ++g) gt_area[g] = geometry::area(*p.care[g]->quad);
  for (std::size_t d = 0; d < nd; ++d) det_area[d] = geometry::area(p.det_quads[cols[d]]);
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t d = 0; d < nd; ++d) {
      inter[g][d] = geometry::intersection_area(*p.care[g]->quad, p.det_quads[cols[d]]);
    }
  }
  auto R = [&](std::size_t g, std::size_t d) { return inter[g][d] / gt_area[g]; };
  auto P = [&](std::size_t g, std::size_t d) { return inter[g][d] / det_area[d]; };

  SampleEval s;
  s.image_id = gt.image_id;
  s.num_gt_care = ng;
  s.num_det_considered = nd;
  s.ignored_det = p.filtered.ignored;
  std::vector<bool> gu(ng), du(nd);

  auto record = [&](std::vector<std::size_t> gs, std::vector<std::size_t> ds, const char* kind,
                    double credit) {
    Match m;
    m.kind = kind;
    double i_sum = 0, g_sum = 0, d_sum = 0;
    for (auto g : gs) g_sum += gt_area[g];
    for (auto d : ds) d_sum += det_area[d];
    for (auto g : gs) {
      for (auto d : ds) i_sum += inter[g][d];
    }
    m.value = i_sum / g_sum;
    m.area_precision = i_sum / d_sum;
    m.gt_credit = m.det_credit = credit;
    for (auto g : gs) {
      gu[g] = true;
      m.gt.push_back(p.care[g]->id);
      s.gt_credit += credit;
    }
    for (auto d : ds) {
      du[d] = true;
      m.det.push_back(cols[d]);
      s.det_credit += credit;
    }
    s.matches.push_back(std::move(m));
  };

  // One-to-one.
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t d = 0; d < nd && !gu[g]; ++d) {
      if (!du[d] && R(g, d) >= params.tr && P(g, d) >= params.tp) {
        record({g}, {d}, "one_to_one", 1.0);
      }
    }
  }
  // One GT split over several detections.
  for (std::size_t g = 0; g < ng; ++g) {
    if (gu[g]) continue;
    std::vector<std::size_t> ds;
    double cover = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      if (!du[d] && inter[g][d] > 0 && P(g, d) >= params.tp) {
        ds.push_back(d);
        cover += R(g, d);
      }
    }
    if (ds.size() >= 2 && cover >= params.tr) {
      record({g}, ds, "one_to_many", params.scatter_penalty);
    }
  }
  // Several GTs merged into one detection.
  for (std::size_t d = 0; d < nd; ++d) {
    if (du[d]) continue;
    std::vector<std::size_t> gs;
    double cover = 0;
    for (std::size_t g = 0; g < ng; ++g) {
      if (!gu[g] && inter[g][d] > 0 && R(g, d) >= params.tr) {
        gs.push_back(g);
        cover += P(g, d);
      }
    }
    if (gs.size() >= 2 && cover >= params.tp) {
      record(gs, {d}, "many_to_one", params.scatter_penalty);
    }
  }

  for (std::size_t g = 0; g < ng; ++g) {
    if (!gu[g]) s.unmatched_gt.push_back(p.care[g]->id);
  }
  for (std::size_t d = 0; d < nd; ++d) {
    if (!du[d]) s.unmatched_det.push_back(cols[d]);
  }
  finish(s);
  return s;
}

// Prediction line i is aligned with GT word i (document order).
SampleEval eval_recognition(const GtSample& gt, const std::vector<Detection>& dets,
                            const Params& params) {
  SampleEval s;
  s.image_id = gt.image_id;
  for (const auto& d : dets) {
    if (!d.transcription) throw Error("MissingTranscriptions", "recognition needs transcriptions");
  }
  for (std::size_t i = 0; i < gt.words.size(); ++i) {
    const GtWord& w = gt.words[i];
    const std::string* pred = i < dets.size() ? &*dets[i].transcription : nullptr;
    if (!w.care) {
      if (pred) s.ignored_det.push_back(i);
      continue;
    }
    ++s.num_gt_care;
    ++s.pairs;
    const std::string text = pred ? *pred : std::string();
    const double nes = normalized_edit_similarity(w.transcription, text, params.case_sensitive);
    s.nes_sum += nes;
    if (pred && pred->empty()) {
      s.ignored_det.push_back(i);  // abstention
      s.unmatched_gt.push_back(w.id);
      continue;
    }
    if (pred) ++s.num_det_considered;
    if (pred && texts_equal(w.transcription, *pred, params.case_sensitive)) {
      ++s.correct;
      s.matches.push_back({{w.id}, {i}, "one_to_one", nes, 0.0, 1.0, 1.0});
      continue;
    }
    s.unmatched_gt.push_back(w.id);
    if (pred) {
      s.unmatched_det.push_back(i);
      s.text_mismatches.push_back({w.id, i, w.transcription, *pred, nes});
    }
  }
  for (std::size_t i = gt.words.size(); i < dets.size(); ++i) {
    ++s.num_det_considered;
    s.unmatched_det.push_back(i);
  }
  s.gt_credit = s.det_credit = static_cast<double>(s.correct);
  finish(s);
  return s;
}

}  // namespace

SampleEval evaluate_sample(const GtSample& gt, const std::vector<Detection>& dets,
                           const Protocol& protocol) {
  switch (protocol.kind) {
    case ProtocolKind::LocalizationIou: return eval_iou(gt, dets, protocol.params, false);
    case ProtocolKind::EndToEnd: return eval_iou(gt, dets, protocol.params, true);
    case ProtocolKind::LocalizationDetEval: return eval_deteval(gt, dets, protocol.params);
    case ProtocolKind::Recognition: return eval_recognition(gt, dets, protocol.params);
  }
  throw Error("BadParams", "unknown protocol kind");
}

OverallEval aggregate(const std::vector<SampleEval>& samples, const Protocol& protocol) {
  OverallEval o;
  o.protocol_id = protocol.id;
  o.kind = protocol.kind;
  o.num_images = samples.size();
  double gt_credit = 0, det_credit = 0, nes = 0;
  std::size_t pairs = 0, correct = 0;
  for (const auto& s : samples) {
    o.num_gt_care += s.num_gt_care;
    o.num_det_considered += s.num_det_considered;
    o.num_det_ignored += s.ignored_det.size();
    gt_credit += s.gt_credit;
    det_credit += s.det_credit;
    pairs += s.pairs;
    correct += s.correct;
    nes += s.nes_sum;
  }
  if (o.num_gt_care == 0 && o.num_det_considered == 0) {
    o.empty = true;
    return o;
  }
  o.precision = o.num_det_considered ? det_credit / static_cast<double>(o.num_det_considered) : 1.0;
  o.recall = o.num_gt_care ? gt_credit / static_cast<double>(o.num_gt_care) : 1.0;
  o.hmean = hmean(o.precision, o.recall);
  if (pairs) {
    o.word_accuracy = static_cast<double>(correct) / static_cast<double>(pairs);
    o.mean_nes = nes / static_cast<double>(pairs);
  }
  return o;
}

// ---- result files ------------------------------------------------------------

namespace {

void write_params(JsonWriter& w, const Protocol& protocol) {
  Params p = protocol.params;
  w.key("params").begin_object();
  for (const auto& field : schema(protocol.kind)) {
    w.key(field.key);
    if (field.is_bool) {
      w.value(p.case_sensitive);
    } else {
      w.value(*real_field(p, field.key));
    }
  }
  w.end_object();
}

void write_points(JsonWriter& w, const std::optional<Quad>& q) {
  if (!q) {
    w.null();
    return;
  }
  w.begin_array();
  for (double v : q->flat()) w.value(v);
  w.end_array();
}

}  // namespace

std::string overall_json(const OverallEval& o, const Protocol& protocol,
                         std::string_view gt_snapshot) {
  JsonWriter w;
  w.begin_object();
  w.key("protocol").value(protocol.id);
  w.key("kind").value(to_string(protocol.kind));
  write_params(w, protocol);
  w.key("gt_snapshot").value(gt_snapshot);
  w.key("num_images").value(o.num_images);
  w.key("num_gt_care").value(o.num_gt_care);
  w.key("num_det_considered").value(o.num_det_considered);
  w.key("num_det_ignored").value(o.num_det_ignored);
  w.key("precision").value(o.precision);
  w.key("recall").value(o.recall);
  w.key("hmean").value(o.hmean);
  if (protocol.kind == ProtocolKind::Recognition) {
    w.key("word_accuracy").value(o.word_accuracy);
    w.key("mean_nes").value(o.mean_nes);
  }
  w.key("empty").value(o.empty);
  w.end_object();
  return w.str();
}

std::string sample_json(const SampleEval& s, const GtSample& gt,
                        const std::vector<Detection>& dets) {
  JsonWriter w;
  w.begin_object();
  w.key("image").value(s.image_id);
  w.key("precision").value(s.precision);
  w.key("recall").value(s.recall);
  w.key("hmean").value(s.hmean);
  w.key("num_gt_care").value(s.num_gt_care);
  w.key("num_det_considered").value(s.num_det_considered);
  w.key("matches").begin_array();
  for (const auto& m : s.matches) {
    w.begin_object();
    w.key("kind").value(m.kind);
    w.key("gt").begin_array();
    for (const auto& g : m.gt) w.value(g);
    w.end_array();
    w.key("det").begin_array();
    for (auto d : m.det) w.value(d);
    w.end_array();
    if (!m.kind.empty() && m.area_precision > 0) {
      w.key("area_recall").value(m.value);
      w.key("area_precision").value(m.area_precision);
    } else {
      w.key("value").value(m.value);
    }
    w.key("gt_credit").value(m.gt_credit);
    w.key("det_credit").value(m.det_credit);
    w.end_object();
  }
  w.end_array();
  w.key("unmatched_gt").begin_array();
  for (const auto& g : s.unmatched_gt) w.value(g);
  w.end_array();
  w.key("unmatched_det").begin_array();
  for (auto d : s.unmatched_det) w.value(d);
  w.end_array();
  w.key("ignored_det").begin_array();
  for (auto d : s.ignored_det) w.value(d);
  w.end_array();
  w.key("text_mismatches").begin_array();
  for (const auto& t : s.text_mismatches) {
    w.begin_object();
    w.key("gt").value(t.gt);
    w.key("det").value(t.det);
    w.key("gt_text").value(t.gt_text);
    w.key("det_text").value(t.det_text);
    w.key("nes").value(t.nes);
    w.end_object();
  }
  w.end_array();
  w.key("gt").begin_array();
  for (const auto& g : gt.words) {
    w.begin_object();
    w.key("id").value(g.id);
    w.key("care").value(g.care);
    w.key("transcription").value(g.transcription);
    w.key("points");
    write_points(w, g.quad);
    w.end_object();
  }
  w.end_array();
  w.key("det").begin_array();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    w.begin_object();
    w.key("index").value(i);
    w.key("points");
    write_points(w, d.quad);
    w.key("confidence");
    if (d.confidence) {
      w.value(*d.confidence);
    } else {
      w.null();
    }
    w.key("transcription");
    if (d.transcription) {
      w.value(*d.transcription);
    } else {
      w.null();
    }
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

ResultFiles evaluate_to_files(const GtSet& gt,
                              const std::map<std::string, std::vector<Detection>>& dets,
                              const Protocol& protocol, std::string_view gt_snapshot) {
  static const std::vector<Detection> kNone;
  ResultFiles files;
  std::vector<SampleEval> samples;
  samples.reserve(gt.size());
  for (const auto& [id, sample] : gt) {
    const auto it = dets.find(id);
    const auto& d = it == dets.end() ? kNone : it->second;
    samples.push_back(evaluate_sample(sample, d, protocol));
    if (protocol.per_sample) {
      files["per_sample/" + id + ".json"] = sample_json(samples.back(), sample, d);
    }
  }
  files["overall.json"] = overall_json(aggregate(samples, protocol), protocol, gt_snapshot);
  return files;
}

InvalidSubmission::InvalidSubmission(ingest::ValidationReport r)
    : Error("InvalidSubmission",
            r.errors.empty()
                ? std::string("submission is invalid")
                : fmt::format("{}:{}: {}: {}", r.errors[0].file, r.errors[0].line,
                              r.errors[0].code, r.errors[0].message)),
      report_(std::move(r)) {}

ResultFiles evaluate_archives(std::string_view gt_zip, std::string_view submission_zip,
                              const Protocol& protocol, const ingest::FormatSpec& format) {
  const GtSet gt = load_gt(gt_zip);
  std::set<std::string> ids;
  for (const auto& [id, _] : gt) ids.insert(id);
  auto parsed = ingest::parse_archive(submission_zip, format, ids);
  if (!parsed.report.ok) throw InvalidSubmission(std::move(parsed.report));
  return evaluate_to_files(gt, parsed.samples, protocol, sha256_hex(gt_zip));
}

void write_result_files(const std::filesystem::path& dir, const ResultFiles& files) {
  for (const auto& [rel, content] : files) {
    const auto path = dir / rel;
    std::filesystem::create_directories(path.parent_path());
    fs::write_file_atomic(path, content);
  }
}

}  // namespace rrc::evalcore
