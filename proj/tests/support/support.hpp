#pragma once

#include <sys/types.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrc/annotation.hpp"
#include "rrc/evalcore.hpp"
#include "rrc/geometry.hpp"
#include "rrc/ingest.hpp"

namespace rrc::test {

namespace stdfs = std::filesystem;

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const stdfs::path& path() const { return path_; }
  stdfs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  stdfs::path path_;
};

std::string read_file(const stdfs::path& p);
void write_file(const stdfs::path& p, const std::string& bytes);

std::string make_zip(const std::map<std::string, std::string>& files);

// ---- random geometry -------------------------------------------------------------

/// Random convex quadrilateral inside [0, span]^2, corners in random order
/// and orientation. Sizes start at `min_size`.
std::array<geometry::Point, 4> random_corners(std::mt19937_64& rng, double span = 100.0,
                                              double min_size = 2.0);
geometry::Quad random_quad(std::mt19937_64& rng, double span = 100.0, double min_size = 2.0);

/// A quad strictly inside `outer` (shrunk towards a random interior point).
geometry::Quad quad_inside(std::mt19937_64& rng, const geometry::Quad& outer);

geometry::Quad rect(double x0, double y0, double x1, double y1);

ingest::Detection det(const geometry::Quad& q, std::optional<std::string> text = std::nullopt);

evalcore::GtWord gt_word(std::string id, const geometry::Quad& q, std::string text = "word",
                         bool care = true);

struct Scene {
  evalcore::GtSample gt;
  std::vector<ingest::Detection> dets;
};

/// Up to `max_gt` GT words (some don't care) and `max_det` detections,
/// most of them near a GT word so matches actually happen.
Scene random_scene(std::mt19937_64& rng, int max_gt, int max_det, double dontcare_rate = 0.3);

// ---- processes -------------------------------------------------------------------

pid_t spawn(const std::vector<std::string>& argv, const std::optional<stdfs::path>& log = {});
/// Exit status, or 128+signal.
int wait_for(pid_t pid);

/// Small random-noise PNG; different seeds give different bytes.
std::string tiny_png(std::uint64_t seed, int width = 32, int height = 16);

// ---- tree fixtures --------------------------------------------------------------

/// A small two-line tree with words and characters.
annotation::Tree sample_tree(double dx = 0.0);

// ---- fixture corpus ---------------------------------------------------------------

/// Deterministic synthetic corpus: per image a PNG, a GT tree (lines of
/// words, a few don't-care), and detector / recognizer output with the usual
/// mix of hits, splits, misses, wrong text and false positives.
struct Corpus {
  std::vector<std::string> pngs;
  std::vector<annotation::Tree> trees;
  std::vector<std::string> full_results;         // quad+confidence+transcription
  std::vector<std::string> recognition_results;  // transcription-only

  static std::vector<std::string> default_ids(std::size_t n);

  /// `<id>.xml` per image, written with zip::write_sorted (what freeze_gt
  /// produces for the same trees).
  std::string gt_zip(const std::vector<std::string>& ids) const;
  /// `res_<id>.txt` per image. Image `skip` (if any) is left out.
  std::string submission_zip(const std::vector<std::string>& ids, bool recognition,
                             std::optional<std::size_t> skip = std::nullopt) const;
};

Corpus make_corpus(std::uint64_t seed = 20, std::size_t images = 20);

}  // namespace rrc::test
