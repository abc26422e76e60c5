// Acceptance run: one PASS/FAIL line per criterion, at full size.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "oracles.hpp"
#include "rrc/evalcore.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace rrc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, const std::function<Outcome()>& run) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = run();
  } catch (const std::exception& e) {
    o = {false, fmt::format("threw: {}", e.what())};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  failures += !o.pass;
  std::printf("%s  %-24s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
  std::fflush(stdout);
}

}  // namespace

int main() {
  test::TempDir work;

  criterion("geometry-oracle", [] {
    const auto r = test::run_geometry_oracle(10'000, 10'000, 1);
    const bool ok = r.max_iou_diff < 1e-3 && r.max_corner_error < 1e-6 && r.seconds < 60;
    return Outcome{ok, fmt::format("{} pairs max|dIoU|={:.2e} (<1e-3), {} quads max corner err={:.2e} px "
                                   "(<1e-6), {:.1f}s (<60s){}",
                                   r.pairs, r.max_iou_diff, r.quads, r.max_corner_error, r.seconds,
                                   ok ? "" : " worst: " + r.worst)};
  });

  criterion("metric-oracle", [] {
    const auto r = test::run_metric_oracle(1000, 2);
    const bool example = r.example_p == 1.0 / 3.0 && r.example_r == 0.5 && r.example_h == 0.4;
    const bool ok = r.cardinality_mismatches == 0 && r.credit_violations == 0 &&
                    r.bound_violations == 0 && example;
    return Outcome{ok, fmt::format("{} scenes: cardinality mismatches={}, credit violations={}, "
                                   "bound violations={}, deteval groups={}; example P={:.17g} R={:.17g} H={:.17g}{}",
                                   r.scenes, r.cardinality_mismatches, r.credit_violations,
                                   r.bound_violations, r.deteval_groups, r.example_p, r.example_r,
                                   r.example_h, r.first_failure.empty() ? "" : " first: " + r.first_failure)};
  });

  criterion("dontcare-metamorphic", [] {
    const auto r = test::run_dontcare_metamorphic(500, 3);
    return Outcome{r.violations == 0,
                   fmt::format("{} scenes, {} injected detections, {} changed results{}", r.scenes,
                               r.injected, r.violations,
                               r.first_failure.empty() ? "" : " first: " + r.first_failure)};
  });

  criterion("recognition-nes", [] {
    const double v = evalcore::normalized_edit_similarity("HELLO", "HELO");
    std::mt19937_64 rng(4);
    const std::vector<std::string> parts{"a", "B", "\xC3\xA9", "\xE4\xB8\xAD", " ", "1", "Z"};
    int range = 0, asym = 0, oracle = 0;
    const int n = 20'000;
    for (int i = 0; i < n; ++i) {
      auto rnd = [&] {
        std::string s;
        for (int k = static_cast<int>(rng() % 10); k > 0; --k) s += parts[rng() % parts.size()];
        return s;
      };
      const auto a = rnd(), b = rnd();
      const double x = evalcore::normalized_edit_similarity(a, b);
      range += !(x >= 0.0 && x <= 1.0);
      asym += x != evalcore::normalized_edit_similarity(b, a);
      const auto ua = test::oracle::utf8_to_u32(a), ub = test::oracle::utf8_to_u32(b);
      const double m = static_cast<double>(std::max(ua.size(), ub.size()));
      const double want = m == 0 ? 1.0 : 1.0 - static_cast<double>(test::oracle::edit_distance(ua, ub)) / m;
      oracle += std::abs(x - want) > 1e-12;
    }
    const bool ok = std::abs(v - 0.8) <= 1e-12 && range == 0 && asym == 0 && oracle == 0;
    return Outcome{ok, fmt::format("NES(HELLO,HELO)={:.17g}; {} random pairs: out of [0,1]={}, "
                                   "asymmetric={}, DP-oracle mismatches={}",
                                   v, n, range, asym, oracle)};
  });

  criterion("parity", [&] {
    const auto r = test::run_parity(work / "parity", test::make_corpus(20, 20));
    return Outcome{r.mismatches == 0 && r.files_compared > 0,
                   fmt::format("20 images, 4 protocols, CLI vs worker vs bundle: {} files compared, {} "
                               "mismatches{}",
                               r.files_compared, r.mismatches,
                               r.first_failure.empty() ? "" : " first: " + r.first_failure)};
  });

  criterion("queue-kills", [&] {
    const auto r = test::run_queue_kills(work / "queue", 4, 100, 10, 5);
    const bool ok = r.done == r.jobs && r.failed == 0 && r.kills == 10 && r.bad_result_sets == 0 &&
                    r.conservation_violations == 0 && r.seconds < 120;
    return Outcome{ok, fmt::format("4 workers, {} jobs, {} kills: done={} failed={}, bad result sets={}, "
                                   "{} samples with conservation violations={}, {:.1f}s (<120s){}",
                                   r.jobs, r.kills, r.done, r.failed, r.bad_result_sets, r.samples,
                                   r.conservation_violations, r.seconds,
                                   r.first_failure.empty() ? "" : " first: " + r.first_failure)};
  });

  criterion("workflow", [&] {
    const auto m = test::run_workflow_model(work / "model", 10'000, 6);
    const auto s = test::run_reserve_storm(work / "storm", 8, 10);
    const bool ok = m.violations == 0 && s.bad_rounds == 0 && s.winners == s.rounds;
    return Outcome{ok, fmt::format("{} ops ({} accepted), illegal states={}; storm 8 processes x {} rounds, "
                                   "rounds without exactly one holder={}{}{}",
                                   m.ops, m.accepted, m.violations, s.rounds, s.bad_rounds,
                                   m.first_failure.empty() ? "" : " model: " + m.first_failure,
                                   s.first_failure.empty() ? "" : " storm: " + s.first_failure)};
  });

  criterion("datastore", [&] {
    const auto c = test::run_crash_injection(work / "crash", 200, 7);
    const auto x = test::run_xml_fixtures(RRC_FIXTURE_DIR "/xml");
    const bool ok = c.torn == 0 && c.crashes > 0 && x.mismatches == 0 && x.files > 0;
    return Outcome{ok, fmt::format("{} crash trials ({} died mid-save), torn revisions={}; {} XML fixtures, "
                                   "round-trip mismatches={}{}{}",
                                   c.trials, c.crashes, c.torn, x.files, x.mismatches,
                                   c.first_failure.empty() ? "" : " crash: " + c.first_failure,
                                   x.first_failure.empty() ? "" : " xml: " + x.first_failure)};
  });

  criterion("api-end-to-end", [&] {
    const auto r = test::run_api_end_to_end(work / "api", test::make_corpus(20, 20));
    return Outcome{r.evaluated && r.ranking_matches && r.invalid_rejected,
                   fmt::format("evaluated={} ranking matches CLI={} invalid upload 422 with file+line={} {}",
                               r.evaluated, r.ranking_matches, r.invalid_rejected, r.detail)};
  });

  std::printf("%d criteria failed\n", failures);
  return failures;
}
