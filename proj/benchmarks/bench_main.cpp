#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "rrc/evalcore.hpp"
#include "rrc/geometry.hpp"
#include "rrc/ingest.hpp"

using namespace rrc;

namespace {

geometry::Quad quad(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  while (true) {
    const double cx = 100 * u(rng), cy = 100 * u(rng), w = 5 + 30 * u(rng), h = 3 + 10 * u(rng);
    const double a = 0.6 * (u(rng) - 0.5), c = std::cos(a), s = std::sin(a);
    std::vector<double> xy;
    for (auto [dx, dy] : {std::pair{-w, -h}, {w, -h}, {w, h}, {-w, h}}) {
      xy.push_back(cx + c * dx / 2 - s * dy / 2 + u(rng));
      xy.push_back(cy + s * dx / 2 + c * dy / 2 + u(rng));
    }
    try {
      return geometry::canonicalize_quad(xy);
    } catch (const Error&) {
    }
  }
}

void BM_Iou(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<geometry::Quad> qs;
  for (int i = 0; i < 1024; ++i) qs.push_back(quad(rng));
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(geometry::iou(qs[i % 1024], qs[(i * 7 + 3) % 1024]));
    ++i;
  }
}
BENCHMARK(BM_Iou);

void BM_RectificationHomography(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto q = quad(rng);
  for (auto _ : state) benchmark::DoNotOptimize(geometry::rectification_homography(q, 200, 64));
}
BENCHMARK(BM_RectificationHomography);

// One image with `n` GT words and about as many detections.
void BM_EvaluateSample(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto kind = static_cast<evalcore::ProtocolKind>(state.range(1));
  std::mt19937_64 rng(3);
  evalcore::GtSample gt{"img", {}};
  std::vector<ingest::Detection> dets;
  for (int i = 0; i < n; ++i) {
    const auto q = quad(rng);
    gt.words.push_back({fmt::format("w{}", i), q, "word", i % 7 != 0});
    ingest::Detection d;
    d.quad = rng() % 4 ? q : quad(rng);
    d.transcription = "word";
    dets.push_back(d);
  }
  const evalcore::Protocol p{"p", kind, {}, true};
  for (auto _ : state) benchmark::DoNotOptimize(evalcore::evaluate_sample(gt, dets, p));
  state.SetComplexityN(n);
}
BENCHMARK(BM_EvaluateSample)
    ->ArgsProduct({{10, 50, 200}, {0, 1, 3}})
    ->ArgNames({"words", "kind"});

void BM_ParseResultFile(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::string text;
  for (int i = 0; i < 1000; ++i) {
    ingest::Detection d;
    d.quad = quad(rng);
    d.confidence = 0.5;
    d.transcription = "no,smoking";
    text += ingest::serialize(d, ingest::Grammar::QuadConfidenceTranscription) + "\n";
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ingest::parse_result_file(text, ingest::Grammar::QuadConfidenceTranscription, "res_x.txt"));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_ParseResultFile);

void BM_Nes(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(evalcore::normalized_edit_similarity("Straßenbahnhaltestelle", "strassenbahn haltestele", false));
  }
}
BENCHMARK(BM_Nes);

}  // namespace
BENCHMARK_MAIN();
