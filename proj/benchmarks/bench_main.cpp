#include <benchmark/benchmark.h>

#include <random>

#include "forgeval/attack.hpp"
#include "forgeval/calibration.hpp"
#include "forgeval/detector.hpp"
#include "forgeval/metrics.hpp"
#include "forgeval/scoring.hpp"

using namespace forgeval;

namespace {

std::string random_text(std::mt19937_64& rng, std::size_t words) {
  static const char* vocab[] = {"the", "model", "writes", "a", "short", "note", "about", "rivers", "and", "light"};
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += vocab[rng() % 10];
  }
  return out;
}

std::vector<std::string> corpus(std::size_t n) {
  std::mt19937_64 rng(5);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_text(rng, 60));
  return out;
}

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % 2);
    scores[i] = noise(rng) + labels[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(auroc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Range(1 << 10, 1 << 18);

void BM_NGramTrain(benchmark::State& state) {
  const auto texts = corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(NGramLM::train(texts, 3, 0.5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NGramTrain)->Arg(100)->Arg(1000);

void BM_NGramScore(benchmark::State& state) {
  const auto texts = corpus(200);
  const NGramLM lm = NGramLM::train(texts, static_cast<int>(state.range(0)), 0.5);
  std::mt19937_64 rng(9);
  const std::string text = random_text(rng, 200);
  for (auto _ : state) benchmark::DoNotOptimize(lm.score_text(text));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_NGramScore)->Arg(2)->Arg(3)->Arg(5);

void BM_DetectorScore(benchmark::State& state, const std::string& name) {
  auto lm = std::make_shared<NGramLM>(NGramLM::train(corpus(200), 3, 0.5));
  const auto detector = DetectorRegistry::with_builtins().create(name, lm);
  std::mt19937_64 rng(2);
  Record r;
  r.id = "r";
  r.text = random_text(rng, 200);
  for (auto _ : state) benchmark::DoNotOptimize(score(*detector, r));
}
BENCHMARK_CAPTURE(BM_DetectorScore, likelihood, std::string("likelihood"));
BENCHMARK_CAPTURE(BM_DetectorScore, lrr, std::string("lrr"));
BENCHMARK_CAPTURE(BM_DetectorScore, gltr, std::string("gltr"));

void BM_Attack(benchmark::State& state, const std::string& name) {
  std::mt19937_64 rng(3);
  Record r;
  r.id = "m1";
  r.label = 1;
  r.text = random_text(rng, 200);
  AttackSpec spec;
  spec.name = name;
  spec.rate = 0.2;
  spec.seed = 4;
  for (auto _ : state) benchmark::DoNotOptimize(apply_attack(spec, r));
}
BENCHMARK_CAPTURE(BM_Attack, typo_mixed, std::string("typo_mixed"));
BENCHMARK_CAPTURE(BM_Attack, homoglyph, std::string("homoglyph"));
BENCHMARK_CAPTURE(BM_Attack, format_chars, std::string("format_chars"));

void BM_CalibrationFit(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise;
  std::vector<LabeledScore> data(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i].label = static_cast<int>(i % 2);
    data[i].score = noise(rng) + 1.5 * data[i].label;
  }
  for (auto _ : state) benchmark::DoNotOptimize(fit(data));
}
BENCHMARK(BM_CalibrationFit)->Arg(1000)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
