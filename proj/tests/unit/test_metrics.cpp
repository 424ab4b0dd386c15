#include <gtest/gtest.h>

#include <random>

#include "forgeval/errors.hpp"
#include "forgeval/metrics.hpp"
#include "support.hpp"

using namespace forgeval;
namespace oracle = testing_support::oracle;

namespace {

Prediction pred(const std::string& id, int y_true, double score, int y_pred) {
  Prediction p;
  p.record_id = id;
  p.y_true = y_true;
  p.score = score;
  p.probability = y_pred ? 0.9 : 0.1;
  p.y_pred = y_pred;
  return p;
}

struct RandomSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

RandomSet random_set(std::mt19937_64& rng, std::size_t n) {
  RandomSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng() % 2);
    s.labels.push_back(y);
    s.scores.push_back(static_cast<double>(rng() % 15) + (y ? 2.0 : 0.0));
  }
  s.labels[0] = 0;
  s.labels[1] = 1;
  return s;
}

}  // namespace

TEST(Ranking, WorkedExample) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auroc(s, y), 0.75);
  EXPECT_NEAR(aupr(s, y), oracle::aupr(s, y), 1e-15);
}

TEST(Ranking, PerfectSeparation) {
  const std::vector<double> s = {0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_EQ(auroc(s, y), 1.0);
  EXPECT_EQ(aupr(s, y), 1.0);
  EXPECT_EQ(tpr_at_fpr(s, y, 0.0), 1.0);
  const std::vector<int> flipped = {1, 1, 0, 0};
  EXPECT_EQ(auroc(s, flipped), 0.0);
}

TEST(Ranking, AllTiedIsHalf) {
  const std::vector<double> s(6, 1.0);
  const std::vector<int> y = {0, 1, 0, 1, 0, 1};
  EXPECT_EQ(auroc(s, y), 0.5);
  EXPECT_EQ(tpr_at_fpr(s, y, 0.5), 0.0);
  EXPECT_EQ(tpr_at_fpr(s, y, 1.0), 1.0);
}

TEST(Ranking, SingleClassIsDataError) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<int> y = {1, 1};
  EXPECT_THROW(auroc(s, y), DataError);
  EXPECT_THROW(aupr(s, y), DataError);
  EXPECT_THROW(tpr_at_fpr(s, y, 0.1), DataError);
}

TEST(Ranking, RandomAgainstOracle) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto set = random_set(rng, 5 + rng() % 60);
    EXPECT_NEAR(auroc(set.scores, set.labels), oracle::auroc(set.scores, set.labels), 1e-12);
    EXPECT_NEAR(aupr(set.scores, set.labels), oracle::aupr(set.scores, set.labels), 1e-12);
    for (double a : {0.0, 0.01, 0.1, 0.25, 0.5, 1.0}) {
      EXPECT_NEAR(tpr_at_fpr(set.scores, set.labels, a), oracle::tpr_at_fpr(set.scores, set.labels, a), 1e-12);
    }
  }
}

TEST(Ranking, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto set = random_set(rng, 40);
    std::vector<double> moved;
    for (double s : set.scores) moved.push_back(std::exp(0.3 * s) - 4.0);
    EXPECT_DOUBLE_EQ(auroc(set.scores, set.labels), auroc(moved, set.labels));
    EXPECT_DOUBLE_EQ(aupr(set.scores, set.labels), aupr(moved, set.labels));
    EXPECT_DOUBLE_EQ(tpr_at_fpr(set.scores, set.labels, 0.1), tpr_at_fpr(moved, set.labels, 0.1));
    std::vector<int> flipped;
    for (int y : set.labels) flipped.push_back(1 - y);
    EXPECT_NEAR(auroc(set.scores, flipped), 1.0 - auroc(set.scores, set.labels), 1e-12);
  }
}

TEST(Ranking, TprMonotoneInAlpha) {
  std::mt19937_64 rng(6);
  const auto set = random_set(rng, 200);
  double prev = 0.0;
  for (double a = 0.0; a <= 1.0; a += 0.01) {
    const double t = tpr_at_fpr(set.scores, set.labels, a);
    EXPECT_GE(t, prev);
    prev = t;
  }
}

TEST(Effectiveness, ConfusionAndRatios) {
  const std::vector<Prediction> p = {pred("a", 1, 0.9, 1), pred("b", 1, 0.2, 0), pred("c", 0, 0.8, 1),
                                     pred("d", 0, 0.1, 0), pred("e", 0, 0.3, 0)};
  const auto e = effectiveness(p);
  EXPECT_EQ(e.confusion, (Confusion{1, 1, 2, 1}));
  EXPECT_EQ(e.n, 5u);
  EXPECT_EQ(e.positives, 2u);
  EXPECT_EQ(e.negatives, 3u);
  EXPECT_DOUBLE_EQ(*e.accuracy.value, 0.6);
  EXPECT_DOUBLE_EQ(*e.precision.value, 0.5);
  EXPECT_DOUBLE_EQ(*e.recall.value, 0.5);
  EXPECT_DOUBLE_EQ(*e.f1.value, 0.5);
  EXPECT_DOUBLE_EQ(*e.auroc.value, oracle::auroc({0.9, 0.2, 0.8, 0.1, 0.3}, {1, 1, 0, 0, 0}));
}

TEST(Effectiveness, AbsentMetricsCarryReasons) {
  const std::vector<Prediction> humans = {pred("a", 0, 0.1, 0), pred("b", 0, 0.2, 0)};
  const auto e = effectiveness(humans);
  EXPECT_FALSE(e.precision.present());
  EXPECT_FALSE(e.recall.present());
  EXPECT_FALSE(e.f1.present());
  EXPECT_FALSE(e.auroc.present());
  for (const auto* m : {&e.precision, &e.recall, &e.f1, &e.auroc, &e.aupr}) EXPECT_FALSE(m->reason.empty());
  EXPECT_EQ(*e.accuracy.value, 1.0);
  EXPECT_THROW(effectiveness(std::vector<Prediction>{}), DataError);
  const auto op = tpr_at_fpr(humans, 0.01);
  EXPECT_FALSE(op.tpr.present());
  EXPECT_EQ(op.tpr.reason, "no positives");
}

TEST(Effectiveness, F1ZeroWhenNothingCorrect) {
  const std::vector<Prediction> p = {pred("a", 1, 0.1, 0), pred("b", 0, 0.9, 1)};
  EXPECT_EQ(*effectiveness(p).f1.value, 0.0);
}

TEST(OperatingPoints, ResolutionLimitedFlag) {
  std::vector<Prediction> p;
  for (int i = 0; i < 50; ++i) p.push_back(pred("n" + std::to_string(i), 0, i, 0));
  for (int i = 0; i < 50; ++i) p.push_back(pred("p" + std::to_string(i), 1, 100 + i, 1));
  EXPECT_TRUE(tpr_at_fpr(p, 0.01).resolution_limited);
  EXPECT_FALSE(tpr_at_fpr(p, 0.05).resolution_limited);
  EXPECT_EQ(*tpr_at_fpr(p, 0.01).tpr.value, 1.0);
}

namespace {

struct AttackFixture {
  std::vector<Prediction> clean;
  std::vector<Prediction> attacked;
  std::vector<AttackProvenance> provenance;
};

// Eight detected machine samples, three of which flip under attack, plus one
// undetected machine sample that is not eligible.
AttackFixture attack_fixture() {
  AttackFixture f;
  for (int i = 0; i < 9; ++i) {
    const std::string id = "m" + std::to_string(i);
    const int clean_pred = i < 8 ? 1 : 0;
    f.clean.push_back(pred(id, 1, 1.0, clean_pred));
    Prediction a = pred(id + "#typo", 1, 0.5, (i < 3 || i == 8) ? 0 : 1);
    a.attack = "typo";
    a.base_id = id;
    f.attacked.push_back(a);
    f.provenance.push_back({id + "#typo", id, "typo", "fp", 1});
  }
  f.clean.push_back(pred("h0", 0, 0.0, 0));
  return f;
}

}  // namespace

TEST(Asr, CountsFlipsAmongEligible) {
  const auto f = attack_fixture();
  const auto r = asr(f.clean, f.attacked, f.provenance, "cal", "cal");
  EXPECT_EQ(r.eligible, 8u);
  EXPECT_EQ(r.flipped, 3u);
  EXPECT_DOUBLE_EQ(*r.asr.value, 3.0 / 8.0);
  EXPECT_EQ(r.pairs.size(), 9u);
  const auto o = oracle::asr(f.clean, f.attacked, f.provenance);
  EXPECT_EQ(o.eligible, r.eligible);
  EXPECT_EQ(o.flipped, r.flipped);
}

TEST(Asr, ThresholdReuseEnforced) {
  const auto f = attack_fixture();
  EXPECT_THROW(asr(f.clean, f.attacked, f.provenance, "cal-a", "cal-b"), ThresholdReuseError);
  EXPECT_NO_THROW(require_same_calibration("x", "x"));
}

TEST(Asr, DataErrors) {
  auto f = attack_fixture();
  auto missing = f.provenance;
  missing.pop_back();
  EXPECT_THROW(asr(f.clean, f.attacked, missing, "c", "c"), DataError);
  auto human = f;
  human.attacked[0].y_true = 0;
  EXPECT_THROW(asr(human.clean, human.attacked, human.provenance, "c", "c"), DataError);
  auto orphan = f;
  orphan.provenance[0].base_id = "ghost";
  EXPECT_THROW(asr(orphan.clean, orphan.attacked, orphan.provenance, "c", "c"), DataError);
}

TEST(Asr, NoEligibleIsAbsent) {
  const std::vector<Prediction> clean = {pred("m", 1, 0, 0)};
  Prediction a = pred("m#x", 1, 0, 0);
  a.attack = "x";
  const std::vector<Prediction> attacked = {a};
  const std::vector<AttackProvenance> prov = {{"m#x", "m", "x", "", 0}};
  const auto r = asr(clean, attacked, prov, "c", "c");
  EXPECT_FALSE(r.asr.present());
  EXPECT_FALSE(r.asr.reason.empty());
}

TEST(Efficiency, ThroughputAndLatency) {
  EfficiencyTrace t;
  t.wall_seconds = 2.0;
  t.latencies_ms.assign(100, 4.0);
  const auto e = efficiency(t);
  EXPECT_EQ(e.n, 100u);
  EXPECT_DOUBLE_EQ(*e.throughput_per_s.value, 50.0);
  EXPECT_DOUBLE_EQ(*e.mean_latency_ms.value, 4.0);
  const auto empty = efficiency(EfficiencyTrace{});
  EXPECT_FALSE(empty.throughput_per_s.present());
  EXPECT_EQ(empty.throughput_per_s.reason, "no samples");
  EXPECT_FALSE(empty.mean_latency_ms.present());
}

TEST(Slices, SingleGroupEqualsGlobal) {
  std::vector<Prediction> p;
  for (int i = 0; i < 20; ++i) {
    p.push_back(pred("r" + std::to_string(i), i % 2, i * 0.1, i % 3 == 0));
    p.back().source = "web";
  }
  const auto s = slice(p, SliceKey::source);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.at("web").metrics, effectiveness(p));
  EXPECT_FALSE(s.at("web").low_confidence);
}

TEST(Slices, AttackGroupsAndUnknownMetadata) {
  auto f = attack_fixture();
  std::vector<Prediction> all = f.clean;
  all.insert(all.end(), f.attacked.begin(), f.attacked.end());
  const auto by_attack = slice(all, SliceKey::attack);
  ASSERT_EQ(by_attack.size(), 2u);
  EXPECT_EQ(by_attack.at("clean").n, 10u);
  EXPECT_EQ(by_attack.at("typo").n, 9u);
  EXPECT_TRUE(by_attack.at("typo").low_confidence);
  const auto by_lang = slice(all, SliceKey::lang);
  ASSERT_EQ(by_lang.size(), 1u);
  EXPECT_EQ(by_lang.at("unknown").n, all.size());
}

TEST(Slices, PerModelRecount) {
  std::mt19937_64 rng(3);
  std::vector<Prediction> p;
  const std::vector<std::string> models = {"a", "b", "c"};
  for (int i = 0; i < 90; ++i) {
    const int y = static_cast<int>(rng() % 2);
    p.push_back(pred("r" + std::to_string(i), y, static_cast<double>(rng() % 100), static_cast<int>(rng() % 2)));
    p.back().model = models[i % 3];
  }
  const auto s = slice(p, SliceKey::model, 40);
  for (const auto& m : models) {
    std::vector<Prediction> subset;
    for (const auto& x : p) {
      if (x.model == m) subset.push_back(x);
    }
    EXPECT_EQ(s.at(m).metrics, effectiveness(subset));
    EXPECT_EQ(s.at(m).n, 30u);
    EXPECT_TRUE(s.at(m).low_confidence);
  }
  EXPECT_THROW(parse_slice_key("colour"), UsageError);
  EXPECT_EQ(parse_slice_key("model"), SliceKey::model);
}

TEST(Serialization, PredictionAndReportRoundTrip) {
  Prediction p = pred("x", 1, -0.25, 1);
  p.attack = "typo";
  p.base_id = "b";
  p.lang = "en";
  EXPECT_EQ(prediction_from_json(to_json(p)), p);

  auto f = attack_fixture();
  EfficiencyTrace trace;
  trace.wall_seconds = 1.5;
  trace.latencies_ms.assign(f.clean.size(), 2.0);
  const std::vector<SliceKey> keys = {SliceKey::attack, SliceKey::source};
  EvalReport r = evaluate_predictions("det", "fp", f.clean, trace, keys);
  r.asr = MetricValue::absent("why");
  r.gpu_peak_gib = 1.25;
  EXPECT_EQ(eval_report_from_json(to_json(r)), r);
  EXPECT_EQ(r.tpr_at_fpr.size(), std::size(kDefaultFprLevels));
  EXPECT_EQ(r.slices.size(), 2u);
}

TEST(Serialization, AbsentMetricIsNotZero) {
  const auto j = to_json(MetricValue::absent("no positives"));
  EXPECT_FALSE(j.is_number());
  EXPECT_EQ(metric_from_json(j), MetricValue::absent("no positives"));
  EXPECT_EQ(metric_from_json(to_json(MetricValue::of(0.0))), MetricValue::of(0.0));
}
