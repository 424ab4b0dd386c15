#include <gtest/gtest.h>

#include <random>
#include <set>

#include "forgeval/errors.hpp"
#include "forgeval/schema.hpp"
#include "support.hpp"

using namespace forgeval;
using testing_support::make_record;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;
using nlohmann::json;

namespace {

Record random_record(std::mt19937_64& rng, std::size_t i) {
  static const std::vector<std::string> pieces = {"a", " ", "\xC3\xA9", "\"", "\\", ",", "\xF0\x9F\x98\x80", "x\ny", "7"};
  Record r;
  r.id = "r" + std::to_string(i);
  for (int k = 0; k < 1 + static_cast<int>(rng() % 12); ++k) r.text += pieces[rng() % pieces.size()];
  r.text = "t" + r.text + "t";
  r.label = static_cast<int>(rng() % 2);
  if (rng() % 2) r.source = "src" + std::to_string(rng() % 3);
  if (rng() % 2) r.lang = "en";
  if (rng() % 2) r.model = "m,\"q\"";
  if (r.label == 1 && rng() % 3 == 0) r.attack = "homoglyph";
  return r;
}

std::vector<Record> balanced(std::size_t n) {
  std::vector<Record> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_record("id" + std::to_string(i), "text", i % 2));
  return out;
}

}  // namespace

TEST(Load, Hc3ExpandsAnswers) {
  TempDir dir;
  spit(dir / "qa.json", R"({"human_answers":["a"],"chatgpt_answers":["b","c"],"source":"s"})");
  const LoadResult r = load_dataset(dir.path());
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].label, 0);
  EXPECT_EQ(r.records[1].label, 1);
  EXPECT_EQ(r.records[2].label, 1);
  for (const auto& rec : r.records) EXPECT_EQ(rec.source, "s");
  EXPECT_EQ(r.records[1].text, "b");
}

TEST(Load, EmptyDirectory) {
  TempDir dir;
  const LoadResult r = load_dataset(dir.path());
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Load, CsvRoundTripsThroughStandardized) {
  TempDir dir;
  spit(dir / "in.csv", "text,label\nfirst,0\n\"with, comma\",1\n\"quote \"\"x\"\"\",0\nfour,1\nfive,0\nsix,1\n");
  const LoadResult loaded = load_dataset(dir / "in.csv");
  ASSERT_EQ(loaded.records.size(), 6u);
  EXPECT_EQ(loaded.records[1].text, "with, comma");
  EXPECT_EQ(loaded.records[2].text, "quote \"x\"");
  save_standardized(loaded.records, DatasetManifest{}, dir / "out" / "data.jsonl");
  const LoadResult again = load_dataset(dir / "out" / "data.jsonl");
  EXPECT_EQ(again.records, loaded.records);
}

TEST(Load, CsvKeepsUnknownColumnNames) {
  TempDir dir;
  spit(dir / "in.csv", "text,label,extra,prompt_id\nx,1,a,b\n");
  const LoadResult loaded = load_dataset(dir / "in.csv");
  EXPECT_EQ(loaded.unknown_columns, (std::vector<std::string>{"extra", "prompt_id"}));
}

TEST(Load, CsvWithoutLabelColumnIsDataError) {
  TempDir dir;
  spit(dir / "in.csv", "text\nx\n");
  EXPECT_THROW(load_dataset(dir / "in.csv"), DataError);
}

TEST(Load, PairedFormats) {
  TempDir dir;
  spit(dir / "a.jsonl",
       R"({"original":"human one","sample":"machine one"})"
       "\n"
       R"({"original":"human two","sampled":["m2a","m2b"]})"
       "\n"
       R"({"original":"human three","rewritten":"m3"})"
       "\n");
  const LoadResult r = load_dataset(dir / "a.jsonl", Format::auto_detect);
  ASSERT_EQ(r.records.size(), 7u);
  std::size_t machines = 0;
  for (const auto& rec : r.records) machines += rec.label;
  EXPECT_EQ(machines, 4u);
}

TEST(Load, AttackPairedCarriesAttackName) {
  TempDir dir;
  spit(dir / "a.json", R"([{"meta":{"base_id":"b1","active_attack":"typo_insert"},"sample":["v1","v2"]}])");
  const LoadResult r = load_dataset(dir / "a.json");
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].id, "b1#typo_insert");
  EXPECT_EQ(r.records[1].id, "b1#typo_insert#1");
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.label, 1);
    EXPECT_EQ(rec.attack, "typo_insert");
  }
}

TEST(Load, MissingTextIsSkippedWithWarning) {
  TempDir dir;
  spit(dir / "a.jsonl", "{\"text\":\"ok\",\"label\":0}\n{\"label\":1}\n{\"text\":\"  \",\"label\":1}\n");
  const LoadResult r = load_dataset(dir / "a.jsonl");
  EXPECT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.warnings.size(), 1u);
  std::size_t dropped = 0;
  EXPECT_EQ(normalize(r.records, &dropped).size(), 1u);
  EXPECT_EQ(dropped, 1u);
}

TEST(Load, HumanRecordWithAttackIsRejected) {
  TempDir dir;
  spit(dir / "a.jsonl", R"({"id":"x","text":"t","label":0,"attack":"homoglyph","source":null,"lang":null,"model":null})"
                        "\n");
  const LoadResult r = load_dataset(dir / "a.jsonl");
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.skipped, 1u);
}

TEST(Load, SynthesizedIdsAreStable) {
  TempDir dir;
  spit(dir / "a.jsonl", "{\"text\":\"one\",\"label\":0}\n{\"text\":\"two\",\"label\":1}\n");
  const auto a = load_dataset(dir / "a.jsonl").records;
  const auto b = load_dataset(dir / "a.jsonl").records;
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a[0].id, a[1].id);
}

TEST(Load, DirectoryRecursesInPathOrder) {
  TempDir dir;
  spit(dir / "b" / "x.jsonl", "{\"id\":\"b\",\"text\":\"b\",\"label\":0}\n");
  spit(dir / "a.jsonl", "{\"id\":\"a\",\"text\":\"a\",\"label\":1}\n");
  spit(dir / "notes.txt", "ignored");
  const auto r = load_dataset(dir.path());
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].id, "a");
  EXPECT_EQ(r.records[1].id, "b");
}

TEST(Normalize, TrimsAndIsIdempotent) {
  std::vector<Record> in = {make_record("a", "  hi\n", 0), make_record("b", " \t ", 1)};
  in[0].source = "  ";
  std::size_t dropped = 0;
  const auto once = normalize(in, &dropped);
  ASSERT_EQ(once.size(), 1u);
  EXPECT_EQ(dropped, 1u);
  EXPECT_EQ(once[0].text, "hi");
  EXPECT_FALSE(once[0].source.has_value());
  EXPECT_EQ(normalize(once), once);
}

TEST(Normalize, EveryRecordCarriesSevenFields) {
  TempDir dir;
  spit(dir / "mixed.jsonl",
       "{\"text\":\"a\",\"label\":0}\n"
       "{\"original\":\"b\",\"sample\":\"c\"}\n"
       "{\"human_answers\":[\"d\"],\"chatgpt_answers\":[\"e\",\"f\"]}\n"
       "{\"id\":\"g\",\"text\":\"g\",\"label\":1,\"attack\":null,\"model\":\"m\"}\n"
       "{\"text\":\"h\",\"label\":\"1\",\"lang\":\"en\"}\n"
       "{\"meta\":{\"base_id\":\"i\"},\"sample\":[\"i1\",\"i2\"]}\n");
  const auto records = normalize(load_dataset(dir / "mixed.jsonl").records);
  ASSERT_EQ(records.size(), 10u);
  for (const auto& r : records) {
    const auto j = to_json(r);
    EXPECT_EQ(j.size(), 7u);
    for (const char* f : {"id", "text", "label", "source", "lang", "model", "attack"}) EXPECT_TRUE(j.contains(f));
  }
}

TEST(Split, PaperRatioSizes) {
  const auto r = split(balanced(2000), SplitRatio::parse("8:1:1"), 1);
  EXPECT_EQ(r.train.size(), 1600u);
  EXPECT_EQ(r.val.size(), 200u);
  EXPECT_EQ(r.test.size(), 200u);
}

TEST(Split, StratifiedWithinOne) {
  const auto r = split(balanced(1000), SplitRatio::parse("8:1:1"), 7);
  for (const auto* part : {&r.train, &r.val, &r.test}) {
    long machines = 0;
    for (const auto& rec : *part) machines += rec.label;
    const long humans = static_cast<long>(part->size()) - machines;
    EXPECT_LE(std::abs(machines - humans), 1);
  }
}

TEST(Split, DeterministicDisjointExhaustive) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<Record> records;
    for (std::size_t i = 0; i < n; ++i) records.push_back(make_record("x" + std::to_string(rng()), "t", rng() % 2));
    std::sort(records.begin(), records.end(), [](const Record& a, const Record& b) { return a.id < b.id; });
    records.erase(std::unique(records.begin(), records.end(),
                              [](const Record& a, const Record& b) { return a.id == b.id; }),
                  records.end());
    SplitRatio ratio{static_cast<double>(rng() % 10), static_cast<double>(rng() % 5), static_cast<double>(1 + rng() % 5)};
    const std::uint64_t seed = rng();
    const auto a = split(records, ratio, seed);
    const auto b = split(records, ratio, seed);
    EXPECT_EQ(a.manifest.split_membership, b.manifest.split_membership);
    EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), records.size());
    EXPECT_EQ(a.manifest.split_membership.size(), records.size());
    const SplitRatio norm = ratio.normalized();
    const double sizes[] = {static_cast<double>(a.train.size()), static_cast<double>(a.val.size()),
                            static_cast<double>(a.test.size())};
    const double fr[] = {norm.train, norm.val, norm.test};
    for (int s = 0; s < 3; ++s) EXPECT_LE(std::fabs(sizes[s] - fr[s] * static_cast<double>(records.size())), 1.0);
    std::set<std::string> seen;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
      for (const auto& r : *part) EXPECT_TRUE(seen.insert(r.id).second);
    }
  }
}

TEST(Split, EmptySplitWarnsRatherThanFails) {
  const auto r = split(balanced(4), SplitRatio::parse("8:1:1"), 0);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_EQ(r.train.size() + r.val.size() + r.test.size(), 4u);
}

TEST(Split, RejectsEmptyInputAndDuplicates) {
  EXPECT_THROW(split({}, SplitRatio{}, 0), UsageError);
  const std::vector<Record> dup = {make_record("a", "x", 0), make_record("a", "y", 1)};
  EXPECT_THROW(split(dup, SplitRatio{}, 0), UsageError);
}

TEST(SplitRatioTest, Parse) {
  EXPECT_EQ(SplitRatio::parse("8:1:1").normalized(), (SplitRatio{0.8, 0.1, 0.1}));
  EXPECT_EQ(SplitRatio::parse("0.8,0.1,0.1").normalized(), (SplitRatio{0.8, 0.1, 0.1}));
  EXPECT_THROW(SplitRatio::parse("1:-1:1").normalized(), UsageError);
  EXPECT_THROW(SplitRatio::parse("0:0:0").normalized(), UsageError);
}

TEST(Standardized, RandomRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Record> records;
    for (std::size_t i = 0; i < rng() % 40; ++i) records.push_back(random_record(rng, i));
    const auto path = dir / ("d" + std::to_string(trial) + ".jsonl");
    save_standardized(records, DatasetManifest{}, path);
    EXPECT_EQ(load_dataset(path, Format::standardized).records, records);
  }
}

TEST(Standardized, EmptyListAndLineCount) {
  TempDir dir;
  save_standardized({}, DatasetManifest{}, dir / "empty.jsonl");
  EXPECT_EQ(slurp(dir / "empty.jsonl"), "");
  EXPECT_TRUE(json::parse(slurp(dir / "empty.jsonl.manifest.json")).is_object());

  const std::vector<Record> three = {make_record("a", "x", 0), make_record("b", "y", 1), make_record("c", "z", 0)};
  save_standardized(three, DatasetManifest{}, dir / "three.jsonl");
  std::istringstream in(slurp(dir / "three.jsonl"));
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) EXPECT_NO_THROW(record_from_json(json::parse(line)));
  EXPECT_EQ(lines, 3u);
}

TEST(Standardized, ManifestRoundTrip) {
  const auto r = split(balanced(20), SplitRatio::parse("8:1:1"), 5);
  DatasetManifest m = r.manifest;
  m.source_paths = {"a.jsonl"};
  m.config_snapshot = {{"k", 1}};
  EXPECT_EQ(manifest_from_json(to_json(m)), m);
}

TEST(RecordJson, RejectsAttackOnHuman) {
  json j = to_json(make_record("a", "x", 0));
  j["attack"] = "homoglyph";
  EXPECT_THROW(record_from_json(j), DataError);
  j["label"] = 2;
  j["attack"] = nullptr;
  EXPECT_THROW(record_from_json(j), DataError);
}
