#include <gtest/gtest.h>
#include <httplib.h>

#include <map>
#include <set>
#include <thread>

#include "forgeval/builder.hpp"
#include "forgeval/errors.hpp"
#include "support.hpp"

using namespace forgeval;
using nlohmann::json;
using testing_support::slurp;
using testing_support::spit;
using testing_support::TempDir;

namespace {

void write_corpus(const std::filesystem::path& path, std::size_t n, int label = 0) {
  std::string content;
  for (std::size_t i = 0; i < n; ++i) {
    content += json{{"id", "h" + std::to_string(i)}, {"text", "human text number " + std::to_string(i)},
                    {"label", label}, {"source", "s"}}
                   .dump() +
               "\n";
  }
  spit(path, content);
}

GenerationConfig stub(const std::string& model) {
  GenerationConfig c;
  c.model = model;
  return c;
}

BuildSpec spec_for(const TempDir& dir, std::vector<GenerationConfig> generators) {
  BuildSpec spec;
  spec.human_corpus_path = (dir / "human.jsonl").string();
  spec.generators = std::move(generators);
  spec.seed = 7;
  spec.output_dir = dir / "out";
  spec.parallelism = 2;
  return spec;
}

}  // namespace

TEST(Build, OneToOneIsBalanced) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 1000);
  const BuildResult r = build(spec_for(dir, {stub("g")}));
  ASSERT_EQ(r.dataset.size(), 2000u);
  std::size_t machines = 0;
  for (const auto& rec : r.dataset) {
    machines += rec.label;
    if (rec.label == 1) {
      EXPECT_EQ(rec.model, "g");
    } else {
      EXPECT_FALSE(rec.model.has_value());
    }
    EXPECT_FALSE(rec.attack.has_value());
  }
  EXPECT_EQ(machines, 1000u);
  EXPECT_EQ(r.splits.train.size(), 1600u);
  EXPECT_EQ(r.splits.val.size(), 200u);
  EXPECT_EQ(r.splits.test.size(), 200u);
}

TEST(Build, NoGeneratorsIsUsageError) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 3);
  EXPECT_THROW(build(spec_for(dir, {})), UsageError);
}

TEST(Build, TwoGeneratorsCountByLabelAndModel) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 10);
  const BuildResult r = build(spec_for(dir, {stub("alpha"), stub("beta")}));
  std::map<std::pair<int, std::string>, int> counts;
  for (const auto& rec : r.dataset) ++counts[{rec.label, rec.model.value_or("")}];
  EXPECT_EQ(r.dataset.size(), 30u);
  EXPECT_EQ((counts[{0, ""}]), 10);
  EXPECT_EQ((counts[{1, "alpha"}]), 10);
  EXPECT_EQ((counts[{1, "beta"}]), 10);
}

TEST(Build, OneToManyKeepsSamplesPerText) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 5);
  BuildSpec spec = spec_for(dir, {stub("g")});
  spec.pairing = Pairing::one_to_many;
  spec.samples_per_text = 3;
  const BuildResult r = build(spec);
  EXPECT_EQ(r.dataset.size(), 20u);
}

TEST(Build, ReproducibleAndWritesArtifacts) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 40);
  BuildSpec spec = spec_for(dir, {stub("g")});
  const BuildResult a = build(spec);
  const std::string first = slurp(dir / "out" / "dataset.jsonl");
  spec.output_dir = dir / "again";
  const BuildResult b = build(spec);
  EXPECT_EQ(a.dataset, b.dataset);
  EXPECT_EQ(first, slurp(dir / "again" / "dataset.jsonl"));
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    EXPECT_EQ(slurp(dir / "out" / f), slurp(dir / "again" / f));
  }
  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_EQ(manifest["split_membership"].size(), 80u);
  EXPECT_EQ(manifest["dataset_fingerprint"], dataset_fingerprint(a.dataset));
  EXPECT_EQ(manifest["split_fingerprints"]["test"], dataset_fingerprint(a.splits.test));
  EXPECT_EQ(manifest["config_snapshot"]["generators"][0]["model"], "g");
}

TEST(Build, LabeledCorpusIsCoercedWithWarning) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 4, 1);
  const BuildResult r = build(spec_for(dir, {stub("g")}));
  for (const auto& rec : r.dataset) {
    if (!rec.model) {
      EXPECT_EQ(rec.label, 0);
    }
  }
  const bool warned = std::any_of(r.warnings.begin(), r.warnings.end(),
                                  [](const std::string& w) { return w.find("coerced") != std::string::npos; });
  EXPECT_TRUE(warned);
}

TEST(Build, EmptyCorpusIsDataError) {
  TempDir dir;
  spit(dir / "human.jsonl", "");
  EXPECT_THROW(build(spec_for(dir, {stub("g")})), DataError);
}

namespace {

// Fails every request whose prompt contains one of the listed ids.
class FlakyServer {
 public:
  explicit FlakyServer(std::set<std::string> failing) : failing_(std::move(failing)) {
    server_.Post("/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string prompt = json::parse(req.body)["messages"][0]["content"];
      for (const auto& f : failing_) {
        if (prompt.ends_with(" " + f)) {
          res.status = 500;
          return;
        }
      }
      res.set_content(json{{"choices", {{{"message", {{"content", "gen " + prompt}}}}}}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FlakyServer() {
    server_.stop();
    thread_.join();
  }
  GenerationConfig config() const {
    GenerationConfig c;
    c.backend = Backend::http_chat;
    c.base_url = "http://127.0.0.1:" + std::to_string(port_);
    c.model = "flaky";
    c.max_retries = 0;
    return c;
  }

 private:
  std::set<std::string> failing_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(Build, FailuresBelowCapAreSkippedAndCounted) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 40);
  FlakyServer server({"17"});
  const BuildResult r = build(spec_for(dir, {server.config()}));
  EXPECT_EQ(r.requested, 40u);
  EXPECT_EQ(r.failed, 1u);
  EXPECT_EQ(r.dataset.size(), 79u);
  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["generation_failures"], 1);
}

TEST(Build, FailuresAboveCapAbortWithFailedManifest) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 20);
  FlakyServer server({"3", "5", "8"});
  EXPECT_THROW(build(spec_for(dir, {server.config()})), BackendError);
  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["status"], "failed");
  EXPECT_EQ(manifest["generation_failures"], 3);
}

TEST(Build, ProgressIsMonotoneAndEndsAtOne) {
  TempDir dir;
  write_corpus(dir / "human.jsonl", 5);
  std::vector<double> progress;
  std::vector<std::string> logs;
  build(
      spec_for(dir, {stub("a"), stub("b")}), [&](const std::string& l) { logs.push_back(l); },
      [&](double p) { progress.push_back(p); });
  ASSERT_FALSE(progress.empty());
  EXPECT_TRUE(std::is_sorted(progress.begin(), progress.end()));
  EXPECT_EQ(progress.back(), 1.0);
  EXPECT_FALSE(logs.empty());
}
