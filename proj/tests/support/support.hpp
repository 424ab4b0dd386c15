#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeval/calibration.hpp"
#include "forgeval/metrics.hpp"
#include "forgeval/schema.hpp"
#include "forgeval/scoring.hpp"

namespace testing_support {

// Directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::filesystem::path source_dir();  // repository root
std::filesystem::path fixture_dir();  // tests/data/fixture
std::filesystem::path cli_binary();
std::filesystem::path toy_detector_binary();

std::string slurp(const std::filesystem::path& path);
void spit(const std::filesystem::path& path, const std::string& content);

struct CommandResult {
  int exit_code = 0;
  std::string out;
  std::string err;
};
// Runs argv[0] with the given arguments in `cwd`, capturing stdout and stderr.
CommandResult run_command(const std::vector<std::string>& argv, const std::filesystem::path& cwd,
                          const std::string& stdin_data = "");

// Brute-force reference metrics, written independently of the library.
namespace oracle {
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);
double aupr(const std::vector<double>& scores, const std::vector<int>& labels);
double tpr_at_fpr(const std::vector<double>& scores, const std::vector<int>& labels, double alpha);
std::optional<double> f1(const std::vector<int>& y_true, const std::vector<int>& y_pred);

struct AsrCount {
  std::size_t eligible = 0;
  std::size_t flipped = 0;
};
AsrCount asr(const std::vector<forgeval::Prediction>& clean, const std::vector<forgeval::Prediction>& attacked,
             const std::vector<forgeval::AttackProvenance>& provenance);

// Regularized logistic loss in long double.
long double objective(const std::vector<forgeval::LabeledScore>& data, long double a, long double b,
                      long double lambda);
// Minimum of the objective by nested golden-section search.
// Returns {alpha, beta, value}.
std::array<long double, 3> minimize(const std::vector<forgeval::LabeledScore>& data, long double lambda);
}  // namespace oracle

// Draws a text from the LM's conditional distributions, stopping at EOS or
// max_chars. BOS and UNK draws are rejected.
std::string sample_text(const forgeval::NGramLM& lm, std::mt19937_64& rng, std::size_t max_chars);

forgeval::Record make_record(const std::string& id, const std::string& text, int label);

// Replaces created_at and timing values with placeholders so runs compare
// byte-for-byte.
std::string mask_volatile(const std::string& content);

}  // namespace testing_support
