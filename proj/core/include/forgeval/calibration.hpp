#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace forgeval {

enum class ThresholdPolicy { fixed_half, max_f1_val };
const char* to_string(ThresholdPolicy policy);
ThresholdPolicy parse_threshold_policy(const std::string& name);

// logistic: p = sigmoid(alpha * s + beta).
// identity_probability: the score already is a probability and passes through.
enum class Mapping { logistic, identity_probability };

struct LabeledScore {
  double score = 0.0;
  int label = 0;
};

// Overflow-safe logistic function.
double sigmoid(double z);

class CalibrationModel {
 public:
  static constexpr int kFormatVersion = 1;

  double alpha = 1.0;
  double beta = 0.0;
  double threshold = 0.5;
  ThresholdPolicy threshold_policy = ThresholdPolicy::fixed_half;
  double l2_lambda = 1e-6;
  std::string detector_name;
  std::string train_fingerprint;
  Mapping mapping = Mapping::logistic;

  double apply(double score) const;
  // 1 iff apply(score) >= threshold.
  int decide(double score) const;

  // Hash of the serialized artifact. Clean and attacked evaluations must agree on it.
  std::string fingerprint() const;

  std::string serialize() const;
  static CalibrationModel parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static CalibrationModel load(const std::filesystem::path& path);

  bool operator==(const CalibrationModel&) const = default;
};

// Mean binary cross-entropy of sigmoid(alpha*s + beta) plus
// l2_lambda * (alpha^2 + beta^2) / 2.
namespace objective {
double value(std::span<const LabeledScore> data, double alpha, double beta, double l2_lambda);
std::array<double, 2> gradient(std::span<const LabeledScore> data, double alpha, double beta, double l2_lambda);
std::array<double, 3> hessian(std::span<const LabeledScore> data, double alpha, double beta,
                              double l2_lambda);  // {h_aa, h_ab, h_bb}
}  // namespace objective

struct FitOptions {
  double l2_lambda = 1e-6;
  ThresholdPolicy policy = ThresholdPolicy::fixed_half;
  // Held-out scores for max_f1_val.
  std::vector<LabeledScore> validation;
  // Subsample the training scores to this many (seeded); nullopt uses all.
  std::optional<std::size_t> sample_k;
  std::uint64_t seed = 0;
  int max_iterations = 1000;
  double gradient_tolerance = 1e-8;
  std::string detector_name;
};

struct FitTrace {
  std::vector<double> objective;  // per accepted iterate, starting at (0, 0)
  double gradient_norm = 0.0;
  int iterations = 0;
  int gradient_fallbacks = 0;
};

// Throws DataError on single-class or non-finite input, or when the gradient
// norm is still above tolerance at the iteration cap (message carries the norm).
CalibrationModel fit(std::span<const LabeledScore> data, const FitOptions& options = {},
                     FitTrace* trace = nullptr);

// Pass-through model for detectors that already emit probabilities.
CalibrationModel identity_calibration(const std::string& detector_name, const FitOptions& options = {});

// Argmax-F1 threshold over the distinct probabilities (predict 1 iff p >= t);
// ties resolve to the lowest threshold. Throws DataError without positives.
double max_f1_threshold(std::span<const double> probabilities, std::span<const int> labels);

}  // namespace forgeval
