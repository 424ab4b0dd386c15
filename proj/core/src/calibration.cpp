#include "forgeval/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/rng.hpp"
#include "forgeval/text.hpp"

namespace forgeval {
namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double clamp_open_unit(double t) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(t, lo, hi);
}

void check_data(std::span<const LabeledScore> data) {
  bool pos = false;
  bool neg = false;
  for (const auto& d : data) {
    if (!std::isfinite(d.score)) throw DataError("calibration scores must be finite");
    if (d.label == 1) {
      pos = true;
    } else if (d.label == 0) {
      neg = true;
    } else {
      throw DataError("calibration labels must be 0 or 1");
    }
  }
  if (!pos || !neg) throw DataError("calibration needs both classes in the training scores");
}

std::string train_fingerprint(std::span<const LabeledScore> data, const FitOptions& o) {
  std::string buf = o.detector_name + "\n" + text::format_double(o.l2_lambda) + "\n" + to_string(o.policy) + "\n";
  for (const auto& d : data) buf += text::format_double(d.score) + " " + std::to_string(d.label) + "\n";
  buf += "validation\n";
  for (const auto& d : o.validation) buf += text::format_double(d.score) + " " + std::to_string(d.label) + "\n";
  return sha256_hex(buf);
}

void choose_threshold(CalibrationModel& model, const FitOptions& options) {
  if (options.policy == ThresholdPolicy::fixed_half) {
    model.threshold = 0.5;
    return;
  }
  if (options.validation.empty()) throw DataError("max_f1_val needs a validation score set");
  std::vector<double> probs;
  std::vector<int> labels;
  for (const auto& v : options.validation) {
    if (!std::isfinite(v.score)) throw DataError("validation scores must be finite");
    probs.push_back(model.apply(v.score));
    labels.push_back(v.label);
  }
  model.threshold = clamp_open_unit(max_f1_threshold(probs, labels));
}

}  // namespace

const char* to_string(ThresholdPolicy policy) {
  return policy == ThresholdPolicy::fixed_half ? "fixed_half" : "max_f1_val";
}

ThresholdPolicy parse_threshold_policy(const std::string& name) {
  if (name == "fixed_half") return ThresholdPolicy::fixed_half;
  if (name == "max_f1_val") return ThresholdPolicy::max_f1_val;
  throw UsageError("unknown threshold policy '" + name + "'");
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double CalibrationModel::apply(double score) const {
  if (mapping == Mapping::identity_probability) return clamp_open_unit(score);
  return sigmoid(alpha * score + beta);
}

int CalibrationModel::decide(double score) const { return apply(score) >= threshold ? 1 : 0; }

std::string CalibrationModel::fingerprint() const { return sha256_hex(serialize()); }

std::string CalibrationModel::serialize() const {
  std::ostringstream out;
  out << "forgeval-calibration " << kFormatVersion << "\n"
      << "detector=" << detector_name << "\n"
      << "mapping=" << (mapping == Mapping::logistic ? "logistic" : "identity_probability") << "\n"
      << "alpha=" << text::format_double(alpha) << "\n"
      << "beta=" << text::format_double(beta) << "\n"
      << "threshold=" << text::format_double(threshold) << "\n"
      << "threshold_policy=" << to_string(threshold_policy) << "\n"
      << "l2_lambda=" << text::format_double(l2_lambda) << "\n"
      << "train_fingerprint=" << train_fingerprint << "\n";
  return out.str();
}

CalibrationModel CalibrationModel::parse(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line) || line.rfind("forgeval-calibration ", 0) != 0) {
    throw DataError("not a calibration model artifact");
  }
  if (line != "forgeval-calibration " + std::to_string(kFormatVersion)) {
    throw DataError("unsupported calibration model version: " + line);
  }
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed calibration line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("calibration model missing ") + key);
    return it->second;
  };
  CalibrationModel m;
  m.detector_name = need("detector");
  const std::string& mapping = need("mapping");
  if (mapping == "logistic") {
    m.mapping = Mapping::logistic;
  } else if (mapping == "identity_probability") {
    m.mapping = Mapping::identity_probability;
  } else {
    throw DataError("unknown calibration mapping '" + mapping + "'");
  }
  m.alpha = text::parse_double(need("alpha"));
  m.beta = text::parse_double(need("beta"));
  m.threshold = text::parse_double(need("threshold"));
  try {
    m.threshold_policy = parse_threshold_policy(need("threshold_policy"));
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  m.l2_lambda = text::parse_double(need("l2_lambda"));
  m.train_fingerprint = need("train_fingerprint");
  if (!(m.threshold > 0 && m.threshold < 1)) throw DataError("calibration threshold outside (0, 1)");
  return m;
}

void CalibrationModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << serialize();
}

CalibrationModel CalibrationModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read calibration model " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

namespace objective {

double value(std::span<const LabeledScore> data, double alpha, double beta, double l2_lambda) {
  double sum = 0.0;
  for (const auto& d : data) {
    const double z = alpha * d.score + beta;
    sum += d.label == 1 ? softplus(-z) : softplus(z);
  }
  return sum / static_cast<double>(data.size()) + 0.5 * l2_lambda * (alpha * alpha + beta * beta);
}

std::array<double, 2> gradient(std::span<const LabeledScore> data, double alpha, double beta, double l2_lambda) {
  double ga = 0.0;
  double gb = 0.0;
  for (const auto& d : data) {
    const double r = sigmoid(alpha * d.score + beta) - d.label;
    ga += r * d.score;
    gb += r;
  }
  const double n = static_cast<double>(data.size());
  return {ga / n + l2_lambda * alpha, gb / n + l2_lambda * beta};
}

std::array<double, 3> hessian(std::span<const LabeledScore> data, double alpha, double beta, double l2_lambda) {
  double haa = 0.0;
  double hab = 0.0;
  double hbb = 0.0;
  for (const auto& d : data) {
    const double p = sigmoid(alpha * d.score + beta);
    const double w = p * (1.0 - p);
    haa += w * d.score * d.score;
    hab += w * d.score;
    hbb += w;
  }
  const double n = static_cast<double>(data.size());
  return {haa / n + l2_lambda, hab / n, hbb / n + l2_lambda};
}

}  // namespace objective

CalibrationModel fit(std::span<const LabeledScore> input, const FitOptions& options, FitTrace* trace) {
  if (!(options.l2_lambda >= 0) || !std::isfinite(options.l2_lambda)) {
    throw UsageError("l2_lambda must be finite and >= 0");
  }
  check_data(input);

  std::vector<LabeledScore> sampled;
  std::span<const LabeledScore> data = input;
  if (options.sample_k && *options.sample_k < input.size()) {
    Rng rng(hash64("sample_k\n" + std::to_string(options.seed)));
    for (std::size_t i : rng.sample(input.size(), *options.sample_k)) sampled.push_back(input[i]);
    check_data(sampled);
    data = sampled;
  }

  const double lambda = options.l2_lambda;
  double a = 0.0;
  double b = 0.0;
  double f = objective::value(data, a, b, lambda);
  FitTrace local;
  FitTrace& tr = trace ? *trace : local;
  tr = FitTrace{};
  tr.objective.push_back(f);

  auto grad = objective::gradient(data, a, b, lambda);
  double gnorm = std::hypot(grad[0], grad[1]);
  int it = 0;
  while (gnorm > options.gradient_tolerance && it < options.max_iterations) {
    ++it;
    const auto h = objective::hessian(data, a, b, lambda);
    const double det = h[0] * h[2] - h[1] * h[1];
    double da;
    double db;
    const double scale = std::max({std::abs(h[0]), std::abs(h[2]), 1e-300});
    if (h[0] > 0 && det > 1e-14 * scale * scale) {
      da = -(h[2] * grad[0] - h[1] * grad[1]) / det;
      db = -(-h[1] * grad[0] + h[0] * grad[1]) / det;
    } else {
      da = -grad[0];
      db = -grad[1];
      ++tr.gradient_fallbacks;
    }
    const double slope = grad[0] * da + grad[1] * db;
    if (!(slope < 0)) {
      da = -grad[0];
      db = -grad[1];
      ++tr.gradient_fallbacks;
    }
    // Backtracking (Armijo) so accepted iterates never increase the objective.
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const double na = a + t * da;
      const double nb = b + t * db;
      const double nf = objective::value(data, na, nb, lambda);
      if (nf <= f + 1e-4 * t * (grad[0] * da + grad[1] * db)) {
        a = na;
        b = nb;
        f = nf;
        accepted = true;
        break;
      }
    }
    if (accepted) tr.objective.push_back(f);
    grad = objective::gradient(data, a, b, lambda);
    gnorm = std::hypot(grad[0], grad[1]);
    if (!accepted) break;
  }
  tr.iterations = it;
  tr.gradient_norm = gnorm;
  if (gnorm > options.gradient_tolerance) {
    throw DataError("calibration did not converge after " + std::to_string(it) +
                    " iterations (gradient norm " + text::format_double(gnorm) + ")");
  }

  CalibrationModel model;
  model.alpha = a;
  model.beta = b;
  model.l2_lambda = lambda;
  model.threshold_policy = options.policy;
  model.detector_name = options.detector_name;
  model.mapping = Mapping::logistic;
  model.train_fingerprint = train_fingerprint(data, options);
  choose_threshold(model, options);
  return model;
}

CalibrationModel identity_calibration(const std::string& detector_name, const FitOptions& options) {
  CalibrationModel model;
  model.mapping = Mapping::identity_probability;
  model.alpha = 1.0;
  model.beta = 0.0;
  model.l2_lambda = 0.0;
  model.threshold_policy = options.policy;
  model.detector_name = detector_name;
  FitOptions o = options;
  o.detector_name = detector_name;
  model.train_fingerprint = train_fingerprint({}, o);
  choose_threshold(model, options);
  return model;
}

double max_f1_threshold(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size() || probabilities.empty()) {
    throw DataError("max_f1_threshold needs aligned, non-empty inputs");
  }
  std::vector<std::size_t> order(probabilities.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return probabilities[x] > probabilities[y]; });
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw DataError("max_f1_val needs positive validation samples");

  std::size_t tp = 0;
  std::size_t fp = 0;
  double best_f1 = -1.0;
  double best_t = 0.5;
  // Sweeping from the highest threshold down; ">=" keeps the lowest tied threshold.
  for (std::size_t i = 0; i < order.size();) {
    const double t = probabilities[order[i]];
    while (i < order.size() && probabilities[order[i]] == t) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const std::size_t fn = positives - tp;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    if (f1 >= best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace forgeval
