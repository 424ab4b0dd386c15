#include "support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fs = std::filesystem;

namespace testing_support {

TempDir::TempDir() {
  std::string templ = (fs::temp_directory_path() / "forgeval-test-XXXXXX").string();
  if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
  path_ = templ;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path source_dir() { return FORGEVAL_SOURCE_DIR; }
fs::path fixture_dir() { return source_dir() / "tests" / "data" / "fixture"; }
fs::path cli_binary() { return FORGEVAL_CLI_PATH; }
fs::path toy_detector_binary() { return FORGEVAL_TOY_DETECTOR_PATH; }

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

namespace {

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

CommandResult run_command(const std::vector<std::string>& argv, const fs::path& cwd, const std::string& stdin_data) {
  TempDir io;
  spit(io / "in", stdin_data);
  std::string cmd = "cd " + quote(cwd.string()) + " &&";
  for (const auto& a : argv) cmd += " " + quote(a);
  cmd += " <" + quote((io / "in").string()) + " >" + quote((io / "out").string()) + " 2>" +
         quote((io / "err").string());
  const int status = std::system(cmd.c_str());
  CommandResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(io / "out");
  r.err = slurp(io / "err");
  return r;
}

namespace oracle {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  // Twice the concordance count keeps every term an integer.
  std::uint64_t twice = 0;
  std::uint64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) twice += 2;
      if (scores[i] == scores[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
}

double aupr(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double area = 0.0;
  double prev_recall = 0.0;
  for (double t : thresholds) {
    std::size_t tp = 0;
    std::size_t predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        ++predicted;
        tp += labels[i] == 1 ? 1 : 0;
      }
    }
    const double recall = static_cast<double>(tp) / positives;
    area += (recall - prev_recall) * (static_cast<double>(tp) / static_cast<double>(predicted));
    prev_recall = recall;
  }
  return area;
}

double tpr_at_fpr(const std::vector<double>& scores, const std::vector<int>& labels, double alpha) {
  std::vector<double> thresholds = scores;
  thresholds.push_back(std::numeric_limits<double>::infinity());
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  const auto neg = std::count(labels.begin(), labels.end(), 0);
  double best = 0.0;
  for (double t : thresholds) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) (labels[i] == 1 ? tp : fp) += 1;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    if (fpr <= alpha) best = std::max(best, tpr);
  }
  return best;
}

std::optional<double> f1(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    tp += y_true[i] == 1 && y_pred[i] == 1;
    fp += y_true[i] == 0 && y_pred[i] == 1;
    fn += y_true[i] == 1 && y_pred[i] == 0;
  }
  if (tp == 0 && fp == 0 && fn == 0) return std::nullopt;
  if (tp == 0) return 0.0;
  const double p = tp / (tp + fp);
  const double r = tp / (tp + fn);
  return 2 * p * r / (p + r);
}

AsrCount asr(const std::vector<forgeval::Prediction>& clean, const std::vector<forgeval::Prediction>& attacked,
             const std::vector<forgeval::AttackProvenance>& provenance) {
  AsrCount c;
  for (const auto& a : attacked) {
    for (const auto& p : provenance) {
      if (p.id != a.record_id) continue;
      for (const auto& b : clean) {
        if (b.record_id != p.base_id) continue;
        if (b.y_pred == 1) {
          ++c.eligible;
          if (a.y_pred == 0) ++c.flipped;
        }
      }
    }
  }
  return c;
}

long double objective(const std::vector<forgeval::LabeledScore>& data, long double a, long double b,
                      long double lambda) {
  long double sum = 0;
  for (const auto& d : data) {
    const long double z = a * d.score + b;
    // -log sigmoid(z) for y=1, -log(1-sigmoid(z)) = -log sigmoid(-z) for y=0
    const long double m = d.label == 1 ? -z : z;
    sum += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
  }
  return sum / static_cast<long double>(data.size()) + lambda * (a * a + b * b) / 2;
}

namespace {

template <typename F>
long double golden(F f, long double lo, long double hi, long double* arg) {
  const long double g = (std::sqrt(5.0L) - 1) / 2;
  long double x1 = hi - g * (hi - lo);
  long double x2 = lo + g * (hi - lo);
  long double f1 = f(x1);
  long double f2 = f(x2);
  for (int i = 0; i < 200 && hi - lo > 1e-13L; ++i) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - g * (hi - lo);
      f1 = f(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + g * (hi - lo);
      f2 = f(x2);
    }
  }
  *arg = f1 <= f2 ? x1 : x2;
  return std::min(f1, f2);
}

}  // namespace

std::array<long double, 3> minimize(const std::vector<forgeval::LabeledScore>& data, long double lambda) {
  // The minimizer satisfies lambda*(a^2+b^2)/2 <= f(0,0) = ln 2.
  const long double bound = std::sqrt(2 * std::log(2.0L) / lambda) + 1;
  long double best_b = 0;
  const auto profile = [&](long double a) {
    long double b;
    const long double v = golden([&](long double bb) { return objective(data, a, bb, lambda); }, -bound, bound, &b);
    best_b = b;
    return v;
  };
  long double a;
  golden(profile, -bound, bound, &a);
  profile(a);
  return {a, best_b, objective(data, a, best_b, lambda)};
}

}  // namespace oracle

std::string sample_text(const forgeval::NGramLM& lm, std::mt19937_64& rng, std::size_t max_chars) {
  std::vector<std::size_t> context;
  std::u32string out;
  const auto unk = lm.unk_id();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (out.size() < max_chars) {
    const std::vector<double> dist = lm.distribution(context);
    double total = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (i != lm.bos_id() && (!unk || i != *unk)) total += dist[i];
    }
    double u = unit(rng) * total;
    std::size_t pick = lm.eos_id();
    for (std::size_t i = 0; i < dist.size(); ++i) {
      if (i == lm.bos_id() || (unk && i == *unk)) continue;
      if (u < dist[i]) {
        pick = i;
        break;
      }
      u -= dist[i];
    }
    if (pick == lm.eos_id()) break;
    out += lm.characters()[pick];
    context.push_back(pick);
  }
  std::string utf8;
  for (char32_t c : out) {
    if (c < 0x80) {
      utf8 += static_cast<char>(c);
    } else if (c < 0x800) {
      utf8 += static_cast<char>(0xC0 | (c >> 6));
      utf8 += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      utf8 += static_cast<char>(0xE0 | (c >> 12));
      utf8 += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      utf8 += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return utf8;
}

forgeval::Record make_record(const std::string& id, const std::string& text, int label) {
  forgeval::Record r;
  r.id = id;
  r.text = text;
  r.label = label;
  return r;
}

std::string mask_volatile(const std::string& content) {
  static const std::regex created(R"re("created_at": ?"[^"]*")re");
  static const std::regex timing(
      R"re("(latency_ms|wall_seconds|throughput_per_s|mean_latency_ms|submitted_at)": ?(-?[0-9.eE+-]+|"[^"]*"))re");
  std::string out = std::regex_replace(content, created, "\"created_at\":\"<masked>\"");
  return std::regex_replace(out, timing, "\"$1\":\"<masked>\"");
}

}  // namespace testing_support
