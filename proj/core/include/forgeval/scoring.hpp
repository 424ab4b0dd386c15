#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace forgeval {

// Per-position statistics of a predictive distribution.
struct TokenScore {
  std::string token;
  double logprob = 0.0;  // natural log, <= 0
  std::uint64_t rank = 1;  // 1 = most probable (ties broken by vocabulary order)
  double entropy = 0.0;  // nats, in [0, ln |V|]

  bool operator==(const TokenScore&) const = default;
};

nlohmann::json to_json(const TokenScore& score);
TokenScore token_score_from_json(const nlohmann::json& object);

// Source of token statistics consumed by the metric detectors. Implementations
// must be safe to call concurrently.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual std::vector<TokenScore> score_text(std::string_view text) const = 0;
  virtual std::string fingerprint() const = 0;
};

// Character-level n-gram model with add-alpha smoothing. The prediction
// vocabulary is the sorted training characters followed by BOS, EOS and,
// when reserved, UNK; every symbol gets probability mass.
class NGramLM final : public TokenScorer {
 public:
  static constexpr int kFormatVersion = 1;

  // Untrained model over an explicit character set.
  NGramLM(int order, double alpha, std::vector<char32_t> characters, bool reserve_unknown = true);

  // Throws DataError on an empty corpus, UsageError on order < 1 or alpha <= 0.
  static NGramLM train(std::span<const std::string> corpus, int order = 3, double alpha = 0.5,
                       bool reserve_unknown = true);

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  bool reserves_unknown() const { return reserve_unknown_; }
  std::size_t vocabulary_size() const { return characters_.size() + (reserve_unknown_ ? 3 : 2); }
  const std::vector<char32_t>& characters() const { return characters_; }

  std::size_t bos_id() const { return characters_.size(); }
  std::size_t eos_id() const { return characters_.size() + 1; }
  std::optional<std::size_t> unk_id() const;
  std::string symbol(std::size_t id) const;

  // Character ids; out-of-vocabulary characters map to UNK, or throw DataError
  // when UNK is not reserved.
  std::vector<std::size_t> encode(std::u32string_view text) const;

  // Count of `token` after the last (order-1) entries of `context`
  // (BOS-padded on the left).
  std::uint64_t count(std::span<const std::size_t> context, std::size_t token) const;
  std::uint64_t context_total(std::span<const std::size_t> context) const;
  // Full smoothed conditional distribution over the vocabulary.
  std::vector<double> distribution(std::span<const std::size_t> context) const;

  std::vector<TokenScore> score_text(std::string_view text) const override;
  std::string fingerprint() const override;

  nlohmann::json to_json() const;
  static NGramLM from_json(const nlohmann::json& object);
  void save(const std::filesystem::path& path) const;
  static NGramLM load(const std::filesystem::path& path);

  bool operator==(const NGramLM& other) const {
    return order_ == other.order_ && alpha_ == other.alpha_ && reserve_unknown_ == other.reserve_unknown_ &&
           characters_ == other.characters_ && table_ == other.table_;
  }

 private:
  struct ContextCounts {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;
    bool operator==(const ContextCounts&) const = default;
  };

  std::u32string context_key(std::span<const std::size_t> context) const;
  const ContextCounts* find(std::span<const std::size_t> context) const;

  int order_;
  double alpha_;
  bool reserve_unknown_;
  std::vector<char32_t> characters_;
  std::map<std::u32string, ContextCounts> table_;
};

}  // namespace forgeval
