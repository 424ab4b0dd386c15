#include "forgeval/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/text.hpp"

using nlohmann::json;

namespace forgeval {

json to_json(const TokenScore& s) {
  return {{"token", s.token}, {"logprob", s.logprob}, {"rank", s.rank}, {"entropy", s.entropy}};
}

TokenScore token_score_from_json(const json& j) {
  try {
    TokenScore s;
    s.token = j.at("token").get<std::string>();
    s.logprob = j.at("logprob").get<double>();
    s.entropy = j.at("entropy").get<double>();
    const auto& rank = j.at("rank");
    if (!rank.is_number_integer() || rank.get<long long>() < 1) throw ProtocolError("rank must be a positive integer");
    s.rank = rank.get<std::uint64_t>();
    if (!std::isfinite(s.logprob) || s.logprob > 0 || !std::isfinite(s.entropy) || s.entropy < 0) {
      throw ProtocolError("token score out of range");
    }
    return s;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed token score: ") + e.what());
  }
}

NGramLM::NGramLM(int order, double alpha, std::vector<char32_t> characters, bool reserve_unknown)
    : order_(order), alpha_(alpha), reserve_unknown_(reserve_unknown), characters_(std::move(characters)) {
  if (order_ < 1) throw UsageError("order: must be >= 1");
  if (!(alpha_ > 0) || !std::isfinite(alpha_)) throw UsageError("smoothing_alpha: must be > 0");
  std::sort(characters_.begin(), characters_.end());
  characters_.erase(std::unique(characters_.begin(), characters_.end()), characters_.end());
}

NGramLM NGramLM::train(std::span<const std::string> corpus, int order, double alpha,
                       bool reserve_unknown) {
  if (corpus.empty()) throw DataError("cannot train a language model on an empty corpus");
  std::vector<std::u32string> texts;
  texts.reserve(corpus.size());
  std::set<char32_t> chars;
  for (const auto& t : corpus) {
    texts.push_back(text::to_u32(t));
    chars.insert(texts.back().begin(), texts.back().end());
  }
  NGramLM lm(order, alpha, std::vector<char32_t>(chars.begin(), chars.end()), reserve_unknown);
  const std::size_t v = lm.vocabulary_size();
  const std::size_t ctx_len = static_cast<std::size_t>(order - 1);
  for (const auto& t : texts) {
    std::vector<std::size_t> seq(ctx_len, lm.bos_id());
    for (std::size_t id : lm.encode(t)) seq.push_back(id);
    seq.push_back(lm.eos_id());
    for (std::size_t i = ctx_len; i < seq.size(); ++i) {
      const std::span<const std::size_t> ctx(seq.data() + i - ctx_len, ctx_len);
      auto& cell = lm.table_[lm.context_key(ctx)];
      if (cell.counts.empty()) cell.counts.assign(v, 0);
      ++cell.counts[seq[i]];
      ++cell.total;
    }
  }
  return lm;
}

std::optional<std::size_t> NGramLM::unk_id() const {
  if (!reserve_unknown_) return std::nullopt;
  return characters_.size() + 2;
}

std::string NGramLM::symbol(std::size_t id) const {
  if (id < characters_.size()) return text::to_utf8(std::u32string(1, characters_[id]));
  if (id == bos_id()) return "<s>";
  if (id == eos_id()) return "</s>";
  return "<unk>";
}

std::vector<std::size_t> NGramLM::encode(std::u32string_view t) const {
  std::vector<std::size_t> ids;
  ids.reserve(t.size());
  for (char32_t c : t) {
    const auto it = std::lower_bound(characters_.begin(), characters_.end(), c);
    if (it != characters_.end() && *it == c) {
      ids.push_back(static_cast<std::size_t>(it - characters_.begin()));
    } else if (reserve_unknown_) {
      ids.push_back(*unk_id());
    } else {
      throw DataError("character U+" + std::to_string(static_cast<unsigned long>(c)) +
                      " is outside the model vocabulary");
    }
  }
  return ids;
}

std::u32string NGramLM::context_key(std::span<const std::size_t> context) const {
  const std::size_t ctx_len = static_cast<std::size_t>(order_ - 1);
  std::u32string key(ctx_len, static_cast<char32_t>(bos_id()));
  const std::size_t take = std::min(ctx_len, context.size());
  for (std::size_t i = 0; i < take; ++i) {
    key[ctx_len - take + i] = static_cast<char32_t>(context[context.size() - take + i]);
  }
  return key;
}

const NGramLM::ContextCounts* NGramLM::find(std::span<const std::size_t> context) const {
  const auto it = table_.find(context_key(context));
  return it == table_.end() ? nullptr : &it->second;
}

std::uint64_t NGramLM::count(std::span<const std::size_t> context, std::size_t token) const {
  const auto* cell = find(context);
  return cell ? cell->counts.at(token) : 0;
}

std::uint64_t NGramLM::context_total(std::span<const std::size_t> context) const {
  const auto* cell = find(context);
  return cell ? cell->total : 0;
}

std::vector<double> NGramLM::distribution(std::span<const std::size_t> context) const {
  const std::size_t v = vocabulary_size();
  const auto* cell = find(context);
  const double denom = (cell ? static_cast<double>(cell->total) : 0.0) + alpha_ * static_cast<double>(v);
  std::vector<double> p(v);
  for (std::size_t i = 0; i < v; ++i) {
    p[i] = ((cell ? static_cast<double>(cell->counts[i]) : 0.0) + alpha_) / denom;
  }
  return p;
}

std::vector<TokenScore> NGramLM::score_text(std::string_view utf8) const {
  const std::u32string u = text::to_u32(utf8);
  if (u.empty()) throw DataError("cannot score empty text");
  const std::vector<std::size_t> ids = encode(u);
  const std::size_t v = vocabulary_size();
  const double log_v = std::log(static_cast<double>(v));
  const std::size_t ctx_len = static_cast<std::size_t>(order_ - 1);

  std::vector<std::size_t> seq(ctx_len, bos_id());
  seq.insert(seq.end(), ids.begin(), ids.end());

  std::vector<TokenScore> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::span<const std::size_t> ctx(seq.data() + i, ctx_len);
    const auto* cell = find(ctx);
    const double total = cell ? static_cast<double>(cell->total) : 0.0;
    const double denom = total + alpha_ * static_cast<double>(v);
    const std::size_t realized = ids[i];
    auto c = [&](std::size_t k) -> std::uint64_t { return cell ? cell->counts[k] : 0; };

    const std::uint64_t c_real = c(realized);
    std::uint64_t rank = 1;
    double entropy = 0.0;
    for (std::size_t k = 0; k < v; ++k) {
      const std::uint64_t ck = c(k);
      if (ck > c_real || (ck == c_real && k < realized)) ++rank;
      const double p = (static_cast<double>(ck) + alpha_) / denom;
      entropy -= p * std::log(p);
    }
    TokenScore s;
    s.token = symbol(realized);
    s.logprob = std::log((static_cast<double>(c_real) + alpha_) / denom);
    s.rank = rank;
    s.entropy = std::clamp(entropy, 0.0, log_v);
    out.push_back(std::move(s));
  }
  return out;
}

json NGramLM::to_json() const {
  json j;
  j["format"] = "forgeval-ngram";
  j["version"] = kFormatVersion;
  j["order"] = order_;
  j["alpha"] = alpha_;
  j["reserve_unknown"] = reserve_unknown_;
  json chars = json::array();
  for (char32_t c : characters_) chars.push_back(static_cast<std::uint32_t>(c));
  j["characters"] = std::move(chars);
  json contexts = json::array();
  for (const auto& [key, cell] : table_) {
    json ctx = json::array();
    for (char32_t id : key) ctx.push_back(static_cast<std::uint32_t>(id));
    json counts = json::array();
    for (std::size_t k = 0; k < cell.counts.size(); ++k) {
      if (cell.counts[k] > 0) counts.push_back({k, cell.counts[k]});
    }
    contexts.push_back({{"context", std::move(ctx)}, {"counts", std::move(counts)}});
  }
  j["contexts"] = std::move(contexts);
  return j;
}

NGramLM NGramLM::from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "forgeval-ngram") throw DataError("not an n-gram model artifact");
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion) {
      throw DataError("unsupported n-gram model version " + std::to_string(version));
    }
    std::vector<char32_t> chars;
    for (const auto& c : j.at("characters")) chars.push_back(static_cast<char32_t>(c.get<std::uint32_t>()));
    NGramLM lm(j.at("order").get<int>(), j.at("alpha").get<double>(), std::move(chars),
               j.at("reserve_unknown").get<bool>());
    const std::size_t v = lm.vocabulary_size();
    for (const auto& entry : j.at("contexts")) {
      std::u32string key;
      for (const auto& id : entry.at("context")) key.push_back(static_cast<char32_t>(id.get<std::uint32_t>()));
      if (key.size() != static_cast<std::size_t>(lm.order_ - 1)) throw DataError("context length mismatch");
      ContextCounts cell;
      cell.counts.assign(v, 0);
      for (const auto& kv : entry.at("counts")) {
        const auto k = kv.at(0).get<std::size_t>();
        if (k >= v) throw DataError("token id out of range");
        cell.counts[k] = kv.at(1).get<std::uint64_t>();
        cell.total += cell.counts[k];
      }
      lm.table_.emplace(std::move(key), std::move(cell));
    }
    return lm;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed n-gram model: ") + e.what());
  }
}

void NGramLM::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

NGramLM NGramLM::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read language model " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw DataError("malformed language model " + path.string() + ": " + e.what());
  }
}

std::string NGramLM::fingerprint() const { return json_fingerprint(to_json()); }

}  // namespace forgeval
