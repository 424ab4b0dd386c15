#include "forgeval/attack.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "forgeval/errors.hpp"
#include "forgeval/fingerprint.hpp"
#include "forgeval/rng.hpp"
#include "forgeval/text.hpp"
#include "io.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace forgeval {
namespace {

constexpr const char* kSpanTemplate =
    "Rewrite the following text fragment so that it keeps its meaning but uses different wording. "
    "Reply with the rewritten fragment only.\n\n{text}";
constexpr const char* kParaphraseTemplate =
    "Paraphrase the following text. Reply with the paraphrase only.\n\n{text}";
constexpr const char* kForwardTemplate =
    "Translate the following text into {pivot}. Reply with the translation only.\n\n{text}";
constexpr const char* kReturnTemplate =
    "Translate the following text into English. Reply with the translation only.\n\n{text}";
constexpr const char* kHumanizeTemplate =
    "Rewrite the following text in a human style, the way a person would write it casually, "
    "with varied sentence length and natural phrasing. Keep the meaning. Reply with the rewritten "
    "text only.\n\n{text}";

const std::map<std::string, std::vector<std::string>>& default_lexicon() {
  static const std::map<std::string, std::vector<std::string>> lexicon = {
      {"big", {"large", "huge"}},         {"small", {"little", "tiny"}},
      {"fast", {"quick", "rapid"}},       {"quick", {"fast", "swift"}},
      {"happy", {"glad", "cheerful"}},    {"sad", {"unhappy", "gloomy"}},
      {"important", {"significant", "crucial"}},
      {"use", {"employ", "utilize"}},     {"show", {"demonstrate", "reveal"}},
      {"help", {"assist", "aid"}},        {"begin", {"start", "commence"}},
      {"start", {"begin", "launch"}},     {"end", {"finish", "conclusion"}},
      {"good", {"fine", "decent"}},       {"bad", {"poor", "awful"}},
      {"many", {"numerous", "several"}},  {"often", {"frequently"}},
      {"also", {"additionally", "too"}},  {"however", {"nevertheless", "yet"}},
      {"because", {"since", "as"}},       {"get", {"obtain", "acquire"}},
      {"make", {"create", "produce"}},    {"think", {"believe", "reckon"}},
      {"very", {"really", "extremely"}},  {"new", {"novel", "fresh"}},
      {"old", {"aged", "former"}},        {"easy", {"simple", "effortless"}},
      {"hard", {"difficult", "tough"}},   {"answer", {"reply", "response"}},
      {"question", {"query", "inquiry"}}, {"problem", {"issue", "difficulty"}},
      {"idea", {"notion", "concept"}},    {"people", {"persons", "folks"}},
      {"world", {"globe", "earth"}},      {"work", {"labor", "effort"}},
      {"change", {"alter", "modify"}},    {"provide", {"supply", "offer"}},
      {"example", {"instance", "case"}},
      {"result", {"outcome", "consequence"}},
  };
  return lexicon;
}

std::size_t budget(double rate, std::size_t eligible) {
  const double x = rate * static_cast<double>(eligible);
  const double nearest = std::nearbyint(x);
  // rate*eligible products such as 0.3*10 land a hair above the integer.
  if (std::fabs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
  return std::min(eligible, static_cast<std::size_t>(std::ceil(x)));
}

bool has_distinct_pair(std::u32string_view w) {
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    if (w[i] != w[i + 1]) return true;
  }
  return false;
}

char32_t random_letter(Rng& rng, char32_t avoid) {
  const bool avoid_letter = avoid >= U'a' && avoid <= U'z';
  const std::uint64_t n = avoid_letter ? 25 : 26;
  char32_t c = static_cast<char32_t>(U'a' + rng.below(n));
  if (avoid_letter && c >= avoid) ++c;
  return c;
}

enum class Op { insert, remove, substitute, transpose };

// Applies one edit to `word`.
void edit_word(std::u32string& word, Op op, Rng& rng) {
  switch (op) {
    case Op::insert: {
      const std::size_t pos = rng.below(word.size() + 1);
      word.insert(word.begin() + static_cast<std::ptrdiff_t>(pos), random_letter(rng, 0));
      break;
    }
    case Op::remove:
      word.erase(rng.below(word.size()), 1);
      break;
    case Op::substitute: {
      const std::size_t pos = rng.below(word.size());
      word[pos] = random_letter(rng, word[pos]);
      break;
    }
    case Op::transpose: {
      std::vector<std::size_t> pairs;
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        if (word[i] != word[i + 1]) pairs.push_back(i);
      }
      const std::size_t i = pairs[rng.below(pairs.size())];
      std::swap(word[i], word[i + 1]);
      break;
    }
  }
}

struct Perturbation {
  std::u32string text;
  std::size_t eligible = 0;
  std::size_t perturbed = 0;
};

// Rebuilds the text from word pieces, editing the selected words.
template <typename Eligible, typename Edit>
Perturbation word_attack(std::u32string_view text, double rate, Rng& rng, Eligible eligible, Edit edit) {
  const auto spans = text::word_spans(text);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (eligible(text.substr(spans[i].begin, spans[i].size()))) candidates.push_back(i);
  }
  Perturbation out;
  out.eligible = candidates.size();
  const std::size_t k = budget(rate, candidates.size());
  const auto picked = rng.sample(candidates.size(), k);
  out.perturbed = picked.size();
  std::vector<bool> selected(spans.size(), false);
  for (std::size_t p : picked) selected[candidates[p]] = true;

  std::size_t cursor = 0;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    out.text.append(text.substr(cursor, spans[i].begin - cursor));
    std::u32string word(text.substr(spans[i].begin, spans[i].size()));
    if (selected[i]) edit(word);
    out.text += word;
    cursor = spans[i].end;
  }
  out.text.append(text.substr(cursor));
  return out;
}

std::map<char32_t, char32_t> homoglyph_map(const json& params) {
  const auto it = params.find("map");
  if (it == params.end() || it->is_null()) return default_homoglyphs();
  std::map<char32_t, char32_t> out;
  for (const auto& [from, to] : it->items()) {
    const auto f = text::to_u32(from);
    const auto t = text::to_u32(to.get<std::string>());
    if (f.size() != 1 || t.size() != 1) throw UsageError("params.map entries must map one character to one character");
    out[f[0]] = t[0];
  }
  return out;
}

std::map<std::string, std::vector<std::string>> lexicon_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("params.lexicon must be an object of word -> synonym(s)");
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [word, syn] : j.items()) {
    std::string key;
    for (char c : word) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    auto& dst = out[key];
    if (syn.is_string()) {
      dst.push_back(syn.get<std::string>());
    } else if (syn.is_array()) {
      for (const auto& s : syn) dst.push_back(s.get<std::string>());
    } else {
      throw UsageError("params.lexicon['" + word + "'] must be a string or an array of strings");
    }
    if (dst.empty()) out.erase(key);
  }
  return out;
}

std::map<std::string, std::vector<std::string>> synonym_lexicon(const json& params) {
  if (const auto it = params.find("lexicon"); it != params.end() && !it->is_null()) return lexicon_from_json(*it);
  if (const auto it = params.find("lexicon_path"); it != params.end() && !it->is_null()) {
    const std::string path = it->get<std::string>();
    try {
      return lexicon_from_json(json::parse(io::read_file(path)));
    } catch (const json::exception& e) {
      throw DataError("lexicon " + path + ": " + e.what());
    }
  }
  return default_lexicon();
}

bool is_ascii_punct(char32_t c) { return c < 128 && std::ispunct(static_cast<int>(c)); }

std::string lower_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Splits a word into leading punctuation, core and trailing punctuation.
struct WordParts {
  std::u32string_view lead, core, trail;
};

WordParts split_word(std::u32string_view w) {
  std::size_t b = 0;
  std::size_t e = w.size();
  while (b < e && is_ascii_punct(w[b])) ++b;
  while (e > b && is_ascii_punct(w[e - 1])) --e;
  return {w.substr(0, b), w.substr(b, e - b), w.substr(e)};
}

std::string match_case(const std::string& original, std::string replacement) {
  const bool all_upper = original.size() > 1 && std::all_of(original.begin(), original.end(), [](char c) {
                           return !std::isalpha(static_cast<unsigned char>(c)) || std::isupper(static_cast<unsigned char>(c));
                         });
  if (all_upper) {
    for (char& c : replacement) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  } else if (!original.empty() && std::isupper(static_cast<unsigned char>(original[0])) && !replacement.empty()) {
    replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
  }
  return replacement;
}

GenerationConfig backend_config(const AttackSpec& spec) {
  const auto it = spec.params.find("generator");
  if (it == spec.params.end() || !it->is_object()) {
    throw UsageError("attack '" + spec.name + "': params.generator (a generator config) is required");
  }
  return generation_config_from_json(*it);
}

std::string template_param(const AttackSpec& spec, const char* key, const char* fallback) {
  const auto it = spec.params.find(key);
  if (it == spec.params.end() || it->is_null()) return fallback;
  return it->get<std::string>();
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string call_backend(GenerationConfig config, const std::string& prompt_template, const std::string& input,
                         RequestLog* log) {
  config.prompt_template = prompt_template;
  config.validate();
  std::string out = text::canonicalize(generate(config, input, log).text);
  if (out.empty()) throw BackendError("generator returned an empty rewrite");
  return out;
}

Perturbation local_attack(const AttackSpec& spec, std::u32string_view text, Rng& rng) {
  const double rate = spec.rate;
  const auto any = [](std::u32string_view) { return true; };
  const auto at_least_two = [](std::u32string_view w) { return w.size() >= 2; };
  if (spec.name == "typo_insert") {
    return word_attack(text, rate, rng, any, [&](std::u32string& w) { edit_word(w, Op::insert, rng); });
  }
  if (spec.name == "typo_delete") {
    return word_attack(text, rate, rng, at_least_two, [&](std::u32string& w) { edit_word(w, Op::remove, rng); });
  }
  if (spec.name == "typo_substitute") {
    return word_attack(text, rate, rng, any, [&](std::u32string& w) { edit_word(w, Op::substitute, rng); });
  }
  if (spec.name == "typo_transpose") {
    return word_attack(text, rate, rng, has_distinct_pair,
                       [&](std::u32string& w) { edit_word(w, Op::transpose, rng); });
  }
  if (spec.name == "typo_mixed") {
    return word_attack(text, rate, rng, any, [&](std::u32string& w) {
      std::vector<Op> ops = {Op::insert, Op::substitute};
      if (w.size() >= 2) ops.push_back(Op::remove);
      if (has_distinct_pair(w)) ops.push_back(Op::transpose);
      edit_word(w, ops[rng.below(ops.size())], rng);
    });
  }
  if (spec.name == "format_chars") {
    return word_attack(text, rate, rng, at_least_two, [&](std::u32string& w) {
      const std::size_t pos = 1 + rng.below(w.size() - 1);
      const char32_t c = kFormatChars[rng.below(std::size(kFormatChars))];
      w.insert(w.begin() + static_cast<std::ptrdiff_t>(pos), c);
    });
  }
  if (spec.name == "homoglyph") {
    const auto map = homoglyph_map(spec.params);
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (map.count(text[i])) positions.push_back(i);
    }
    Perturbation out;
    out.text = std::u32string(text);
    out.eligible = positions.size();
    const auto picked = rng.sample(positions.size(), budget(rate, positions.size()));
    out.perturbed = picked.size();
    for (std::size_t p : picked) out.text[positions[p]] = map.at(text[positions[p]]);
    return out;
  }
  if (spec.name == "synonym") {
    const auto lexicon = synonym_lexicon(spec.params);
    const auto lookup = [&](std::u32string_view w) {
      const auto core = split_word(w).core;
      return core.empty() ? lexicon.end() : lexicon.find(lower_ascii(text::to_utf8(core)));
    };
    return word_attack(
        text, rate, rng, [&](std::u32string_view w) { return lookup(w) != lexicon.end(); },
        [&](std::u32string& w) {
          const auto parts = split_word(w);
          const auto& options = lookup(w)->second;
          const std::string chosen = options[rng.below(options.size())];
          std::u32string rebuilt(parts.lead);
          rebuilt += text::to_u32(match_case(text::to_utf8(parts.core), chosen));
          rebuilt += parts.trail;
          w = std::move(rebuilt);
        });
  }
  throw UsageError("attack '" + spec.name + "' is not a local attack");
}

Perturbation backend_attack(const AttackSpec& spec, std::u32string_view text, Rng& rng, RequestLog* log) {
  const GenerationConfig config = backend_config(spec);
  Perturbation out;
  if (spec.name == "span_perturb") {
    const auto spans = text::word_spans(text);
    out.eligible = spans.size();
    const std::size_t k = budget(spec.rate, spans.size());
    out.text = std::u32string(text);
    if (k == 0) return out;
    const std::size_t first = rng.below(spans.size() - k + 1);
    const std::size_t begin = spans[first].begin;
    const std::size_t end = spans[first + k - 1].end;
    const std::string fragment = text::to_utf8(text.substr(begin, end - begin));
    const std::string rewritten =
        call_backend(config, template_param(spec, "prompt_template", kSpanTemplate), fragment, log);
    out.text = std::u32string(text.substr(0, begin)) + text::to_u32(rewritten) + std::u32string(text.substr(end));
    out.perturbed = k;
    return out;
  }
  out.eligible = 1;
  out.text = std::u32string(text);
  if (budget(spec.rate, 1) == 0) return out;
  const std::string input = text::to_utf8(text);
  std::string rewritten;
  if (spec.name == "paraphrase") {
    rewritten = call_backend(config, template_param(spec, "prompt_template", kParaphraseTemplate), input, log);
  } else if (spec.name == "humanize") {
    rewritten = call_backend(config, template_param(spec, "prompt_template", kHumanizeTemplate), input, log);
  } else if (spec.name == "back_translate") {
    const std::string pivot = template_param(spec, "pivot_language", "French");
    const std::string forward = replace_all(template_param(spec, "prompt_template", kForwardTemplate), "{pivot}", pivot);
    const std::string pivoted = call_backend(config, forward, input, log);
    rewritten = call_backend(config, template_param(spec, "return_template", kReturnTemplate), pivoted, log);
  } else {
    throw UsageError("attack '" + spec.name + "' is not a backend attack");
  }
  out.text = text::to_u32(rewritten);
  out.perturbed = 1;
  return out;
}

}  // namespace

const std::vector<AttackInfo>& attack_catalog() {
  static const std::vector<AttackInfo> catalog = [] {
    const json rate_only = json::object();
    const json backend = {{"generator", "generator config object (backend, model, base_url, ...)"},
                          {"prompt_template", "override of the rewrite instruction; must contain {text}"}};
    std::vector<AttackInfo> c = {
        {"typo_insert", "character", false, "Inserts one random letter into each selected word.",
         "machine -> macehine", rate_only},
        {"typo_delete", "character", false, "Deletes one character from each selected word of two or more characters.",
         "machine -> machne", rate_only},
        {"typo_substitute", "character", false, "Replaces one character of each selected word with a different letter.",
         "machine -> machipe", rate_only},
        {"typo_transpose", "character", false, "Swaps two differing adjacent characters in each selected word.",
         "machine -> mahcine", rate_only},
        {"typo_mixed", "character", false,
         "Applies one of insert, delete, substitute or transpose, chosen at random, to each selected word.",
         "the text -> teh tetx", rate_only},
        {"homoglyph", "character", false,
         "Replaces characters with visually confusable codepoints (for example Latin a with Cyrillic a).",
         "paper -> p\xd0\xb0per", {{"map", "object of single character -> confusable character"}}},
        {"format_chars", "character", false,
         "Inserts an invisible format character (zero-width space, joiner or non-joiner, word joiner) inside each selected word.",
         "machine -> mach\xe2\x80\x8bine", rate_only},
        {"synonym", "lexical", false, "Replaces selected lexicon words with a synonym from the lexicon.",
         "happy dog -> glad dog",
         {{"lexicon", "object of word -> synonym or list of synonyms"}, {"lexicon_path", "JSON file with the same shape"}}},
        {"span_perturb", "paragraph", true,
         "Masks a contiguous span of words and asks the generator to rewrite it in place; rate sets the span length.",
         "rate 0.3 on ten words -> three adjacent words rewritten", backend},
        {"paraphrase", "document", true, "Asks the generator to paraphrase the whole text.",
         "The results were good. -> The outcome looked promising.", backend},
        {"back_translate", "document", true,
         "Translates the text into a pivot language and back with two generator calls.",
         "I am very tired. -> Je suis tres fatigue. -> I am really tired.",
         {{"generator", "generator config object"},
          {"pivot_language", "pivot language name (default French)"},
          {"prompt_template", "forward instruction; may use {pivot}, must contain {text}"},
          {"return_template", "return instruction; must contain {text}"}}},
        {"humanize", "document", true, "Asks the generator to rewrite the text in a human style.",
         "In conclusion, the method is effective. -> honestly it just works", backend},
    };
    return c;
  }();
  return catalog;
}

const AttackInfo& attack_info(const std::string& name) {
  for (const auto& a : attack_catalog()) {
    if (a.name == name) return a;
  }
  throw UsageError("unknown attack '" + name + "'");
}

const std::map<char32_t, char32_t>& default_homoglyphs() {
  static const std::map<char32_t, char32_t> map = {
      {U'a', U'а'}, {U'c', U'с'}, {U'd', U'ԁ'}, {U'e', U'е'}, {U'g', U'ɡ'},
      {U'h', U'һ'}, {U'i', U'і'}, {U'j', U'ј'}, {U'l', U'ӏ'}, {U'n', U'ո'},
      {U'o', U'о'}, {U'p', U'р'}, {U'q', U'ԛ'}, {U's', U'ѕ'}, {U'u', U'υ'},
      {U'v', U'ν'}, {U'w', U'ԝ'}, {U'x', U'х'}, {U'y', U'у'}, {U'A', U'А'},
      {U'B', U'В'}, {U'C', U'С'}, {U'E', U'Е'}, {U'H', U'Н'}, {U'I', U'І'},
      {U'J', U'Ј'}, {U'K', U'К'}, {U'M', U'М'}, {U'N', U'Ν'}, {U'O', U'О'},
      {U'P', U'Р'}, {U'S', U'Ѕ'}, {U'T', U'Т'}, {U'X', U'Х'}, {U'Y', U'Ү'},
      {U'Z', U'Ζ'},
  };
  return map;
}

void AttackSpec::validate() const {
  const AttackInfo& info = attack_info(name);
  if (!(rate >= 0.0 && rate <= 1.0)) throw UsageError("rate: must lie in [0, 1] (attack '" + name + "')");
  if (!params.is_object()) throw UsageError("params: must be an object (attack '" + name + "')");
  if (info.uses_backend) {
    backend_config(*this).validate();
  } else if (name == "synonym") {
    synonym_lexicon(params);
  } else if (name == "homoglyph") {
    homoglyph_map(params);
  }
}

std::string AttackSpec::params_fingerprint() const {
  return json_fingerprint({{"attack", name}, {"rate", rate}, {"params", params}});
}

ordered_json to_json(const AttackSpec& spec) {
  ordered_json j;
  j["name"] = spec.name;
  j["rate"] = spec.rate;
  j["seed"] = spec.seed;
  j["params"] = spec.params;
  return j;
}

AttackSpec attack_spec_from_json(const json& j) {
  if (!j.is_object()) throw UsageError("attack spec must be an object");
  AttackSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    if (j.contains("rate")) s.rate = j["rate"].get<double>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("params") && !j["params"].is_null()) s.params = j["params"];
  } catch (const json::exception& e) {
    throw UsageError(std::string("attack spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<AttackSpec> parse_attack_specs(const std::string& content) {
  std::vector<AttackSpec> out;
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) throw UsageError("attack spec file is empty");
  try {
    if (content[first] == '[') {
      for (const auto& j : json::parse(content)) out.push_back(attack_spec_from_json(j));
      return out;
    }
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.push_back(attack_spec_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("attack spec file: ") + e.what());
  }
  return out;
}

AttackResult apply_attack(const AttackSpec& spec, const Record& record, RequestLog* log) {
  if (record.label != 1) throw DataError("record '" + record.id + "' is human-written; only machine records are attacked");
  if (record.attack) throw DataError("record '" + record.id + "' is already attacked; attacks are not composed");
  const AttackInfo& info = attack_info(spec.name);
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) throw UsageError("rate: must lie in [0, 1]");
  Rng rng(hash64("attack\n" + std::to_string(spec.seed) + "\n" + record.id + "\n" + spec.name));
  const std::u32string original = text::to_u32(record.text);
  const Perturbation p = info.uses_backend ? backend_attack(spec, original, rng, log) : local_attack(spec, original, rng);

  AttackResult r;
  r.record = record;
  r.record.id = record.id + "#" + spec.name;
  r.record.attack = spec.name;
  r.record.text = p.perturbed == 0 ? record.text : text::to_utf8(p.text);
  r.eligible = p.eligible;
  r.perturbed = p.perturbed;
  r.provenance = {r.record.id, record.id, spec.name, spec.params_fingerprint(), spec.seed};
  return r;
}

AttackMode parse_attack_mode(const std::string& name) {
  if (name == "append") return AttackMode::append;
  if (name == "replace") return AttackMode::replace;
  throw UsageError("mode: expected append or replace, got '" + name + "'");
}

const char* to_string(AttackMode mode) { return mode == AttackMode::append ? "append" : "replace"; }

AttackedDataset attack_dataset(std::span<const AttackSpec> specs, std::span<const Record> records,
                               AttackMode mode, std::size_t parallelism, RequestLog* log) {
  if (parallelism == 0) throw UsageError("parallelism must be >= 1");
  std::set<std::string> names;
  for (const auto& s : specs) {
    s.validate();
    if (!names.insert(s.name).second) {
      throw UsageError("attack '" + s.name + "' appears twice; variant ids would collide, run it separately");
    }
  }
  struct Job {
    std::size_t record;
    std::size_t spec;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].label != 1 || records[i].attack) continue;
    for (std::size_t s = 0; s < specs.size(); ++s) jobs.push_back({i, s});
  }
  std::vector<std::optional<AttackResult>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        results[j] = apply_attack(specs[jobs[j].spec], records[jobs[j].record], log);
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(parallelism, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  AttackedDataset out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    const bool attackable = r.label == 1 && !r.attack && !specs.empty();
    if (!attackable || mode == AttackMode::append) out.records.push_back(r);
    if (r.label != 1 || r.attack) continue;
    for (std::size_t s = 0; s < specs.size(); ++s, ++j) {
      if (results[j]) {
        out.records.push_back(results[j]->record);
        out.provenance.push_back(results[j]->provenance);
      } else {
        out.failures.push_back({r.id, specs[s].name, errors[j]});
      }
    }
  }
  return out;
}

}  // namespace forgeval
