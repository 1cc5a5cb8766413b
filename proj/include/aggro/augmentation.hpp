#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "aggro/corpus.hpp"
#include "aggro/error.hpp"
#include "aggro/hash.hpp"
#include "aggro/random.hpp"
#include "aggro/text.hpp"
#include "aggro/translator.hpp"
#include "json.hpp"

namespace aggro {

/// Intensities of the three noise operators. Probabilities are per eligible
/// token (swap) or per gap (insert); shuffle_prob is the chance that one
/// bounded shuffle is applied to the comment at all.
struct NoiseConfig {
  double synonym_swap_prob = 0.15;
  double stopword_insert_prob = 0.10;
  double shuffle_prob = 0.5;
  std::size_t shuffle_window = 2;
  double max_operations_fraction = 0.3;
  bool allow_antonyms = false;
  std::uint64_t seed = 0;
  std::string lexicon_id = "default";
  std::string stopword_list_id = "default";

  void validate() const {
    const auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw InputError(std::string(name) + " must lie in [0, 1]");
    };
    prob(synonym_swap_prob, "synonym_swap_prob");
    prob(stopword_insert_prob, "stopword_insert_prob");
    prob(shuffle_prob, "shuffle_prob");
    if (shuffle_window < 1) throw InputError("shuffle_window must be at least 1");
    if (!(max_operations_fraction > 0.0 && max_operations_fraction <= 1.0))
      throw InputError("max_operations_fraction must lie in (0, 1]");
  }
};

inline nlohmann::json to_json(const NoiseConfig& c) {
  return {{"synonym_swap_prob", c.synonym_swap_prob},
          {"stopword_insert_prob", c.stopword_insert_prob},
          {"shuffle_prob", c.shuffle_prob},
          {"shuffle_window", c.shuffle_window},
          {"max_operations_fraction", c.max_operations_fraction},
          {"allow_antonyms", c.allow_antonyms},
          {"seed", c.seed},
          {"lexicon_id", c.lexicon_id},
          {"stopword_list_id", c.stopword_list_id}};
}

inline NoiseConfig noise_config_from_json(const nlohmann::json& j) {
  NoiseConfig c;
  c.synonym_swap_prob = j.value("synonym_swap_prob", c.synonym_swap_prob);
  c.stopword_insert_prob = j.value("stopword_insert_prob", c.stopword_insert_prob);
  c.shuffle_prob = j.value("shuffle_prob", c.shuffle_prob);
  c.shuffle_window = j.value("shuffle_window", c.shuffle_window);
  c.max_operations_fraction = j.value("max_operations_fraction", c.max_operations_fraction);
  c.allow_antonyms = j.value("allow_antonyms", c.allow_antonyms);
  c.seed = j.value("seed", c.seed);
  c.lexicon_id = j.value("lexicon_id", c.lexicon_id);
  c.stopword_list_id = j.value("stopword_list_id", c.stopword_list_id);
  c.validate();
  return c;
}

struct Replacement {
  std::string word;
  bool antonym = false;

  friend bool operator==(const Replacement&, const Replacement&) = default;
};

/// Word -> replacement list. Keys are lowercased, so lookup is
/// case-insensitive for cased scripts and exact for the others.
class SynonymLexicon {
 public:
  explicit SynonymLexicon(Language language = Language::en) : language_(language) {}

  Language language() const { return language_; }

  void add(const std::string& word, std::vector<Replacement> replacements) {
    const std::string key = normalize(word);
    if (replacements.empty()) throw InputError("lexicon entry '" + word + "' has no replacements");
    const bool only_self = std::all_of(replacements.begin(), replacements.end(),
                                       [&](const Replacement& r) { return normalize(r.word) == key; });
    if (only_self) throw InputError("lexicon entry '" + word + "' maps only to itself");
    auto& slot = entries_[key];
    slot.insert(slot.end(), replacements.begin(), replacements.end());
  }

  const std::vector<Replacement>* find(const std::string& word) const {
    auto it = entries_.find(normalize(word));
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Lines: word TAB replacement[,replacement...]; a leading '!' marks an antonym.
  static SynonymLexicon load(const std::filesystem::path& path, Language language) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon " + path.string());
    SynonymLexicon lex(language);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected word<TAB>replacements");
      std::vector<Replacement> reps;
      std::string rest = line.substr(tab + 1);
      std::size_t start = 0;
      while (start <= rest.size()) {
        auto comma = rest.find(',', start);
        if (comma == std::string::npos) comma = rest.size();
        std::string item = trim(rest.substr(start, comma - start));
        if (!item.empty()) {
          const bool ant = item[0] == '!';
          if (ant) item.erase(0, 1);
          if (!item.empty()) reps.push_back({item, ant});
        }
        start = comma + 1;
      }
      try {
        lex.add(trim(line.substr(0, tab)), std::move(reps));
      } catch (const InputError& e) {
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return lex;
  }

 private:
  static std::string normalize(const std::string& w) {
    return unicode::encode_utf8(unicode::to_lower(unicode::decode_utf8(w)));
  }

  Language language_;
  std::unordered_map<std::string, std::vector<Replacement>> entries_;
};

/// One word per line; blank lines and '#' comments ignored.
inline std::vector<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stop-word list " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

/// Lexicons and stop-word lists addressable by the ids a NoiseConfig names.
struct NoiseResources {
  std::map<std::string, SynonymLexicon> lexicons;
  std::map<std::string, std::vector<std::string>> stopword_lists;

  const SynonymLexicon& lexicon(const std::string& id) const {
    auto it = lexicons.find(id);
    if (it == lexicons.end()) throw InputError("unknown lexicon id '" + id + "'");
    return it->second;
  }
  const std::vector<std::string>& stopwords(const std::string& id) const {
    auto it = stopword_lists.find(id);
    if (it == stopword_lists.end()) throw InputError("unknown stop-word list id '" + id + "'");
    return it->second;
  }
};

namespace detail {

inline std::vector<const Replacement*> eligible(const std::vector<Replacement>* reps, bool allow_antonyms) {
  std::vector<const Replacement*> out;
  if (!reps) return out;
  for (const auto& r : *reps)
    if (allow_antonyms || !r.antonym) out.push_back(&r);
  return out;
}

// Each operator takes an optional budget of alterations; nullptr means unlimited.
// RNG draws are skipped entirely once the budget is spent.

inline std::size_t swap_pass(std::vector<std::string>& tokens, const SynonymLexicon& lexicon, double prob,
                             bool allow_antonyms, Rng& rng, std::size_t* budget) {
  std::size_t altered = 0;
  for (auto& tok : tokens) {
    if (budget && *budget == 0) break;
    const auto candidates = eligible(lexicon.find(tok), allow_antonyms);
    if (candidates.empty()) continue;
    if (!rng.bernoulli(prob)) continue;
    const auto& pick = candidates[rng.index(candidates.size())]->word;
    if (pick != tok) {
      tok = pick;
      ++altered;
      if (budget) --*budget;
    }
  }
  return altered;
}

inline std::size_t insert_pass(std::vector<std::string>& tokens, const std::vector<std::string>& stopwords,
                               double prob, Rng& rng, std::size_t* budget) {
  if (prob > 0.0 && stopwords.empty()) throw InputError("stop-word insertion needs a non-empty stop-word list");
  std::vector<std::string> out;
  out.reserve(tokens.size() * 2 + 1);
  std::size_t inserted = 0;
  for (std::size_t gap = 0; gap <= tokens.size(); ++gap) {
    if (!(budget && *budget == 0) && prob > 0.0 && rng.bernoulli(prob)) {
      out.push_back(stopwords[rng.index(stopwords.size())]);
      ++inserted;
      if (budget) --*budget;
    }
    if (gap < tokens.size()) out.push_back(std::move(tokens[gap]));
  }
  tokens = std::move(out);
  return inserted;
}

/// Stable sort by key i + U[0, window + 1): a token can only be overtaken by
/// (or overtake) neighbours within `window` positions.
inline std::vector<std::size_t> bounded_permutation(std::size_t n, std::size_t window, Rng& rng) {
  std::vector<std::pair<double, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i)
    keyed[i] = {static_cast<double>(i) + rng.uniform() * static_cast<double>(window + 1), i};
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> perm(n);
  for (std::size_t p = 0; p < n; ++p) perm[p] = keyed[p].second;
  return perm;
}

}  // namespace detail

/// Each lexicon token is replaced with probability `prob` by a uniformly
/// chosen replacement. Draw order: one bernoulli per lexicon token, then one
/// index draw on success.
inline std::vector<std::string> replace_with_synonyms(std::vector<std::string> tokens, const SynonymLexicon& lexicon,
                                                      double prob, Rng& rng, bool allow_antonyms = false) {
  detail::swap_pass(tokens, lexicon, prob, allow_antonyms, rng, nullptr);
  return tokens;
}

/// At each of the len+1 gaps a uniformly chosen stop word is inserted with probability `prob`.
inline std::vector<std::string> insert_stopwords(std::vector<std::string> tokens,
                                                 const std::vector<std::string>& stopwords, double prob, Rng& rng) {
  detail::insert_pass(tokens, stopwords, prob, rng, nullptr);
  return tokens;
}

/// Random permutation in which no token moves more than `window` positions.
inline std::vector<std::string> shuffle_words(const std::vector<std::string>& tokens, std::size_t window, Rng& rng) {
  if (window < 1) throw InputError("shuffle window must be at least 1");
  const auto perm = detail::bounded_permutation(tokens.size(), window, rng);
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (std::size_t p : perm) out.push_back(tokens[p]);
  return out;
}

/// What add_noise did to one comment.
struct NoiseTrace {
  std::size_t original_tokens = 0;
  std::size_t swapped = 0;
  std::size_t inserted = 0;
  std::size_t displaced = 0;

  std::size_t altered() const { return swapped + inserted + displaced; }
};

/// Seed for the k-th noisy copy of a comment; k = 0 is derive_seed(seed, id).
inline std::uint64_t noise_seed(std::uint64_t seed, const std::string& comment_id, std::size_t copy_index) {
  const std::uint64_t base = derive_seed(seed, comment_id);
  return copy_index == 0 ? base : derive_seed(base, std::to_string(copy_index));
}

inline std::string noise_id(const std::string& id, std::size_t copy_index) {
  return id + "#n" + std::to_string(copy_index);
}

/// Synonym swap, then stop-word insertion, then one bounded shuffle, with the
/// total number of altered tokens capped at floor(max_operations_fraction * n).
/// When nothing is altered the original text is kept byte for byte.
inline LabeledComment add_noise(const LabeledComment& comment, const NoiseConfig& config,
                                const NoiseResources& resources, std::size_t copy_index = 0,
                                NoiseTrace* trace = nullptr) {
  config.validate();
  if (comment.provenance != Provenance::raw)
    throw InputError("add_noise expects a raw comment, got '" + comment.id + "' with provenance " +
                     std::string(to_string(comment.provenance)));
  std::vector<std::string> tokens = split_whitespace(comment.text);
  if (tokens.empty()) throw InputError("comment '" + comment.id + "' has no tokens");

  NoiseTrace t;
  t.original_tokens = tokens.size();
  std::size_t budget = static_cast<std::size_t>(
      std::floor(config.max_operations_fraction * static_cast<double>(tokens.size()) + 1e-9));
  Rng rng(noise_seed(config.seed, comment.id, copy_index));

  if (config.synonym_swap_prob > 0.0)
    t.swapped = detail::swap_pass(tokens, resources.lexicon(config.lexicon_id), config.synonym_swap_prob,
                                  config.allow_antonyms, rng, &budget);
  if (config.stopword_insert_prob > 0.0)
    t.inserted = detail::insert_pass(tokens, resources.stopwords(config.stopword_list_id),
                                     config.stopword_insert_prob, rng, &budget);
  if (config.shuffle_prob > 0.0 && budget >= 2 && tokens.size() >= 2 && rng.bernoulli(config.shuffle_prob)) {
    const std::size_t span = std::min(budget, tokens.size());
    const std::size_t start = rng.index(tokens.size() - span + 1);
    std::vector<std::string> window(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                    tokens.begin() + static_cast<std::ptrdiff_t>(start + span));
    auto shuffled = shuffle_words(window, config.shuffle_window, rng);
    for (std::size_t k = 0; k < span; ++k) {
      if (shuffled[k] != tokens[start + k]) ++t.displaced;
      tokens[start + k] = std::move(shuffled[k]);
    }
  }

  LabeledComment out = comment;
  out.id = noise_id(comment.id, copy_index);
  out.provenance = Provenance::noise_aug;
  out.source_id = comment.id;
  if (t.altered() > 0) out.text = join_tokens(tokens);
  if (trace) *trace = t;
  return out;
}

enum class BalanceStrategy { to_majority, explicit_targets };

struct LabelQuota {
  std::size_t noise = 0;
  std::size_t translation = 0;

  friend bool operator==(const LabelQuota&, const LabelQuota&) = default;
};

/// Per-label targets and how each deficit is to be filled.
struct BalancePlan {
  std::array<std::size_t, kNumLabels> current{};
  std::array<std::size_t, kNumLabels> targets{};
  std::array<LabelQuota, kNumLabels> quotas{};

  std::size_t deficit(Label l) const { return targets[index_of(l)] - current[index_of(l)]; }
  std::array<std::size_t, kNumLabels> deficits() const {
    return {deficit(Label::NAG), deficit(Label::OAG), deficit(Label::CAG)};
  }
  std::size_t target_total() const { return targets[0] + targets[1] + targets[2]; }
};

/// translation_share of each deficit is assigned to translation, the rest to noise.
inline BalancePlan plan_balance(const LabelDistribution& dist, BalanceStrategy strategy,
                                const std::optional<std::array<std::size_t, kNumLabels>>& explicit_targets = {},
                                double translation_share = 0.5) {
  if (dist.total == 0) throw InputError("cannot plan balancing for an empty distribution");
  if (!(translation_share >= 0.0 && translation_share <= 1.0))
    throw InputError("translation_share must lie in [0, 1]");
  BalancePlan plan;
  plan.current = dist.counts;
  if (strategy == BalanceStrategy::to_majority) {
    const std::size_t top = *std::max_element(dist.counts.begin(), dist.counts.end());
    plan.targets.fill(top);
  } else {
    if (!explicit_targets) throw InputError("explicit_targets strategy needs target counts");
    plan.targets = *explicit_targets;
    for (Label l : kAllLabels)
      if (plan.targets[index_of(l)] < plan.current[index_of(l)])
        throw InputError("explicit target for " + std::string(to_string(l)) + " (" +
                         std::to_string(plan.targets[index_of(l)]) + ") is below the current count (" +
                         std::to_string(plan.current[index_of(l)]) + ")");
  }
  for (Label l : kAllLabels) {
    const std::size_t d = plan.deficit(l);
    auto& q = plan.quotas[index_of(l)];
    q.translation = static_cast<std::size_t>(std::floor(static_cast<double>(d) * translation_share + 0.5));
    q.noise = d - q.translation;
  }
  return plan;
}

inline nlohmann::json to_json(const BalancePlan& p) {
  nlohmann::json j = nlohmann::json::object();
  for (Label l : kAllLabels) {
    const auto i = index_of(l);
    j[std::string(to_string(l))] = {{"current", p.current[i]},
                                    {"target", p.targets[i]},
                                    {"noise", p.quotas[i].noise},
                                    {"translation", p.quotas[i].translation}};
  }
  return j;
}

/// Raised when some translations could not be produced; lists the affected ids.
class TranslationIncomplete : public Error {
 public:
  TranslationIncomplete(const std::string& what, std::vector<std::string> ids)
      : Error(what), ids_(std::move(ids)) {}
  const std::vector<std::string>& untranslated_ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

inline std::string translated_id(const LabeledComment& source, Language target, std::size_t copy_index = 0) {
  std::string id = std::string(to_string(source.language)) + ">" + std::string(to_string(target)) + ":" + source.id;
  if (copy_index) id += "#t" + std::to_string(copy_index);
  return id;
}

namespace detail {

struct TranslationJob {
  const LabeledComment* source;
  std::size_t copy_index;
};

inline std::vector<LabeledComment> run_translations(const std::vector<TranslationJob>& jobs,
                                                    TranslationService& service, Language target,
                                                    std::size_t max_in_flight,
                                                    std::vector<std::string>* failed_ids) {
  std::vector<TranslationRequest> requests;
  requests.reserve(jobs.size());
  for (const auto& j : jobs) {
    if (j.source->language == target)
      throw InputError("donor comment '" + j.source->id + "' is already in " + std::string(to_string(target)));
    requests.push_back({j.source->text, j.source->language, target});
  }
  auto results = translate_batch(requests, service, max_in_flight);
  std::vector<LabeledComment> out;
  out.reserve(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& src = *jobs[i].source;
    if (!results[i].ok() || trim(*results[i].text).empty()) {
      if (failed_ids) failed_ids->push_back(src.id);
      continue;
    }
    LabeledComment c;
    c.id = translated_id(src, target, jobs[i].copy_index);
    c.text = trim(*results[i].text);
    c.label = src.label;
    c.language = target;
    c.provenance = Provenance::translated;
    c.source_id = src.id;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// Everything balance_corpus needs besides the corpus and plan.
struct BalanceInputs {
  NoiseConfig noise;
  const NoiseResources* resources = nullptr;
  TranslationService* translator = nullptr;
  std::vector<Corpus> donors;
  std::size_t max_in_flight = 4;
};

/// Raw corpus plus augmented comments so that every label reaches its target.
/// Translation quotas take distinct donors first and wrap around with fresh
/// copy indices when exhausted; shortfalls move to the other source. The
/// augmented block is appended sorted by (source id, copy index).
inline Corpus balance_corpus(const Corpus& corpus, const BalancePlan& plan, const BalanceInputs& in) {
  if (!corpus.language()) throw InputError("balance_corpus needs a single-language corpus");
  const Language language = *corpus.language();
  const LabelDistribution dist = distribution(corpus);
  for (Label l : kAllLabels)
    if (dist[l] != plan.current[index_of(l)])
      throw InputError("balance plan was computed for a different distribution");

  Rng rng(derive_seed(in.noise.seed, "balance"));
  std::vector<LabeledComment> augmented;
  std::vector<detail::TranslationJob> jobs;
  std::vector<std::pair<const LabeledComment*, std::size_t>> noise_jobs;

  for (Label l : kAllLabels) {
    const std::size_t deficit = plan.deficit(l);
    if (deficit == 0) continue;
    std::vector<const LabeledComment*> raw, donors;
    for (const auto& c : corpus)
      if (c.label == l && c.provenance == Provenance::raw) raw.push_back(&c);
    for (const auto& d : in.donors)
      for (const auto& c : d)
        if (c.label == l && c.language != language) donors.push_back(&c);
    if (!in.translator) donors.clear();

    std::size_t n_translate = plan.quotas[index_of(l)].translation;
    std::size_t n_noise = deficit - n_translate;
    if (donors.empty()) {
      n_noise += n_translate;
      n_translate = 0;
    }
    if (raw.empty() && n_noise > 0) {
      if (donors.empty())
        throw InputError("cannot fill the " + std::string(to_string(l)) +
                         " deficit: no raw comments of that label and no donors");
      n_translate += n_noise;
      n_noise = 0;
    }

    // Donor picks: a seeded permutation, cycled when the quota exceeds the pool.
    std::vector<std::size_t> order(donors.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t k = 0; k < n_translate; ++k)
      jobs.push_back({donors[order[k % donors.size()]], k / donors.size()});

    std::unordered_map<const LabeledComment*, std::size_t> uses;
    for (std::size_t k = 0; k < n_noise; ++k) {
      const LabeledComment* src = raw[rng.index(raw.size())];
      noise_jobs.emplace_back(src, uses[src]++);
    }
  }

  struct Keyed {
    std::string source;
    Provenance provenance;
    std::size_t copy;
    LabeledComment comment;
  };
  std::vector<Keyed> keyed;
  if (!jobs.empty()) {
    std::vector<std::string> failed;
    auto translated = detail::run_translations(jobs, *in.translator, language, in.max_in_flight, &failed);
    if (!failed.empty()) {
      std::string list;
      for (const auto& id : failed) list += (list.empty() ? "" : ", ") + id;
      throw TranslationIncomplete("translation failed for donor comments: " + list, failed);
    }
    for (std::size_t i = 0; i < jobs.size(); ++i)
      keyed.push_back({jobs[i].source->id, Provenance::translated, jobs[i].copy_index, std::move(translated[i])});
  }
  if (!noise_jobs.empty()) {
    if (!in.resources) throw InputError("noise augmentation needs lexicon and stop-word resources");
    for (const auto& [src, copy] : noise_jobs)
      keyed.push_back({src->id, Provenance::noise_aug, copy, add_noise(*src, in.noise, *in.resources, copy)});
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return std::tie(a.source, a.provenance, a.copy) < std::tie(b.source, b.provenance, b.copy);
  });
  for (auto& k : keyed) augmented.push_back(std::move(k.comment));

  std::vector<LabeledComment> all(corpus.comments());
  all.insert(all.end(), std::make_move_iterator(augmented.begin()), std::make_move_iterator(augmented.end()));
  return Corpus(std::move(all), corpus.split(), corpus.language());
}

/// Translates every comment of every source corpus into `target`. On failure
/// the successful part is written to `partial_path` (when given) and
/// TranslationIncomplete lists the missing ids; the translation cache keeps
/// the finished work so a rerun only retries the failures.
inline Corpus build_translated_corpus(const std::vector<Corpus>& sources, TranslationService& translator,
                                      Language target, std::size_t max_in_flight = 4,
                                      const std::optional<std::filesystem::path>& partial_path = {}) {
  std::vector<detail::TranslationJob> jobs;
  for (const auto& src : sources) {
    if (src.language() == target)
      throw InputError("source corpus is already in " + std::string(to_string(target)));
    for (const auto& c : src) {
      if (c.language == target)
        throw InputError("source comment '" + c.id + "' is already in " + std::string(to_string(target)));
      jobs.push_back({&c, 0});
    }
  }
  std::vector<std::string> failed;
  auto out = detail::run_translations(jobs, translator, target, max_in_flight, &failed);
  if (!failed.empty()) {
    if (partial_path) save_corpus(Corpus(out, Split::training, target), *partial_path);
    std::string list;
    for (const auto& id : failed) list += (list.empty() ? "" : ", ") + id;
    throw TranslationIncomplete(std::to_string(failed.size()) + " comment(s) could not be translated: " + list,
                                failed);
  }
  return Corpus(std::move(out), Split::training, target);
}

}  // namespace aggro
