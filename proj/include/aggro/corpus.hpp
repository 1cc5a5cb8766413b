#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aggro/dsv.hpp"
#include "aggro/error.hpp"
#include "aggro/hash.hpp"
#include "aggro/labels.hpp"
#include "aggro/random.hpp"
#include "aggro/unicode.hpp"
#include "json.hpp"

namespace aggro {

/// A single social-media comment with its Sub-Task A label.
struct LabeledComment {
  std::string id;
  std::string text;
  Label label = Label::NAG;
  Language language = Language::en;
  Provenance provenance = Provenance::raw;
  /// Id of the raw comment this one was derived from; absent iff provenance is raw.
  std::optional<std::string> source_id;

  friend bool operator==(const LabeledComment&, const LabeledComment&) = default;
};

/// Trims Unicode whitespace from both ends, leaving interior bytes untouched.
inline std::string trim(std::string_view s) {
  const std::u32string cps = unicode::decode_utf8(s);
  std::size_t b = 0, e = cps.size();
  while (b < e && unicode::is_whitespace(cps[b])) ++b;
  while (e > b && unicode::is_whitespace(cps[e - 1])) --e;
  if (b == 0 && e == cps.size()) return std::string(s);
  return unicode::encode_utf8(std::u32string_view(cps).substr(b, e - b));
}

inline void validate(const LabeledComment& c) {
  if (c.id.empty()) throw InputError("comment has an empty id");
  if (trim(c.text).empty()) throw InputError("comment '" + c.id + "' has empty text");
  if ((c.provenance == Provenance::raw) != !c.source_id.has_value())
    throw InputError("comment '" + c.id + "': source_id must be present exactly when provenance is not raw");
}

struct LabelDistribution {
  std::array<std::size_t, kNumLabels> counts{};
  std::size_t total = 0;

  std::size_t operator[](Label l) const { return counts[index_of(l)]; }
  std::size_t nag() const { return counts[0]; }
  std::size_t oag() const { return counts[1]; }
  std::size_t cag() const { return counts[2]; }

  static LabelDistribution of(std::size_t nag, std::size_t oag, std::size_t cag) {
    return {{nag, oag, cag}, nag + oag + cag};
  }

  LabelDistribution& operator+=(const LabelDistribution& o) {
    for (std::size_t i = 0; i < kNumLabels; ++i) counts[i] += o.counts[i];
    total += o.total;
    return *this;
  }
  friend LabelDistribution operator+(LabelDistribution a, const LabelDistribution& b) { return a += b; }
  friend bool operator==(const LabelDistribution&, const LabelDistribution&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const LabelDistribution& d) {
  return os << "{NAG " << d.nag() << ", OAG " << d.oag() << ", CAG " << d.cag() << ", total " << d.total << "}";
}

/// Corpus language tag; nullopt means "mixed".
using LanguageTag = std::optional<Language>;

inline std::string to_string(const LanguageTag& t) { return t ? std::string(to_string(*t)) : "mixed"; }

/// An ordered, immutable collection of comments from one split.
class Corpus {
 public:
  Corpus() = default;

  Corpus(std::vector<LabeledComment> comments, Split split, LanguageTag language)
      : comments_(std::move(comments)), split_(split), language_(language) {
    std::unordered_set<std::string_view> seen;
    seen.reserve(comments_.size());
    for (const auto& c : comments_) {
      validate(c);
      if (!seen.insert(c.id).second) throw InputError("duplicate comment id '" + c.id + "'");
      if (language_ && c.language != *language_)
        throw InputError("comment '" + c.id + "' has language " + std::string(to_string(c.language)) +
                         " but the corpus is tagged " + std::string(to_string(*language_)));
    }
  }

  const std::vector<LabeledComment>& comments() const { return comments_; }
  std::size_t size() const { return comments_.size(); }
  bool empty() const { return comments_.empty(); }
  const LabeledComment& operator[](std::size_t i) const { return comments_[i]; }
  auto begin() const { return comments_.begin(); }
  auto end() const { return comments_.end(); }

  Split split() const { return split_; }
  LanguageTag language() const { return language_; }

  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    out.reserve(comments_.size());
    for (const auto& c : comments_) out.push_back(c.text);
    return out;
  }

  std::vector<Label> labels() const {
    std::vector<Label> out;
    out.reserve(comments_.size());
    for (const auto& c : comments_) out.push_back(c.label);
    return out;
  }

  /// Content hash over every field of every comment, in order.
  std::uint64_t content_hash() const {
    Fnv1a h;
    h.field(to_string(split_)).field(to_string(language_));
    for (const auto& c : comments_) {
      h.field(c.id).field(c.text).field(to_string(c.label)).field(to_string(c.language));
      h.field(to_string(c.provenance)).field(c.source_id.value_or(""));
    }
    return h.digest();
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;

 private:
  std::vector<LabeledComment> comments_;
  Split split_ = Split::training;
  LanguageTag language_;
};

inline LabelDistribution distribution(const Corpus& corpus) {
  LabelDistribution d;
  for (const auto& c : corpus) ++d.counts[index_of(c.label)];
  d.total = corpus.size();
  return d;
}

/// Concatenation; the language tag stays when both sides agree and becomes mixed otherwise.
inline Corpus concat(const Corpus& a, const Corpus& b) {
  std::vector<LabeledComment> all(a.comments());
  all.insert(all.end(), b.begin(), b.end());
  const LanguageTag tag = (a.language() == b.language()) ? a.language() : std::nullopt;
  return Corpus(std::move(all), a.split(), tag);
}

/// Names the columns to read. Optional columns override per-row values when mapped.
struct ColumnMap {
  std::string id = "id";
  std::string text = "text";
  std::string label = "label";
  std::optional<std::string> language;
  std::optional<std::string> provenance;
  std::optional<std::string> source_id;
  char delimiter = ',';

  /// Layout of the TRAC-2 release files (ID, Text, Sub-task A, Sub-task B).
  static ColumnMap trac2() { return {"ID", "Text", "Sub-task A", std::nullopt, std::nullopt, std::nullopt, ','}; }

  /// Layout written by save_corpus.
  static ColumnMap saved() { return {"id", "text", "label", "language", "provenance", "source_id", ','}; }
};

inline Corpus load_corpus(const std::filesystem::path& path, LanguageTag language, Split split,
                          const ColumnMap& columns = ColumnMap{}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  dsv::Reader reader(in, columns.delimiter);
  auto header = reader.next();
  if (!header) throw InputError(path.string() + ": missing header row");
  if (!header->fields.empty() && header->fields[0].starts_with("\xEF\xBB\xBF"))
    header->fields[0].erase(0, 3);

  const auto column_index = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header->fields.begin(), header->fields.end(), name);
    if (it == header->fields.end()) throw InputError(path.string() + ": header has no column '" + name + "'");
    return static_cast<std::size_t>(it - header->fields.begin());
  };
  const auto optional_index = [&](const std::optional<std::string>& name) -> std::optional<std::size_t> {
    if (!name) return std::nullopt;
    return column_index(*name);
  };
  const std::size_t id_col = column_index(columns.id);
  const std::size_t text_col = column_index(columns.text);
  const std::size_t label_col = column_index(columns.label);
  const auto lang_col = optional_index(columns.language);
  const auto prov_col = optional_index(columns.provenance);
  const auto src_col = optional_index(columns.source_id);
  if (!language && !lang_col)
    throw InputError(path.string() + ": a mixed-language corpus needs a language column");

  const std::size_t width = header->fields.size();
  std::vector<LabeledComment> comments;
  std::unordered_set<std::string> ids;
  while (auto rec = reader.next()) {
    if (rec->fields.size() == 1 && rec->fields[0].empty()) continue;  // blank line
    const auto where = [&] { return path.string() + ":" + std::to_string(rec->line) + ": "; };
    if (rec->fields.size() != width)
      throw InputError(where() + "malformed row: expected " + std::to_string(width) + " columns, found " +
                       std::to_string(rec->fields.size()));
    LabeledComment c;
    c.id = trim(rec->fields[id_col]);
    c.text = trim(rec->fields[text_col]);
    const std::string label = trim(rec->fields[label_col]);
    auto parsed = parse_label(label);
    if (!parsed) throw InputError(where() + "unknown label '" + label + "'");
    c.label = *parsed;
    if (lang_col) {
      c.language = language_or_throw(rec->fields[*lang_col]);
    } else {
      c.language = *language;
    }
    c.provenance = Provenance::raw;
    if (prov_col) {
      auto p = parse_provenance(rec->fields[*prov_col]);
      if (!p) throw InputError(where() + "unknown provenance '" + rec->fields[*prov_col] + "'");
      c.provenance = *p;
    }
    if (src_col && !rec->fields[*src_col].empty()) c.source_id = rec->fields[*src_col];
    if (!ids.insert(c.id).second) throw InputError(where() + "duplicate id '" + c.id + "'");
    try {
      validate(c);
    } catch (const InputError& e) {
      throw InputError(where() + e.what());
    }
    comments.push_back(std::move(c));
  }
  return Corpus(std::move(comments), split, language);
}

/// Writes the corpus in the ColumnMap::saved() layout. Text is written verbatim
/// (quoted when needed), so tabs and newlines survive a round trip.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  const ColumnMap cols = ColumnMap::saved();
  out << dsv::join({cols.id, cols.text, cols.label, *cols.language, *cols.provenance, *cols.source_id},
                   cols.delimiter)
      << '\n';
  for (const auto& c : corpus) {
    out << dsv::join({c.id, c.text, std::string(to_string(c.label)), std::string(to_string(c.language)),
                      std::string(to_string(c.provenance)), c.source_id.value_or("")},
                     cols.delimiter)
        << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing corpus file " + path.string());
}

inline Corpus load_saved_corpus(const std::filesystem::path& path, LanguageTag language, Split split) {
  return load_corpus(path, language, split, ColumnMap::saved());
}

/// Stratified, seeded train/validation partition. Within each label the
/// validation share is round(count * fraction); both sides keep file order.
inline std::pair<Corpus, Corpus> split_train_validation(const Corpus& corpus, double validation_fraction,
                                                        std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw InputError("validation fraction must lie strictly between 0 and 1");
  if (corpus.empty()) throw InputError("cannot split an empty corpus");

  std::array<std::vector<std::size_t>, kNumLabels> by_label;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_label[index_of(corpus[i].label)].push_back(i);

  std::vector<bool> to_validation(corpus.size(), false);
  std::size_t n_val = 0;
  Rng rng(seed);
  for (auto& members : by_label) {
    const auto take = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(members.size())));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.index(i)]);
    for (std::size_t k = 0; k < take; ++k) to_validation[members[k]] = true;
    n_val += take;
  }
  if (n_val == 0 || n_val == corpus.size())
    throw InputError("corpus of " + std::to_string(corpus.size()) +
                     " comments is too small to stratify at this validation fraction");

  std::vector<LabeledComment> train, val;
  for (std::size_t i = 0; i < corpus.size(); ++i) (to_validation[i] ? val : train).push_back(corpus[i]);
  return {Corpus(std::move(train), corpus.split(), corpus.language()),
          Corpus(std::move(val), corpus.split(), corpus.language())};
}

/// Reference counts of the TRAC-2 Sub-Task A release.
inline std::optional<LabelDistribution> trac2_reference(Language language, Split split) {
  const bool train = split == Split::training;
  switch (language) {
    case Language::en: return train ? LabelDistribution::of(3375, 453, 435) : LabelDistribution::of(836, 117, 113);
    case Language::hi: return train ? LabelDistribution::of(2245, 829, 910) : LabelDistribution::of(578, 211, 208);
    case Language::bn: return train ? LabelDistribution::of(2078, 898, 850) : LabelDistribution::of(522, 218, 217);
  }
  return std::nullopt;
}

inline nlohmann::json to_json(const LabelDistribution& d) {
  return {{"NAG", d.nag()}, {"OAG", d.oag()}, {"CAG", d.cag()}, {"total", d.total}};
}

inline LabelDistribution distribution_from_json(const nlohmann::json& j) {
  return LabelDistribution::of(j.at("NAG").get<std::size_t>(), j.at("OAG").get<std::size_t>(),
                               j.at("CAG").get<std::size_t>());
}

/// Per-corpus bookkeeping written next to every persisted corpus.
struct CorpusManifest {
  std::string name;
  Split split = Split::training;
  LanguageTag language;
  LabelDistribution counts;
  std::vector<std::string> source_files;
  std::vector<std::pair<std::string, std::uint64_t>> seed_lineage;
  std::string content_hash;

  static CorpusManifest describe(const Corpus& c, std::string name, std::vector<std::string> sources = {},
                                 std::vector<std::pair<std::string, std::uint64_t>> seeds = {}) {
    return {std::move(name), c.split(),        c.language(), distribution(c),
            std::move(sources), std::move(seeds), to_hex(c.content_hash())};
  }

  nlohmann::json to_json() const {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& [what, seed] : seed_lineage) seeds.push_back({{"step", what}, {"seed", seed}});
    return {{"name", name},
            {"split", std::string(aggro::to_string(split))},
            {"language", aggro::to_string(language)},
            {"counts", aggro::to_json(counts)},
            {"source_files", source_files},
            {"seed_lineage", seeds},
            {"content_hash", content_hash}};
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

}  // namespace aggro
