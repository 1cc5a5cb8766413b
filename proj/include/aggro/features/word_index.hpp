#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aggro/corpus.hpp"
#include "aggro/dsv.hpp"
#include "aggro/features/batch.hpp"
#include "aggro/hash.hpp"
#include "aggro/unicode.hpp"

namespace aggro {

/// Splits on Unicode whitespace and punctuation, dropping both; Latin letters are lowercased.
inline std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::u32string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(unicode::encode_utf8(unicode::to_lower_latin(cur)));
    cur.clear();
  };
  for (char32_t cp : unicode::decode_utf8(text)) {
    if (unicode::is_whitespace(cp) || unicode::is_punctuation(cp) || unicode::is_control(cp) || cp == 0) {
      flush();
    } else {
      cur.push_back(cp);
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  explicit Vocabulary(std::size_t max_size = 3) : max_size_(max_size) {
    if (max_size < 3) throw InputError("vocabulary max_size must be at least 3");
    words_ = {kPadToken, kUnkToken};
  }

  /// Appends a word at the next index; duplicates and overflow are errors.
  std::int32_t add(const std::string& word) {
    if (word.empty()) throw InputError("empty vocabulary word");
    if (index_.count(word) || word == kPadToken || word == kUnkToken)
      throw InputError("duplicate vocabulary word '" + word + "'");
    if (words_.size() >= max_size_) throw InputError("vocabulary is full");
    const auto id = static_cast<std::int32_t>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  std::int32_t id_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word_of(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) throw InputError("token id out of range");
    return words_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return words_.size(); }
  std::size_t max_size() const { return max_size_; }
  const std::vector<std::string>& words() const { return words_; }

  std::string fingerprint() const {
    Fnv1a h;
    h.field("word_index");
    for (const auto& w : words_) h.field(w);
    return "word_index:" + to_hex(h.digest());
  }

  /// One `word<TAB>index` line per real word (PAD and UNK are implicit).
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write vocabulary " + path.string());
    out << "#max_size\t" << max_size_ << '\n';
    for (std::size_t i = 2; i < words_.size(); ++i) out << dsv::quote(words_[i], '\t') << '\t' << i << '\n';
    if (!out) throw IoError("write failed for " + path.string());
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read vocabulary " + path.string());
    dsv::Reader reader(in, '\t');
    std::size_t max_size = 0;
    std::vector<std::pair<std::string, std::size_t>> rows;
    while (auto rec = reader.next()) {
      if (rec->fields.size() != 2) {
        throw InputError(path.string() + ":" + std::to_string(rec->line) + ": expected word and index");
      }
      std::size_t idx = 0;
      try {
        idx = std::stoul(rec->fields[1]);
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(rec->line) + ": bad index");
      }
      if (rec->fields[0] == "#max_size") {
        max_size = idx;
      } else {
        rows.emplace_back(rec->fields[0], idx);
      }
    }
    Vocabulary v(max_size ? max_size : rows.size() + 2);
    for (const auto& [w, idx] : rows) {
      if (idx != v.size()) throw InputError("vocabulary indices in " + path.string() + " are not contiguous");
      v.add(w);
    }
    return v;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.words_ == b.words_ && a.max_size_ == b.max_size_;
  }

 private:
  std::size_t max_size_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Keeps the max_size-2 most frequent tokens with count >= min_frequency; ties go to the earlier first occurrence.
inline Vocabulary fit_vocabulary(const Corpus& corpus, std::size_t max_size, std::size_t min_frequency = 1) {
  if (max_size < 3) throw InputError("vocabulary max_size must be at least 3");
  if (corpus.empty()) throw InputError("cannot fit a vocabulary on an empty corpus");
  struct Stat {
    std::size_t count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string, Stat> stats;
  std::vector<std::string> order;
  for (const auto& c : corpus) {
    for (auto& tok : word_tokenize(c.text)) {
      auto [it, fresh] = stats.try_emplace(tok, Stat{0, order.size()});
      if (fresh) order.push_back(tok);
      ++it->second.count;
    }
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < order.size(); ++i)
    if (stats[order[i]].count >= min_frequency) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return stats[order[a]].count > stats[order[b]].count; });
  Vocabulary v(max_size);
  for (std::size_t i : idx) {
    if (v.size() >= max_size) break;
    if (order[i] == Vocabulary::kPadToken || order[i] == Vocabulary::kUnkToken) continue;
    v.add(order[i]);
  }
  return v;
}

inline std::vector<std::int32_t> word_ids(std::string_view text, const Vocabulary& vocab) {
  std::vector<std::int32_t> ids;
  for (const auto& tok : word_tokenize(text)) ids.push_back(vocab.id_of(tok));
  return ids;
}

/// Tail truncation, post-padding with PAD.
inline TokenizedBatch encode_word_index(const std::vector<std::string>& texts, const Vocabulary& vocab,
                                        std::size_t max_len = 100) {
  if (max_len < 1) throw InputError("max_len must be at least 1");
  TokenizedBatch batch(texts.size(), max_len, EncodingScheme::word_index, Vocabulary::kPad, vocab.fingerprint());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto ids = word_ids(texts[i], vocab);
    if (ids.size() > max_len) ids.resize(max_len);
    batch.set_row(i, ids);
  }
  return batch;
}

inline TokenizedBatch encode_word_index(const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len = 100) {
  return encode_word_index(corpus.texts(), vocab, max_len);
}

/// Words for the unmasked positions of row i (UNK decodes to its marker).
inline std::vector<std::string> decode_word_index(const TokenizedBatch& batch, std::size_t i, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < batch.lengths[i]; ++j) out.push_back(vocab.word_of(batch.id(i, j)));
  return out;
}

}  // namespace aggro
