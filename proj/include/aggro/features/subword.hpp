#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aggro/error.hpp"
#include "aggro/features/batch.hpp"
#include "aggro/hash.hpp"
#include "aggro/unicode.hpp"
#include "json.hpp"

namespace aggro {

enum class TokenizerFamily : std::uint8_t { wordpiece, byte_bpe };

inline std::string to_string(TokenizerFamily f) { return f == TokenizerFamily::wordpiece ? "wordpiece" : "byte_bpe"; }

/// Pretrained subword tokenizer handle. Immutable once loaded; safe to share across threads.
class SubwordTokenizer {
 public:
  virtual ~SubwordTokenizer() = default;

  virtual TokenizerFamily family() const = 0;
  /// Content ids without any markers.
  virtual std::vector<std::int32_t> encode(std::string_view text) const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
  virtual std::string decode(const std::vector<std::int32_t>& ids) const = 0;

  virtual std::int32_t cls_id() const = 0;
  virtual std::int32_t sep_id() const = 0;
  virtual std::int32_t pad_id() const = 0;
  virtual std::size_t vocab_size() const = 0;

  const std::string& fingerprint() const { return fingerprint_; }

 protected:
  std::string fingerprint_;

  void set_fingerprint(const std::vector<std::string>& tokens) {
    Fnv1a h;
    h.field(to_string(family()));
    for (const auto& t : tokens) h.field(t);
    fingerprint_ = to_string(family()) + ":" + to_hex(h.digest());
  }
};

namespace detail {

inline std::vector<std::string> tokens_by_id(const std::unordered_map<std::string, std::int32_t>& vocab) {
  std::vector<std::string> out(vocab.size());
  for (const auto& [tok, id] : vocab) {
    if (id < 0 || static_cast<std::size_t>(id) >= out.size() || !out[static_cast<std::size_t>(id)].empty())
      throw InputError("tokenizer vocabulary ids are not a dense permutation");
    out[static_cast<std::size_t>(id)] = tok;
  }
  return out;
}

inline std::int32_t require_token(const std::unordered_map<std::string, std::int32_t>& vocab, const std::string& tok) {
  auto it = vocab.find(tok);
  if (it == vocab.end()) throw InputError("tokenizer vocabulary lacks '" + tok + "'");
  return it->second;
}

}  // namespace detail

struct WordPieceOptions {
  bool lowercase = true;
  std::optional<bool> strip_accents;  // follows lowercase when unset
  bool split_cjk = true;
  std::size_t max_chars_per_word = 100;
  std::string unk = "[UNK]", cls = "[CLS]", sep = "[SEP]", pad = "[PAD]";
  std::string prefix = "##";
};

/// BERT-style tokenizer: clean, isolate CJK, optional accent strip and lowercase,
/// split on whitespace and punctuation, then greedy longest-match word pieces.
class WordPieceTokenizer final : public SubwordTokenizer {
 public:
  WordPieceTokenizer(std::vector<std::string> vocab, WordPieceOptions opts = {})
      : opts_(std::move(opts)), tokens_(std::move(vocab)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<std::int32_t>(i));
    unk_ = detail::require_token(ids_, opts_.unk);
    cls_ = detail::require_token(ids_, opts_.cls);
    sep_ = detail::require_token(ids_, opts_.sep);
    pad_ = detail::require_token(ids_, opts_.pad);
    set_fingerprint(tokens_);
  }

  static std::shared_ptr<WordPieceTokenizer> from_file(const std::filesystem::path& vocab_txt, WordPieceOptions opts) {
    std::ifstream in(vocab_txt, std::ios::binary);
    if (!in) throw IoError("cannot read " + vocab_txt.string());
    std::vector<std::string> vocab;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      vocab.push_back(line);
    }
    return std::make_shared<WordPieceTokenizer>(std::move(vocab), std::move(opts));
  }

  TokenizerFamily family() const override { return TokenizerFamily::wordpiece; }
  std::int32_t cls_id() const override { return cls_; }
  std::int32_t sep_id() const override { return sep_; }
  std::int32_t pad_id() const override { return pad_; }
  std::int32_t unk_id() const { return unk_; }
  std::size_t vocab_size() const override { return tokens_.size(); }
  const WordPieceOptions& options() const { return opts_; }

  std::u32string normalize(std::string_view text) const {
    std::u32string out;
    for (char32_t cp : unicode::decode_utf8(text)) {
      if (cp == 0 || cp == unicode::kReplacement) continue;
      if (cp == U'\t' || cp == U'\n' || cp == U'\r' || unicode::is_whitespace(cp)) {
        out.push_back(U' ');
        continue;
      }
      if (unicode::is_control(cp)) continue;
      if (opts_.split_cjk && unicode::is_cjk(cp)) {
        out.push_back(U' ');
        out.push_back(cp);
        out.push_back(U' ');
        continue;
      }
      out.push_back(cp);
    }
    if (opts_.strip_accents.value_or(opts_.lowercase)) out = unicode::strip_accents(out);
    if (opts_.lowercase) out = unicode::to_lower(out);
    return out;
  }

  /// Whitespace split with every punctuation character isolated.
  static std::vector<std::u32string> pre_tokenize(const std::u32string& s) {
    std::vector<std::u32string> words;
    std::u32string cur;
    for (char32_t cp : s) {
      if (unicode::is_whitespace(cp)) {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
      } else if (unicode::is_punctuation(cp)) {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
        words.emplace_back(1, cp);
      } else {
        cur.push_back(cp);
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
  }

  std::vector<std::string> tokenize(std::string_view text) const override {
    std::vector<std::string> out;
    for (const auto& word : pre_tokenize(normalize(text))) {
      if (word.size() > opts_.max_chars_per_word) {
        out.push_back(opts_.unk);
        continue;
      }
      std::vector<std::string> pieces;
      std::size_t start = 0;
      bool bad = false;
      while (start < word.size()) {
        std::size_t end = word.size();
        std::optional<std::string> found;
        while (start < end) {
          std::string piece = unicode::encode_utf8(std::u32string_view(word).substr(start, end - start));
          if (start > 0) piece = opts_.prefix + piece;
          if (ids_.count(piece)) {
            found = std::move(piece);
            break;
          }
          --end;
        }
        if (!found) {
          bad = true;
          break;
        }
        pieces.push_back(std::move(*found));
        start = end;
      }
      if (bad) {
        out.push_back(opts_.unk);
      } else {
        out.insert(out.end(), pieces.begin(), pieces.end());
      }
    }
    return out;
  }

  std::vector<std::int32_t> encode(std::string_view text) const override {
    std::vector<std::int32_t> ids;
    for (const auto& t : tokenize(text)) ids.push_back(ids_.at(t));
    return ids;
  }

  std::string decode(const std::vector<std::int32_t>& ids) const override {
    std::string out;
    for (auto id : ids) {
      const auto& t = tokens_.at(static_cast<std::size_t>(id));
      if (t.starts_with(opts_.prefix)) {
        out += t.substr(opts_.prefix.size());
      } else {
        if (!out.empty()) out += ' ';
        out += t;
      }
    }
    return out;
  }

 private:
  WordPieceOptions opts_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::int32_t unk_ = 0, cls_ = 0, sep_ = 0, pad_ = 0;
};

namespace detail {

/// The reversible byte -> printable code point table of byte-level BPE.
inline const std::array<char32_t, 256>& byte_encoder() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[static_cast<std::size_t>(b)] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[static_cast<std::size_t>(b)] = true;
    char32_t next = 256;
    for (std::size_t b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return t;
  }();
  return table;
}

inline const std::unordered_map<char32_t, std::uint8_t>& byte_decoder() {
  static const std::unordered_map<char32_t, std::uint8_t> table = [] {
    std::unordered_map<char32_t, std::uint8_t> t;
    const auto& enc = byte_encoder();
    for (std::size_t b = 0; b < 256; ++b) t.emplace(enc[b], static_cast<std::uint8_t>(b));
    return t;
  }();
  return table;
}

/// Splits like the GPT-2 pattern
///   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
inline std::vector<std::u32string> gpt2_pre_tokenize(const std::u32string& s) {
  using namespace unicode;
  auto other = [](char32_t c) { return !is_whitespace(c) && !is_letter(c) && !is_number(c); };
  const std::size_t n = s.size();
  std::vector<std::u32string> out;
  std::size_t i = 0;
  auto run = [&](std::size_t from, auto pred) {
    while (from < n && pred(s[from])) ++from;
    return from;
  };
  while (i < n) {
    const char32_t c = s[i];
    if (c == U'\'' && i + 1 < n) {
      static const std::u32string_view kSuffixes[] = {U"s", U"t", U"re", U"ve", U"m", U"ll", U"d"};
      bool hit = false;
      for (auto suf : kSuffixes) {
        if (s.compare(i + 1, suf.size(), suf) == 0) {
          out.push_back(s.substr(i, 1 + suf.size()));
          i += 1 + suf.size();
          hit = true;
          break;
        }
      }
      if (hit) continue;
    }
    const bool lead_space = c == U' ' && i + 1 < n;
    const std::size_t body = lead_space ? i + 1 : i;
    if (body < n) {
      const char32_t b = s[body];
      bool (*cls)(char32_t) = nullptr;
      if (is_letter(b)) {
        cls = [](char32_t x) { return is_letter(x); };
      } else if (is_number(b)) {
        cls = [](char32_t x) { return is_number(x); };
      } else if (other(b)) {
        cls = [](char32_t x) { return !is_whitespace(x) && !is_letter(x) && !is_number(x); };
      }
      if (cls && (lead_space || body == i)) {
        const std::size_t end = run(body, cls);
        out.push_back(s.substr(i, end - i));
        i = end;
        continue;
      }
    }
    // whitespace
    const std::size_t end = run(i, [](char32_t x) { return is_whitespace(x); });
    if (end == n || end - i == 1) {
      out.push_back(s.substr(i, end - i));
      i = end;
    } else {
      out.push_back(s.substr(i, end - i - 1));
      i = end - 1;
    }
  }
  return out;
}

}  // namespace detail

struct ByteBpeOptions {
  std::string eos = "<|endoftext|>";
  std::optional<std::string> pad;  // defaults to eos
};

/// GPT-2 style byte-level BPE.
class ByteBpeTokenizer final : public SubwordTokenizer {
 public:
  ByteBpeTokenizer(std::unordered_map<std::string, std::int32_t> vocab,
                   const std::vector<std::pair<std::string, std::string>>& merges, ByteBpeOptions opts = {})
      : opts_(std::move(opts)), ids_(std::move(vocab)) {
    tokens_ = detail::tokens_by_id(ids_);
    for (std::size_t r = 0; r < merges.size(); ++r) ranks_.emplace(merges[r].first + ' ' + merges[r].second, r);
    eos_ = detail::require_token(ids_, opts_.eos);
    pad_ = detail::require_token(ids_, opts_.pad.value_or(opts_.eos));
    set_fingerprint(tokens_);
  }

  static std::shared_ptr<ByteBpeTokenizer> from_files(const std::filesystem::path& vocab_json,
                                                      const std::filesystem::path& merges_txt,
                                                      ByteBpeOptions opts = {}) {
    std::ifstream vin(vocab_json, std::ios::binary);
    if (!vin) throw IoError("cannot read " + vocab_json.string());
    std::unordered_map<std::string, std::int32_t> vocab;
    try {
      const auto j = nlohmann::json::parse(vin);
      for (const auto& [k, v] : j.items()) vocab.emplace(k, v.get<std::int32_t>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(vocab_json.string() + ": " + e.what());
    }
    std::ifstream min(merges_txt, std::ios::binary);
    if (!min) throw IoError("cannot read " + merges_txt.string());
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    while (std::getline(min, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.starts_with("#version")) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw InputError(merges_txt.string() + ": bad merge line '" + line + "'");
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return std::make_shared<ByteBpeTokenizer>(std::move(vocab), merges, std::move(opts));
  }

  TokenizerFamily family() const override { return TokenizerFamily::byte_bpe; }
  std::int32_t cls_id() const override { return eos_; }
  std::int32_t sep_id() const override { return eos_; }
  std::int32_t pad_id() const override { return pad_; }
  std::size_t vocab_size() const override { return tokens_.size(); }

  std::vector<std::string> tokenize(std::string_view text) const override {
    std::vector<std::string> out;
    const auto& enc = detail::byte_encoder();
    for (const auto& word : detail::gpt2_pre_tokenize(unicode::decode_utf8(text))) {
      std::string mapped;
      for (unsigned char b : unicode::encode_utf8(word)) unicode::append_utf8(mapped, enc[b]);
      for (auto& piece : bpe(mapped)) out.push_back(std::move(piece));
    }
    return out;
  }

  std::vector<std::int32_t> encode(std::string_view text) const override {
    std::vector<std::int32_t> ids;
    for (const auto& t : tokenize(text)) {
      auto it = ids_.find(t);
      if (it == ids_.end()) throw InputError("byte-level piece '" + t + "' missing from vocabulary");
      ids.push_back(it->second);
    }
    return ids;
  }

  std::string decode(const std::vector<std::int32_t>& ids) const override {
    const auto& dec = detail::byte_decoder();
    std::string out;
    for (auto id : ids) {
      for (char32_t cp : unicode::decode_utf8(tokens_.at(static_cast<std::size_t>(id)))) {
        auto it = dec.find(cp);
        if (it == dec.end()) {
          unicode::append_utf8(out, cp);
        } else {
          out.push_back(static_cast<char>(it->second));
        }
      }
    }
    return out;
  }

 private:
  std::vector<std::string> bpe(const std::string& mapped) const {
    std::vector<std::string> parts;
    for (char32_t cp : unicode::decode_utf8(mapped)) {
      std::string p;
      unicode::append_utf8(p, cp);
      parts.push_back(std::move(p));
    }
    while (parts.size() > 1) {
      std::size_t best = std::numeric_limits<std::size_t>::max();
      for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        auto it = ranks_.find(parts[k] + ' ' + parts[k + 1]);
        if (it != ranks_.end()) best = std::min(best, it->second);
      }
      if (best == std::numeric_limits<std::size_t>::max()) break;
      std::vector<std::string> merged;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (k + 1 < parts.size()) {
          auto it = ranks_.find(parts[k] + ' ' + parts[k + 1]);
          if (it != ranks_.end() && it->second == best) {
            merged.push_back(parts[k] + parts[k + 1]);
            ++k;
            continue;
          }
        }
        merged.push_back(parts[k]);
      }
      parts = std::move(merged);
    }
    return parts;
  }

  ByteBpeOptions opts_;
  std::unordered_map<std::string, std::int32_t> ids_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ranks_;
  std::int32_t eos_ = 0, pad_ = 0;
};

/// Loads from a checkpoint directory: vocab.txt (WordPiece) or vocab.json + merges.txt (byte-level BPE),
/// honouring tokenizer_config.json when present.
inline std::shared_ptr<SubwordTokenizer> load_tokenizer(const std::filesystem::path& dir) {
  nlohmann::json cfg = nlohmann::json::object();
  if (std::ifstream in(dir / "tokenizer_config.json"); in) {
    try {
      cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InputError((dir / "tokenizer_config.json").string() + ": " + e.what());
    }
  }
  auto str = [&](const char* key, std::string fallback) {
    if (!cfg.contains(key) || cfg[key].is_null()) return fallback;
    const auto& v = cfg[key];
    if (v.is_string()) return v.get<std::string>();
    if (v.is_object() && v.contains("content")) return v["content"].get<std::string>();
    return fallback;
  };
  if (std::filesystem::exists(dir / "vocab.txt")) {
    WordPieceOptions o;
    o.lowercase = cfg.value("do_lower_case", true);
    if (cfg.contains("strip_accents") && cfg["strip_accents"].is_boolean()) o.strip_accents = cfg["strip_accents"].get<bool>();
    o.split_cjk = cfg.value("tokenize_chinese_chars", true);
    o.unk = str("unk_token", o.unk);
    o.cls = str("cls_token", o.cls);
    o.sep = str("sep_token", o.sep);
    o.pad = str("pad_token", o.pad);
    return WordPieceTokenizer::from_file(dir / "vocab.txt", std::move(o));
  }
  if (std::filesystem::exists(dir / "vocab.json") && std::filesystem::exists(dir / "merges.txt")) {
    ByteBpeOptions o;
    o.eos = str("eos_token", o.eos);
    if (cfg.contains("pad_token") && !cfg["pad_token"].is_null()) o.pad = str("pad_token", o.eos);
    return ByteBpeTokenizer::from_files(dir / "vocab.json", dir / "merges.txt", std::move(o));
  }
  throw IoError("no tokenizer files in " + dir.string());
}

/// Each row is [cls] content [sep]; content is cut from the tail so both markers survive.
/// A non-empty `expected_fingerprint` must match the tokenizer's.
inline TokenizedBatch encode_transformer(const std::vector<std::string>& texts, const SubwordTokenizer& tok,
                                         std::size_t max_len = 128, std::string_view expected_fingerprint = {}) {
  if (max_len < 2) throw InputError("max_len must leave room for both markers");
  if (!expected_fingerprint.empty() && expected_fingerprint != tok.fingerprint()) {
    throw InputError("tokenizer fingerprint " + tok.fingerprint() + " does not match the model's " +
                     std::string(expected_fingerprint));
  }
  TokenizedBatch batch(texts.size(), max_len, EncodingScheme::transformer_subword, tok.pad_id(), tok.fingerprint());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto content = tok.encode(texts[i]);
    if (content.size() > max_len - 2) content.resize(max_len - 2);
    std::vector<std::int32_t> row;
    row.reserve(content.size() + 2);
    row.push_back(tok.cls_id());
    row.insert(row.end(), content.begin(), content.end());
    row.push_back(tok.sep_id());
    batch.set_row(i, row);
  }
  return batch;
}

}  // namespace aggro
