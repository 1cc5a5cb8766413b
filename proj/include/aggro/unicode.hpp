#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aggro/detail/unicode_tables.hpp"

namespace aggro::unicode {

enum Category : std::uint8_t {
  kLetter = 1,
  kNumber = 2,
  kPunctuation = 4,
  kNonspacingMark = 8,
  kWhitespace = 16,
  kControl = 32,
  kMark = 64,
};

inline constexpr char32_t kReplacement = 0xFFFD;

/// Decodes UTF-8; invalid sequences decode to U+FFFD one byte at a time.
inline std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (int k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (ok && ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
               cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)))
      ok = false;
    if (!ok) {
      out.push_back(kReplacement);
      ++i;
    } else {
      out.push_back(cp);
      i += len;
    }
  }
  return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

inline std::uint8_t category(char32_t cp) {
  const auto& t = detail::kCategoryRanges;
  auto it = std::upper_bound(t.begin(), t.end(), cp,
                             [](char32_t c, const detail::CategoryRange& r) { return c < r.lo; });
  if (it == t.begin()) return 0;
  --it;
  return cp <= it->hi ? it->mask : 0;
}

inline bool is_letter(char32_t cp) { return category(cp) & kLetter; }
inline bool is_number(char32_t cp) { return category(cp) & kNumber; }
inline bool is_whitespace(char32_t cp) { return category(cp) & kWhitespace; }
inline bool is_control(char32_t cp) { return category(cp) & kControl; }
inline bool is_nonspacing_mark(char32_t cp) { return category(cp) & kNonspacingMark; }
inline bool is_mark(char32_t cp) { return category(cp) & kMark; }

/// Unicode punctuation plus the ASCII symbol ranges (`$`, `+`, `^`, ...).
inline bool is_punctuation(char32_t cp) {
  if ((cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) || (cp >= 91 && cp <= 96) ||
      (cp >= 123 && cp <= 126))
    return true;
  return category(cp) & kPunctuation;
}

inline bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0x2A700 && cp <= 0x2B73F) ||
         (cp >= 0x2B740 && cp <= 0x2B81F) || (cp >= 0x2B820 && cp <= 0x2CEAF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x2F800 && cp <= 0x2FA1F);
}

/// Latin script blocks: Basic Latin through Latin Extended-B, plus Extended Additional.
inline bool is_latin(char32_t cp) {
  return cp <= 0x024F || (cp >= 0x1E00 && cp <= 0x1EFF) || (cp >= 0x2C60 && cp <= 0x2C7F) ||
         (cp >= 0xA720 && cp <= 0xA7FF) || (cp >= 0xFF00 && cp <= 0xFF5E);
}

namespace detail {
inline const CodepointMap* find_map(const auto& table, char32_t cp) {
  auto it = std::lower_bound(table.begin(), table.end(), cp,
                             [](const CodepointMap& m, char32_t c) { return m.from < c; });
  return (it != table.end() && it->from == cp) ? &*it : nullptr;
}
}  // namespace detail

inline void append_lower(std::u32string& out, char32_t cp) {
  if (const auto* m = detail::find_map(detail::kLowercase, cp))
    out.append(m->to.data(), m->len);
  else
    out.push_back(cp);
}

inline std::u32string to_lower(std::u32string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_lower(out, cp);
  return out;
}

/// Lowercases only code points in Latin blocks; other scripts pass through.
inline std::u32string to_lower_latin(std::u32string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (char32_t cp : s) {
    if (is_latin(cp))
      append_lower(out, cp);
    else
      out.push_back(cp);
  }
  return out;
}

/// Canonical decomposition followed by removal of nonspacing marks.
inline std::u32string strip_accents(std::u32string_view s) {
  std::u32string out;
  out.reserve(s.size());
  for (char32_t cp : s) {
    if (const auto* m = detail::find_map(detail::kStripAccents, cp)) {
      out.append(m->to.data(), m->len);
    } else if (!is_nonspacing_mark(cp)) {
      out.push_back(cp);
    }
  }
  return out;
}

}  // namespace aggro::unicode
