#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aggro/error.hpp"

namespace aggro {

enum class EncodingScheme : std::uint8_t { word_index, transformer_subword };

inline std::string to_string(EncodingScheme s) {
  return s == EncodingScheme::word_index ? "word_index" : "transformer_subword";
}

/// Post-padded integer matrix [rows x max_len] with its attention mask.
/// Invariant: mask(i, j) == 1 exactly when j < lengths[i].
struct TokenizedBatch {
  std::size_t rows = 0;
  std::size_t max_len = 0;
  std::vector<std::int32_t> token_ids;
  std::vector<std::uint8_t> attention_mask;
  std::vector<std::size_t> lengths;
  EncodingScheme scheme = EncodingScheme::word_index;
  std::string fingerprint;  // vocabulary that produced the ids

  TokenizedBatch() = default;
  TokenizedBatch(std::size_t n_rows, std::size_t len, EncodingScheme s, std::int32_t pad_id, std::string fp)
      : rows(n_rows),
        max_len(len),
        token_ids(n_rows * len, pad_id),
        attention_mask(n_rows * len, 0),
        lengths(n_rows, 0),
        scheme(s),
        fingerprint(std::move(fp)) {}

  std::int32_t id(std::size_t i, std::size_t j) const { return token_ids[i * max_len + j]; }
  std::int32_t& id(std::size_t i, std::size_t j) { return token_ids[i * max_len + j]; }
  bool mask(std::size_t i, std::size_t j) const { return attention_mask[i * max_len + j] != 0; }

  /// Writes row i from `ids` (already truncated to max_len) and fixes mask/length.
  void set_row(std::size_t i, const std::vector<std::int32_t>& ids) {
    if (ids.size() > max_len) throw InputError("row longer than max_len");
    for (std::size_t j = 0; j < ids.size(); ++j) {
      token_ids[i * max_len + j] = ids[j];
      attention_mask[i * max_len + j] = 1;
    }
    lengths[i] = ids.size();
  }

  std::vector<std::int32_t> row(std::size_t i) const {
    return {token_ids.begin() + static_cast<std::ptrdiff_t>(i * max_len),
            token_ids.begin() + static_cast<std::ptrdiff_t>(i * max_len + lengths[i])};
  }

  /// Rows [begin, end) as a new batch.
  TokenizedBatch slice(std::size_t begin, std::size_t end) const {
    TokenizedBatch out;
    out.rows = end - begin;
    out.max_len = max_len;
    out.scheme = scheme;
    out.fingerprint = fingerprint;
    out.token_ids.assign(token_ids.begin() + static_cast<std::ptrdiff_t>(begin * max_len),
                         token_ids.begin() + static_cast<std::ptrdiff_t>(end * max_len));
    out.attention_mask.assign(attention_mask.begin() + static_cast<std::ptrdiff_t>(begin * max_len),
                              attention_mask.begin() + static_cast<std::ptrdiff_t>(end * max_len));
    out.lengths.assign(lengths.begin() + static_cast<std::ptrdiff_t>(begin),
                       lengths.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
  }

  /// Gathers the given rows in order.
  TokenizedBatch select(const std::vector<std::size_t>& idx) const {
    TokenizedBatch out;
    out.rows = idx.size();
    out.max_len = max_len;
    out.scheme = scheme;
    out.fingerprint = fingerprint;
    out.token_ids.reserve(idx.size() * max_len);
    out.attention_mask.reserve(idx.size() * max_len);
    for (std::size_t i : idx) {
      out.token_ids.insert(out.token_ids.end(), token_ids.begin() + static_cast<std::ptrdiff_t>(i * max_len),
                           token_ids.begin() + static_cast<std::ptrdiff_t>((i + 1) * max_len));
      out.attention_mask.insert(out.attention_mask.end(),
                                attention_mask.begin() + static_cast<std::ptrdiff_t>(i * max_len),
                                attention_mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * max_len));
      out.lengths.push_back(lengths[i]);
    }
    return out;
  }
};

}  // namespace aggro
