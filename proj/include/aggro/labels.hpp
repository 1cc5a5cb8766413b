#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "aggro/error.hpp"

namespace aggro {

/// TRAC-2 Sub-Task A aggression classes, in canonical index order.
enum class Label : std::uint8_t { NAG = 0, OAG = 1, CAG = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<Label, kNumLabels> kAllLabels{Label::NAG, Label::OAG, Label::CAG};

enum class Language : std::uint8_t { en, bn, hi };

inline constexpr std::array<Language, 3> kAllLanguages{Language::en, Language::bn, Language::hi};

enum class Provenance : std::uint8_t { raw, noise_aug, translated };

enum class Split : std::uint8_t { training, testing };

constexpr std::size_t index_of(Label l) { return static_cast<std::size_t>(l); }

constexpr Label label_from_index(std::size_t i) {
  if (i >= kNumLabels) throw InputError("label index out of range: " + std::to_string(i));
  return static_cast<Label>(i);
}

constexpr std::string_view to_string(Label l) {
  switch (l) {
    case Label::NAG: return "NAG";
    case Label::OAG: return "OAG";
    case Label::CAG: return "CAG";
  }
  return "?";
}

constexpr std::string_view to_string(Language l) {
  switch (l) {
    case Language::en: return "en";
    case Language::bn: return "bn";
    case Language::hi: return "hi";
  }
  return "?";
}

constexpr std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::raw: return "raw";
    case Provenance::noise_aug: return "noise_aug";
    case Provenance::translated: return "translated";
  }
  return "?";
}

constexpr std::string_view to_string(Split s) {
  return s == Split::training ? "training" : "testing";
}

inline std::optional<Label> parse_label(std::string_view s) {
  for (Label l : kAllLabels)
    if (s == to_string(l)) return l;
  return std::nullopt;
}

inline std::optional<Language> parse_language(std::string_view s) {
  for (Language l : kAllLanguages)
    if (s == to_string(l)) return l;
  return std::nullopt;
}

inline std::optional<Provenance> parse_provenance(std::string_view s) {
  for (Provenance p : {Provenance::raw, Provenance::noise_aug, Provenance::translated})
    if (s == to_string(p)) return p;
  return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "training" || s == "train") return Split::training;
  if (s == "testing" || s == "test") return Split::testing;
  return std::nullopt;
}

/// Throwing variants for config parsing.
inline Language language_or_throw(std::string_view s) {
  if (auto l = parse_language(s)) return *l;
  throw InputError("unknown language '" + std::string(s) + "' (expected en, bn or hi)");
}

inline Label label_or_throw(std::string_view s) {
  if (auto l = parse_label(s)) return *l;
  throw InputError("unknown label '" + std::string(s) + "'");
}

}  // namespace aggro
