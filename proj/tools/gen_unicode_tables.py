#!/usr/bin/env python3
"""Generates include/aggro/detail/unicode_tables.hpp from Python's unicodedata."""
import sys
import unicodedata

LETTER, NUMBER, PUNCT, NONSPACING_MARK, SPACE, CONTROL, MARK = 1, 2, 4, 8, 16, 32, 64

WHITE_SPACE = {0x09, 0x0A, 0x0B, 0x0C, 0x0D, 0x20, 0x85, 0xA0, 0x1680, *range(0x2000, 0x200B),
               0x2028, 0x2029, 0x202F, 0x205F, 0x3000}


def classify(cp):
    cat = unicodedata.category(chr(cp))
    m = 0
    if cat.startswith("L"):
        m |= LETTER
    if cat.startswith("N"):
        m |= NUMBER
    if cat.startswith("P"):
        m |= PUNCT
    if cat == "Mn":
        m |= NONSPACING_MARK
    if cat.startswith("M"):
        m |= MARK
    if cp in WHITE_SPACE or cat == "Zs":
        m |= SPACE
    if cat.startswith("C"):
        m |= CONTROL
    return m


def main(out):
    ranges = []
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        m = classify(cp)
        if not m:
            continue
        if ranges and ranges[-1][1] == cp - 1 and ranges[-1][2] == m:
            ranges[-1][1] = cp
        else:
            ranges.append([cp, cp, m])

    lower = []
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        c = chr(cp)
        low = c.lower()
        if low != c:
            lower.append((cp, [ord(x) for x in low]))

    # Canonical decomposition with nonspacing marks removed; only entries that change.
    strip = []
    for cp in range(0x110000):
        if 0xD800 <= cp <= 0xDFFF:
            continue
        c = chr(cp)
        d = unicodedata.normalize("NFD", c)
        if d == c:
            continue
        kept = [ord(x) for x in d if unicodedata.category(x) != "Mn"]
        strip.append((cp, kept))

    w = out.write
    w("// Generated by tools/gen_unicode_tables.py (Unicode %s). Do not edit.\n" % unicodedata.unidata_version)
    w("#pragma once\n\n#include <array>\n#include <cstdint>\n\nnamespace aggro::unicode::detail {\n\n")
    w("struct CategoryRange {\n  char32_t lo;\n  char32_t hi;\n  std::uint8_t mask;\n};\n\n")
    w("struct CodepointMap {\n  char32_t from;\n  std::array<char32_t, 3> to;\n  std::uint8_t len;\n};\n\n")
    w("inline constexpr std::array<CategoryRange, %d> kCategoryRanges{{\n" % len(ranges))
    for lo, hi, m in ranges:
        w("    {0x%X, 0x%X, %d},\n" % (lo, hi, m))
    w("}};\n\n")
    for name, table in (("kLowercase", lower), ("kStripAccents", strip)):
        w("inline constexpr std::array<CodepointMap, %d> %s{{\n" % (len(table), name))
        for cp, seq in table:
            assert len(seq) <= 3, (hex(cp), seq)
            padded = seq + [0] * (3 - len(seq))
            w("    {0x%X, {0x%X, 0x%X, 0x%X}, %d},\n" % (cp, *padded, len(seq)))
        w("}};\n\n")
    w("}  // namespace aggro::unicode::detail\n")


if __name__ == "__main__":
    main(sys.stdout)
