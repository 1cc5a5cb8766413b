#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace aggro {

/// 64-bit FNV-1a; used for cache keys, content hashes and seed derivation.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  /// Length-prefixed field so that ("ab","c") and ("a","bc") hash differently.
  Fnv1a& field(std::string_view bytes) {
    const std::uint64_t n = bytes.size();
    for (int i = 0; i < 8; ++i) {
      state_ ^= static_cast<unsigned char>(n >> (8 * i));
      state_ *= 0x100000001b3ULL;
    }
    return update(bytes);
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) { return Fnv1a{}.update(bytes).digest(); }

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a string key (e.g. a comment id).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
  return mix64(seed ^ Fnv1a{}.field(key).digest());
}

}  // namespace aggro
