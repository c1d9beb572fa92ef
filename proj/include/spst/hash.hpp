#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>

namespace spst {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = (const unsigned char*)data;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// 128-bit id built from two independently seeded 64-bit FNV passes.
inline std::array<uint8_t, 16> fnv128(const void* data, size_t n) {
  const uint64_t a = fnv1a64(data, n);
  const uint64_t b = fnv1a64(data, n, 0x84222325cbf29ce4ULL);
  std::array<uint8_t, 16> out;
  std::memcpy(out.data(), &a, 8);
  std::memcpy(out.data() + 8, &b, 8);
  return out;
}

}  // namespace spst
