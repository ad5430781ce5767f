#pragma once

#include <cstdint>

namespace objnav {

/// SplitMix64 finalizer.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Independent seed for sub-stream `stream` of `base`.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) { return mix64(mix64(base) ^ mix64(stream + 0x632be59bd9b4e019ull)); }

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) { return derive_seed(derive_seed(base, a), b); }

}  // namespace objnav
