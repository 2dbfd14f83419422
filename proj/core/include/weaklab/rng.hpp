#pragma once

#include <cstdint>
#include <random>

namespace weaklab {

// splitmix64, used to derive independent rng streams from one master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t step = 0) {
  return splitmix64(splitmix64(master ^ (stream * 0x9e3779b97f4a7c15ULL)) + step);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t stream,
                                std::uint64_t step = 0) {
  return std::mt19937_64(derive_seed(master, stream, step));
}

// FNV-1a over raw bytes; used for parameter checksums and selection hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

} // namespace weaklab
