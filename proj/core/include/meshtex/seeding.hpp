#pragma once

#include <cstdint>

namespace meshtex {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent child seed for (stream, index) under a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return mix64(mix64(mix64(base) ^ stream) ^ index);
}

}  // namespace meshtex
