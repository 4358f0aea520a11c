#pragma once

#include <cstdint>
#include <random>

namespace vaedist {

/// splitmix64 finaliser. Used to derive independent sub-seeds so that adding
/// chunks or runs never perturbs the streams of existing ones.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t index) {
  return std::mt19937_64(derive_seed(master, index));
}

} // namespace vaedist
