#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace debiatt {

using Rng = std::mt19937_64;

// Named sub-streams: every random draw in a run descends from one user seed
// through derive_seed(seed, tag, index), e.g. ("replicate", r) or ("truth", r).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index);

inline Rng make_stream(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  return Rng(derive_seed(seed, tag, index));
}

}  // namespace debiatt
