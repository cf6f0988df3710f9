#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bsam {

// All randomness flows through std::mt19937_64 engines whose seeds are derived
// from (run seed, purpose string). Adding a new consumer with a new purpose
// string never shifts the draws of an existing one.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t stream_seed(std::uint64_t seed, std::string_view purpose);
Rng make_rng(std::uint64_t seed, std::string_view purpose);

}  // namespace bsam
