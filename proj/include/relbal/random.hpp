#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace relbal {

// Independent, reproducible substream seed for a coordinate tuple.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords);
std::mt19937_64 make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> coords);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace relbal
