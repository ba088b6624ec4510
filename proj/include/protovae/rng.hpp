#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace protovae {

using Rng = std::mt19937_64;

// Independent engine for one consumer of randomness, derived from the root seed.
Rng make_stream(std::uint64_t seed, std::uint64_t consumer);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

// Uniform integer in [0, n).
int uniform_index(Rng& rng, int n);
std::vector<int> shuffled_indices(Rng& rng, int n);

}  // namespace protovae
