#pragma once

#include <cstdint>
#include <random>

namespace markpoint {

using Rng = std::mt19937_64;

// Independent stream for (seed, index, tag). Seeding goes through seed_seq so
// nearby seeds and indices still give unrelated streams.
Rng make_stream(std::uint64_t seed, std::uint64_t index, std::uint64_t tag = 0);

// Standard normal draw that does not depend on the library's normal_distribution
// caching, so a stream always yields the same values regardless of how draws
// are interleaved.
double standard_normal(Rng& rng);

double uniform01(Rng& rng);

}  // namespace markpoint
