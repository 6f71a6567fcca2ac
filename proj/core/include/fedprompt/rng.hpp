#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace fedprompt {

/// Deterministic splitmix64 stream. The construction seed is kept immutable so
/// `child(label)` derives an independent stream from (seed, label) alone --
/// forking never depends on how many draws the parent has already made.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double next_double();

    /// Uniform integer in [0, bound). Debiased via rejection; bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound);

    /// Standard normal via Box-Muller. Consumes two uniforms per call; no
    /// caching, so draw counts stay easy to reason about.
    double gaussian();
    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    /// Independent stream keyed by (construction seed, label).
    Rng child(std::string_view label) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

/// In-place Fisher-Yates shuffle driven by the stream.
void shuffle(std::vector<std::size_t>& items, Rng& rng);

}  // namespace fedprompt
