#include "fedprompt/rng.hpp"

#include <cmath>
#include <numbers>

namespace fedprompt {

namespace {

std::uint64_t splitmix64_next(std::uint64_t& s) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t Rng::next_u64() { return splitmix64_next(state_); }

double Rng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::next_below(std::uint64_t bound) {
    // Rejection sampling over the top of the range keeps the draw unbiased.
    std::uint64_t threshold = -bound % bound;
    for (;;) {
        std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

double Rng::gaussian() {
    // Box-Muller; u1 is nudged away from zero so log stays finite.
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::child(std::string_view label) const {
    // Mix the label hash through one splitmix64 round so nearby labels do not
    // produce correlated child seeds.
    std::uint64_t mixed = seed_ ^ fnv1a(label);
    std::uint64_t derived = splitmix64_next(mixed);
    return Rng(derived);
}

void shuffle(std::vector<std::size_t>& items, Rng& rng) {
    if (items.size() < 2) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
        std::size_t j = rng.next_below(i + 1);
        std::swap(items[i], items[j]);
    }
}

}  // namespace fedprompt
