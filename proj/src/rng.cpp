#include "fewtrans/rng.hpp"

#include <cmath>
#include <limits>

namespace fewtrans {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

TaskRng::TaskRng(std::uint64_t seed, std::uint64_t index, RngPurpose purpose, std::uint64_t sub) {
    std::uint64_t s = mix64(seed);
    s = mix64(s ^ index);
    s = mix64(s ^ static_cast<std::uint64_t>(purpose));
    state_ = mix64(s ^ sub);
}

std::uint64_t TaskRng::next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double TaskRng::next_double() {
    // 53 high bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t TaskRng::uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    // 2^64 mod n; reject draws in the biased tail
    const std::uint64_t tail = (max % n + 1) % n;
    std::uint64_t v = next_u64();
    if (tail != 0) {
        while (v > max - tail) v = next_u64();
    }
    return v % n;
}

double TaskRng::normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace fewtrans
