#pragma once

#include <cstdint>
#include <vector>

namespace fewtrans {

// Purpose tags keep the random streams of one task separated, so adding a
// draw to one stage never perturbs another.
enum class RngPurpose : std::uint64_t {
    kWays = 1,
    kClasses = 2,
    kShots = 3,
    kItems = 4,
    kNode = 5,
    kSplit = 6,
    kSynthesis = 7,
    kInit = 8,
    kFit = 9,
    kTest = 100,
};

/// Counter-keyed deterministic generator. The stream is a pure function of
/// (seed, index, purpose, sub), so any task in a stream can be materialized
/// without touching its neighbours, in any order, on any thread.
class TaskRng {
public:
    TaskRng(std::uint64_t seed, std::uint64_t index, RngPurpose purpose, std::uint64_t sub = 0);

    std::uint64_t next_u64();
    /// uniform on [0, 1)
    double next_double();
    /// uniform on {0, ..., n-1}, unbiased
    std::uint64_t uniform_int(std::uint64_t n);
    /// standard normal via Box-Muller
    double normal();
    /// Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

/// splitmix64 finalizer; also used to derive keys.
std::uint64_t mix64(std::uint64_t x);

}  // namespace fewtrans
