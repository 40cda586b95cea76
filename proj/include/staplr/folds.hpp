#pragma once

#include "staplr/core.hpp"

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace staplr {

/// Counter-based seed splitter: mixes a parent seed with a path of counters
/// (splitmix64 finalizer per step). Children of one parent never collide in practice.
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    std::uint64_t s = mix(parent);
    for (std::uint64_t c : path) s = mix(s ^ mix(c + 0x632BE59BD9B4E019ULL));
    return s;
}

/// Assignment of observations to k folds. Fold ids are 0-based.
struct FoldAssignment {
    std::vector<std::size_t> fold_of;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    bool stratified = true;

    std::size_t size() const noexcept { return fold_of.size(); }

    std::vector<std::size_t> members(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] == fold) out.push_back(i);
        return out;
    }

    std::vector<std::size_t> complement(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] != fold) out.push_back(i);
        return out;
    }
};

/// Draw a fold assignment. With `stratified`, each class is shuffled separately
/// and dealt round-robin, the second class continuing where the first stopped,
/// so fold sizes differ by at most one and every fold holds at least one member
/// of each class whose count is >= k.
inline FoldAssignment make_folds(const Vector& y, std::size_t k, std::uint64_t seed, bool stratified = true) {
    const auto n = static_cast<std::size_t>(y.size());
    if (k < 2) throw InputError("fold count must be at least 2");
    if (n < k) throw InputError("fewer observations (" + std::to_string(n) + ") than folds (" + std::to_string(k) + ")");

    FoldAssignment folds;
    folds.fold_of.assign(n, 0);
    folds.k = k;
    folds.seed = seed;
    folds.stratified = stratified;

    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> groups;
    if (stratified) {
        groups.resize(2);
        for (std::size_t i = 0; i < n; ++i) groups[y[static_cast<Eigen::Index>(i)] > 0.5 ? 1 : 0].push_back(i);
    } else {
        groups.resize(1);
        for (std::size_t i = 0; i < n; ++i) groups[0].push_back(i);
    }
    std::size_t dealt = 0;
    for (auto& g : groups) {
        std::shuffle(g.begin(), g.end(), rng);
        for (std::size_t idx : g) folds.fold_of[idx] = dealt++ % k;
    }
    return folds;
}

}  // namespace staplr
