#include "staplr/folds.hpp"
#include "staplr/parallel.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <set>
#include <stdexcept>

using namespace staplr;

namespace {

Vector labels(std::size_t ones, std::size_t zeros) {
    Vector y(static_cast<Eigen::Index>(ones + zeros));
    for (std::size_t i = 0; i < ones + zeros; ++i) y[static_cast<Eigen::Index>(i)] = i < ones ? 1.0 : 0.0;
    return y;
}

}  // namespace

TEST(Folds, EveryFoldNonemptyAndBalanced) {
    const Vector y = labels(76, 173);  // the class split of the motivating study
    const auto f = make_folds(y, 10, 42);
    ASSERT_EQ(f.size(), 249u);
    for (std::size_t k = 0; k < 10; ++k) {
        const auto m = f.members(k);
        EXPECT_GE(m.size(), 24u);
        EXPECT_LE(m.size(), 25u);
        std::size_t ones = 0;
        for (auto i : m) ones += y[static_cast<Eigen::Index>(i)] > 0.5;
        EXPECT_GE(ones, 7u);
        EXPECT_LE(ones, 8u);
    }
}

TEST(Folds, MembersAndComplementPartitionRows) {
    const Vector y = labels(13, 20);
    const auto f = make_folds(y, 4, 9);
    for (std::size_t k = 0; k < 4; ++k) {
        std::set<std::size_t> all;
        for (auto i : f.members(k)) all.insert(i);
        for (auto i : f.complement(k)) EXPECT_TRUE(all.insert(i).second);
        EXPECT_EQ(all.size(), 33u);
    }
}

TEST(Folds, StratifiedKeepsBothClassesWhenCountsAllow) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t k = 2 + rng() % 9;
        const std::size_t ones = k + rng() % 20;
        const std::size_t zeros = k + rng() % 20;
        const auto f = make_folds(labels(ones, zeros), k, rng());
        for (std::size_t fold = 0; fold < k; ++fold) {
            std::size_t o = 0;
            const auto m = f.members(fold);
            for (auto i : m) o += i < ones;
            EXPECT_GT(o, 0u);
            EXPECT_LT(o, m.size());
        }
    }
}

TEST(Folds, SeedDeterminesAssignment) {
    const Vector y = labels(30, 50);
    EXPECT_EQ(make_folds(y, 5, 11).fold_of, make_folds(y, 5, 11).fold_of);
    EXPECT_NE(make_folds(y, 5, 11).fold_of, make_folds(y, 5, 12).fold_of);
}

TEST(Folds, RejectsBadFoldCounts) {
    const Vector y = labels(3, 3);
    EXPECT_THROW(make_folds(y, 1, 0), InputError);
    EXPECT_THROW(make_folds(y, 7, 0), InputError);
}

TEST(DeriveSeed, DistinctChildren) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 20; ++a)
        for (std::uint64_t b = 0; b < 20; ++b) seen.insert(derive_seed(7, {a, b}));
    EXPECT_EQ(seen.size(), 400u);
    EXPECT_NE(derive_seed(7, {1}), derive_seed(8, {1}));
    EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
    EXPECT_EQ(derive_seed(7, {3, 4}), derive_seed(7, {3, 4}));
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    for (unsigned threads : {1u, 2u, 5u}) {
        std::vector<std::atomic<int>> hits(37);
        parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
        for (auto& h : hits) EXPECT_EQ(h.load(), 1);
    }
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
    for (unsigned threads : {1u, 3u}) {
        try {
            parallel_for(20, threads, [](std::size_t i) {
                if (i == 4 || i == 15) throw std::runtime_error(std::to_string(i));
            });
            FAIL() << "expected an exception";
        } catch (const std::runtime_error& e) {
            EXPECT_STREQ(e.what(), "4");
        }
    }
}
