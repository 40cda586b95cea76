#pragma once

#include "staplr/core.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace staplr {

/// Area under the ROC curve as the Mann-Whitney statistic:
/// P(score of a positive > score of a negative) + 1/2 P(tie).
///
/// Pairs are counted in integer arithmetic (twice the statistic) so the
/// result is the correctly rounded quotient of the exact pair count.
inline double auc(const Vector& scores, const Vector& labels) {
    if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
    const auto n = static_cast<std::size_t>(scores.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[static_cast<Eigen::Index>(a)] < scores[static_cast<Eigen::Index>(b)];
    });

    std::uint64_t negatives_below = 0;
    std::uint64_t twice_wins = 0;
    std::uint64_t n_pos = 0;
    std::uint64_t n_neg = 0;
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start;
        std::uint64_t pos = 0, neg = 0;
        const double s = scores[static_cast<Eigen::Index>(order[start])];
        while (end < n && scores[static_cast<Eigen::Index>(order[end])] == s) {
            (labels[static_cast<Eigen::Index>(order[end])] > 0.5 ? pos : neg) += 1;
            ++end;
        }
        twice_wins += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        n_pos += pos;
        n_neg += neg;
        start = end;
    }
    if (n_pos == 0 || n_neg == 0) throw MetricError("AUC requires both classes among the labels");
    return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Fraction of observations whose thresholded score (score >= threshold -> 1) equals the label.
inline double accuracy(const Vector& scores, const Vector& labels, double threshold = 0.5) {
    if (scores.size() != labels.size()) throw InputError("scores and labels differ in length");
    if (scores.size() == 0) throw MetricError("accuracy of an empty set");
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        const double cls = scores[i] >= threshold ? 1.0 : 0.0;
        if (cls == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

}  // namespace staplr
