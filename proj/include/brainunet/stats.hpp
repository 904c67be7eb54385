#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "brainunet/error.hpp"

namespace brainunet {

enum class PercentileRule {
    /// Smallest sample with at least q% of the data at or below it:
    /// index ceil(q/100 * n) - 1, clamped to [0, n-1]. Always returns a sample value.
    NearestRank,
    /// Linear interpolation between closest ranks at position q/100 * (n-1)
    /// (numpy's default "linear" method).
    Linear,
};

/// `sorted` must be ascending and nonempty; q in [0, 100].
template <class T>
double percentile_sorted(std::span<const T> sorted, double q, PercentileRule rule) {
    if (sorted.empty()) throw ValueError("percentile of an empty sample");
    if (!(q >= 0.0 && q <= 100.0)) throw ValueError("percentile must lie in [0, 100]");
    const auto n = static_cast<std::ptrdiff_t>(sorted.size());
    if (rule == PercentileRule::NearestRank) {
        auto k = static_cast<std::ptrdiff_t>(std::ceil(q / 100.0 * static_cast<double>(n))) - 1;
        k = std::clamp<std::ptrdiff_t>(k, 0, n - 1);
        return static_cast<double>(sorted[k]);
    }
    const double pos = q / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::ptrdiff_t>(std::floor(pos));
    const auto hi = std::min<std::ptrdiff_t>(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    const double a = static_cast<double>(sorted[lo]);
    const double b = static_cast<double>(sorted[hi]);
    return a + (b - a) * frac;
}

}  // namespace brainunet
