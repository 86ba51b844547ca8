#pragma once

#include <algorithm>
#include <numeric>

#include "epmc/common.hpp"

namespace epmc {

/// Kolmogorov-Smirnov statistic of a weighted sample against a CDF.
inline double weighted_ks(std::span<const double> values, std::span<const double> weights,
                          const std::function<double(double)>& cdf) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    double cum = 0.0, ks = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double f = cdf(values[order[r]]);
        ks = std::max(ks, std::abs(cum - f));
        cum += weights.empty() ? 1.0 / static_cast<double>(n) : weights[order[r]];
        ks = std::max(ks, std::abs(cum - f));
    }
    return ks;
}

}  // namespace epmc
