#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "cvis/core/error.hpp"

namespace cvis {

/// Pairwise (cascade) summation; the result does not depend on how the
/// input was produced, only on its order.
inline double pairwise_sum(std::span<const double> x) {
    constexpr std::size_t kBlock = 64;
    if (x.size() <= kBlock) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

inline double mean(std::span<const double> x) {
    require(!x.empty(), "mean of an empty sequence");
    return pairwise_sum(x) / static_cast<double>(x.size());
}

/// Unbiased sample covariance (divisor n-1).
inline double sample_covariance(std::span<const double> x, std::span<const double> y) {
    require(x.size() == y.size(), "sample_covariance: length mismatch");
    require(x.size() >= 2, "sample_covariance needs at least two values");
    const double mx = mean(x);
    const double my = mean(y);
    std::vector<double> prod(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) prod[i] = (x[i] - mx) * (y[i] - my);
    return pairwise_sum(prod) / static_cast<double>(x.size() - 1);
}

inline double sample_variance(std::span<const double> x) { return sample_covariance(x, x); }

inline double sample_correlation(std::span<const double> x, std::span<const double> y) {
    const double sxy = sample_covariance(x, y);
    const double sxx = sample_variance(x);
    const double syy = sample_variance(y);
    if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double log_sum_exp(std::span<const double> x) {
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition).
inline double empirical_quantile(std::vector<double> x, double prob) {
    require(!x.empty(), "quantile of an empty sequence");
    require(prob >= 0.0 && prob <= 1.0, "quantile probability must lie in [0,1]");
    std::sort(x.begin(), x.end());
    const double h = prob * static_cast<double>(x.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

} // namespace cvis
