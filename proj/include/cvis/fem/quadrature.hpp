#pragma once

#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/fem/quad_float.hpp"

namespace cvis::fem {

template <class T>
struct GaussRule {
    std::vector<T> nodes;   // ascending, in [-1, 1]
    std::vector<T> weights;
};

/// n-point Gauss-Legendre rule on [-1, 1], Newton iteration on the Legendre recurrence.
template <class T = double>
GaussRule<T> gauss_legendre(int n) {
    if (n < 1) throw InvalidArgument("gauss_legendre: need at least one node");
    GaussRule<T> rule;
    rule.nodes.assign(static_cast<std::size_t>(n), T(0));
    rule.weights.assign(static_cast<std::size_t>(n), T(0));
    const T tol = T(4) * qmath::epsilon<T>();
    for (int i = 0; i < (n + 1) / 2; ++i) {
        T x = qmath::cos(qmath::pi<T>() * (T(i) + T(0.75)) / (T(n) + T(0.5)));
        T dp = T(0);
        for (int it = 0; it < 100; ++it) {
            T p0 = T(1), p1 = x;
            for (int k = 2; k <= n; ++k) {
                const T pk = ((T(2 * k - 1)) * x * p1 - T(k - 1) * p0) / T(k);
                p0 = p1;
                p1 = pk;
            }
            if (n == 1) p0 = T(1);
            // P_n'(x) = n (x P_n - P_{n-1}) / (x² - 1)
            dp = T(n) * (x * p1 - p0) / (x * x - T(1));
            const T dx = p1 / dp;
            x -= dx;
            if (qmath::abs(dx) <= tol * qmath::abs(x) + tol * tol) {
                T q0 = T(1), q1 = x;
                for (int k = 2; k <= n; ++k) {
                    const T qk = ((T(2 * k - 1)) * x * q1 - T(k - 1) * q0) / T(k);
                    q0 = q1;
                    q1 = qk;
                }
                if (n == 1) q0 = T(1);
                dp = T(n) * (x * q1 - q0) / (x * x - T(1));
                break;
            }
        }
        const T w = T(2) / ((T(1) - x * x) * dp * dp);
        const auto lo = static_cast<std::size_t>(i);
        const auto hi = static_cast<std::size_t>(n - 1 - i);
        rule.nodes[lo] = -x;
        rule.nodes[hi] = x;
        rule.weights[lo] = w;
        rule.weights[hi] = w;
    }
    if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = T(0);
    return rule;
}

/// The rule mapped onto [a, b].
template <class T = double>
GaussRule<T> gauss_legendre(int n, T a, T b) {
    GaussRule<T> rule = gauss_legendre<T>(n);
    const T half = (b - a) / T(2);
    const T mid = (a + b) / T(2);
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        rule.nodes[i] = mid + half * rule.nodes[i];
        rule.weights[i] *= half;
    }
    return rule;
}

} // namespace cvis::fem
