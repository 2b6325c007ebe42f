#pragma once

#include <quadmath.h>

#include <cmath>

namespace cvis::fem {

/// IEEE binary128 arithmetic from libquadmath.
using quad = __float128;

namespace qmath {

inline double sqrt(double x) { return std::sqrt(x); }
inline quad sqrt(quad x) { return sqrtq(x); }
inline double exp(double x) { return std::exp(x); }
inline quad exp(quad x) { return expq(x); }
inline double cos(double x) { return std::cos(x); }
inline quad cos(quad x) { return cosq(x); }
inline double abs(double x) { return std::abs(x); }
inline quad abs(quad x) { return fabsq(x); }

template <class T>
T pi() {
    if constexpr (sizeof(T) > sizeof(double)) return acosq(quad(-1));
    else return M_PI;
}

template <class T>
T epsilon() {
    if constexpr (sizeof(T) > sizeof(double)) return quad(1) / quad(1ULL << 56) / quad(1ULL << 56);
    else return 2.220446049250313e-16;
}

} // namespace qmath
} // namespace cvis::fem
