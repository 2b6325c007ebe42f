#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"

namespace cvis {

enum class Scheme { CV, ACV_IS, ACV_MF };

inline std::string_view to_string(Scheme s) {
    switch (s) {
    case Scheme::CV: return "CV";
    case Scheme::ACV_IS: return "ACV-IS";
    case Scheme::ACV_MF: return "ACV-MF";
    }
    return "?";
}

inline Scheme scheme_from_string(std::string_view s) {
    if (s == "CV" || s == "cv") return Scheme::CV;
    if (s == "ACV-IS" || s == "acv-is" || s == "ACV_IS") return Scheme::ACV_IS;
    if (s == "ACV-MF" || s == "acv-mf" || s == "ACV_MF") return Scheme::ACV_MF;
    throw InvalidArgument("unknown scheme '" + std::string(s) + "'");
}

/// Second moments of (Y0, Y1..YM).
struct ModelStatistics {
    Matrix C;   ///< M×M covariance among the controls
    Vector c;   ///< Cov(Y_i, Y0), i = 1..M
    double var0 = 1.0;

    [[nodiscard]] Eigen::Index M() const noexcept { return c.size(); }
    /// c / sqrt(var0)
    [[nodiscard]] Vector c_bar() const { return c / std::sqrt(var0); }

    void validate() const {
        if (C.rows() != C.cols() || C.rows() != c.size())
            throw DimensionMismatch("model statistics: C must be M×M with c of length M");
        require(var0 > 0.0, "model statistics: var0 must be positive");
    }
};

/// Sample-sharing matrix of an ACV partition; the CV scheme gives all ones.
inline Matrix f_matrix(Scheme scheme, const Vector& r) {
    const auto m = r.size();
    require(m >= 1, "f_matrix needs at least one ratio");
    if (scheme == Scheme::CV) return Matrix::Ones(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        if (!(r(i) > 1.0)) throw InvalidRatio("sample ratios must exceed 1");
    Matrix f(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            if (i == j) {
                f(i, j) = (r(i) - 1.0) / r(i);
            } else if (scheme == Scheme::ACV_IS) {
                f(i, j) = ((r(i) - 1.0) / r(i)) * ((r(j) - 1.0) / r(j));
            } else {
                const double rm = std::min(r(i), r(j));
                f(i, j) = (rm - 1.0) / rm;
            }
        }
    }
    return f;
}

inline Matrix f_matrix(Scheme scheme, Eigen::Index m, double r) { return f_matrix(scheme, Vector::Constant(m, r)); }

/// α* = -[C∘F]⁻¹ (diag(F)∘c).
inline Vector optimal_weight(const Matrix& C, const Vector& c, const Matrix& F) {
    const Matrix cf = hadamard(C, F);
    return -solve_checked(cf, hadamard(diag_of(F), c), "optimal weight");
}

inline Vector optimal_weight(Scheme scheme, const ModelStatistics& s, const Vector& r) {
    s.validate();
    return optimal_weight(s.C, s.c, f_matrix(scheme, r));
}

/// R² = aᵀ[C∘F]⁻¹a with a = diag(F)∘c̄; the CV scheme reduces to c̄ᵀC⁻¹c̄.
inline double r_squared(Scheme scheme, const ModelStatistics& s, const Vector& r) {
    s.validate();
    const Matrix f = f_matrix(scheme, r);
    const Vector a = hadamard(diag_of(f), s.c_bar());
    return a.dot(solve_checked(hadamard(s.C, f), a, "r_squared"));
}

/// Inflation coefficient a(e) multiplying M/(K-M-2).
inline double inflation_coefficient(Scheme scheme, std::optional<double> r) {
    if (scheme != Scheme::ACV_MF) return 1.0;
    if (!r) throw InvalidArgument("ACV-MF needs the common sample ratio r");
    if (!(*r > 1.0)) throw InvalidRatio("sample ratio must exceed 1");
    return (*r - 1.0) / *r;
}

/// Predicted Var(ensemble estimator) / Var(MC baseline over the same nK samples).
inline double variance_ratio_prediction(Scheme scheme, double r2, int M, int K, std::optional<double> r = {}) {
    require(M >= 1, "M must be positive");
    if (K <= M + 2) throw BoundViolated("variance ratio needs K > M+2");
    require(r2 >= 0.0 && r2 <= 1.0, "R² must lie in [0,1]");
    const double a = inflation_coefficient(scheme, r);
    return (1.0 - r2) * (1.0 + a * M / static_cast<double>(K - M - 2));
}

/// Lower bound B on K for the ensemble estimator to beat MC by ratio y.
inline double ensemble_bound(Scheme scheme, double r2, int M, std::optional<double> r = {}, double y = 1.0) {
    require(M >= 1, "M must be positive");
    require(r2 > 0.0 && r2 <= 1.0, "R² must lie in (0,1]");
    require(y > 0.0 && y <= 1.0, "target ratio must lie in (0,1]");
    if (!(y + r2 > 1.0)) throw InfeasibleTarget("target ratio unreachable: y + R² must exceed 1");
    const double a = inflation_coefficient(scheme, r);
    // At y = 1 this is a·M/R² + (1-a)·M + 2.
    return M + 2.0 - a * M * (1.0 - r2) / (1.0 - y - r2);
}

/// Smallest integer K with K > max(M+2, B).
inline int min_ensembles(Scheme scheme, double r2, int M, std::optional<double> r = {}, double y = 1.0) {
    const double b = ensemble_bound(scheme, r2, M, r, y);
    return static_cast<int>(std::floor(std::max(static_cast<double>(M + 2), b))) + 1;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    [[nodiscard]] bool contains(double x) const noexcept { return x >= lo && x <= hi; }
    [[nodiscard]] double width() const noexcept { return hi - lo; }
};

/// Extra terms of the ACV variance quadratic V(α) = v0 + α² s1 + 2α s2.
struct AcvTerms {
    double s1 = 0.0;
    double s2 = 0.0;
};

/// Weights α for which the hybrid estimator is no worse than its baseline.
/// CV: between 0 and -2 cov/var. ACV: between 0 and -2 s2/s1.
inline Interval weight_range(double cov, double var, std::optional<AcvTerms> acv = {}) {
    double slope;
    double curvature;
    if (acv) {
        slope = acv->s2;
        curvature = acv->s1;
    } else {
        slope = cov;
        curvature = var;
    }
    if (!(curvature > 0.0)) throw UndefinedRange("weight range needs a positive variance term");
    const double f = -2.0 * slope / curvature;
    return {std::min(0.0, f), std::max(0.0, f)};
}

/// V(α) = var0 + α² var1 + 2α cov; with ACV terms, (s1, s2) replace (var1, cov).
inline double variance_profile(double alpha, double var0, double var1, double cov, std::optional<AcvTerms> acv = {}) {
    if (acv) return var0 + alpha * alpha * acv->s1 + 2.0 * alpha * acv->s2;
    return var0 + alpha * alpha * var1 + 2.0 * alpha * cov;
}

/// diag(A) ⊗ 1_n, an M×n matrix whose columns all equal diag(A).
inline Matrix diag_outer(const Matrix& a, Eigen::Index n) { return outer(diag_of(a), Vector::Ones(n)); }

namespace detail {

inline double relative_gap(const Matrix& x, const Matrix& y) {
    const double scale = std::max({1.0, x.norm(), y.norm()});
    return (x - y).norm() / scale;
}

} // namespace detail

/// Relative residuals of the four Hadamard/outer-product identities used to
/// simplify ensemble variances, for A (M×M), B (M×K), V (K×M), v (K).
inline std::array<double, 4> hadamard_identity_residuals(const Matrix& a, const Matrix& b, const Matrix& v_mat,
                                                         const Vector& v) {
    const auto m = a.rows();
    const auto k = b.cols();
    if (a.cols() != m || b.rows() != m || v_mat.rows() != k || v_mat.cols() != m || v.size() != k)
        throw DimensionMismatch("identity check: inconsistent shapes");
    const Matrix dk = diag_outer(a, k);
    const Matrix dm = diag_outer(a, m);
    const Matrix db = hadamard(dk, b);
    std::array<double, 4> out{};
    out[0] = detail::relative_gap(hadamard(diag_of(a), Vector(b * v)), db * v);
    out[1] = detail::relative_gap(db * v_mat, hadamard(dm, Matrix(b * v_mat)));
    out[2] = detail::relative_gap(v_mat.transpose() * hadamard(b, dk).transpose(),
                                  hadamard(Matrix(v_mat.transpose() * b.transpose()), Matrix(dm.transpose())));
    out[3] = detail::relative_gap(db * db.transpose(), hadamard(hadamard(Matrix(b * b.transpose()), dm), Matrix(dm.transpose())));
    return out;
}

struct TheoryPrediction {
    Matrix F;
    Vector alpha;
    double r2 = 0.0;
    std::optional<double> ratio;
    std::optional<int> k_min;
};

/// Everything the theory module can say about (scheme, statistics, r, K).
/// Ratios and bounds are only emitted where their assumptions hold.
inline TheoryPrediction predict(Scheme scheme, const ModelStatistics& s, const Vector& r, int K) {
    TheoryPrediction t;
    t.F = f_matrix(scheme, r);
    t.alpha = optimal_weight(s.C, s.c, t.F);
    t.r2 = r_squared(scheme, s, r);
    const int M = static_cast<int>(s.M());
    std::optional<double> common_r;
    if (scheme == Scheme::ACV_MF) {
        if ((r.array() == r(0)).all()) common_r = r(0);
    }
    const bool equal_r_ok = scheme != Scheme::ACV_MF || common_r.has_value();
    if (equal_r_ok && K > M + 2) t.ratio = variance_ratio_prediction(scheme, t.r2, M, K, common_r);
    if (equal_r_ok && t.r2 > 0.0) t.k_min = min_ensembles(scheme, t.r2, M, common_r);
    return t;
}

} // namespace cvis
