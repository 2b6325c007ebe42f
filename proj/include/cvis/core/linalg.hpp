#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>

#include "cvis/core/error.hpp"

namespace cvis {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// One sample per row; rows are contiguous so a row can be handed out as a span.
using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::span<const double> row_span(const SampleMatrix& m, Eigen::Index i) {
    return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline Eigen::Map<const Vector> as_vector(std::span<const double> z) {
    return {z.data(), static_cast<Eigen::Index>(z.size())};
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionMismatch("hadamard: operand shapes differ");
    return a.cwiseProduct(b);
}

inline Vector hadamard(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionMismatch("hadamard: operand lengths differ");
    return a.cwiseProduct(b);
}

/// Outer product u ⊗ v = u vᵀ.
inline Matrix outer(const Vector& u, const Vector& v) { return u * v.transpose(); }

/// The diagonal of a square matrix as a vector.
inline Vector diag_of(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionMismatch("diag_of: matrix is not square");
    return a.diagonal();
}

inline double condition_number(const Matrix& a) {
    if (a.size() == 0) return 1.0;
    Eigen::JacobiSVD<Matrix> svd(a);
    const auto& s = svd.singularValues();
    const double smax = s(0);
    const double smin = s(s.size() - 1);
    if (!(smax > 0.0)) return std::numeric_limits<double>::infinity();
    return smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
}

inline constexpr double kSingularConditionLimit = 1e12;

/// Solves a x = b with partial pivoting. Systems whose condition estimate
/// exceeds 1e12 are reported as singular.
template <class Err = SingularSystem>
Vector solve_checked(const Matrix& a, const Vector& b, const std::string& what = "linear system") {
    if (a.rows() != a.cols() || a.rows() != b.size())
        throw DimensionMismatch(what + ": shape mismatch");
    if (!a.allFinite() || !b.allFinite()) throw Err(what + ": non-finite entries");
    const double cond = condition_number(a);
    if (!(cond <= kSingularConditionLimit)) throw Err(what + ": matrix is singular or ill-conditioned");
    return a.partialPivLu().solve(b);
}

/// Cholesky factor of a symmetric positive-definite matrix; throws ConstructionError otherwise.
inline Matrix cholesky_lower(const Matrix& a, const std::string& what) {
    if (a.rows() != a.cols()) throw DimensionMismatch(what + ": covariance is not square");
    if (!a.allFinite()) throw ConstructionError(what + ": covariance has non-finite entries");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if (!a.isApprox(a.transpose(), 1e-10 * scale) && (a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw ConstructionError(what + ": covariance is not symmetric");
    Eigen::LLT<Matrix> llt(0.5 * (a + a.transpose()));
    if (llt.info() != Eigen::Success) throw ConstructionError(what + ": covariance is not positive definite");
    Matrix l = llt.matrixL();
    for (Eigen::Index i = 0; i < l.rows(); ++i)
        if (!(l(i, i) > 0.0)) throw ConstructionError(what + ": covariance is not positive definite");
    return l;
}

} // namespace cvis
