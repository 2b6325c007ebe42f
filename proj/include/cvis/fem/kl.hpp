#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/core/stats.hpp"
#include "cvis/fem/quad_float.hpp"
#include "cvis/fem/quadrature.hpp"

namespace cvis::fem {

/// Eigenpairs of the 1D Gaussian-kernel Fredholm problem on [0, L].
struct KlEigen1d {
    double length = 0.0;
    double corr_length = 0.0;
    std::vector<double> nodes;
    std::vector<double> weights;
    std::vector<double> bary;      // barycentric interpolation weights for the nodes
    std::vector<double> values;    // the retained eigenvalues, decreasing
    Matrix functions;              // functions(i, k) = ψ_k(nodes[i])
    std::vector<double> spectrum;  // every discrete eigenvalue, decreasing

    [[nodiscard]] std::size_t modes() const noexcept { return values.size(); }

    /// Interpolation coefficients c with ψ(x) = Σ c_i ψ(nodes[i]) for every ψ in the basis.
    [[nodiscard]] Vector interpolation_row(double x) const {
        const double tol = 1e-12 * length;
        if (!(x >= -tol && x <= length + tol))
            throw OutOfDomain("KL eigenfunction evaluated at " + std::to_string(x) + " outside [0, " +
                              std::to_string(length) + "]");
        const auto n = static_cast<Eigen::Index>(nodes.size());
        Vector c = Vector::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i)
            if (x == nodes[static_cast<std::size_t>(i)]) {
                c(i) = 1.0;
                return c;
            }
        double denom = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto s = static_cast<std::size_t>(i);
            c(i) = bary[s] / (x - nodes[s]);
            denom += c(i);
        }
        return c / denom;
    }

    [[nodiscard]] Vector eval_all(double x) const { return functions.transpose() * interpolation_row(x); }

    [[nodiscard]] double eval(std::size_t k, double x) const {
        if (k >= modes()) throw InvalidArgument("KL mode index out of range");
        return interpolation_row(x).dot(functions.col(static_cast<Eigen::Index>(k)));
    }
};

namespace detail {

template <class T>
using DenseT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix; a is overwritten.
template <class T>
void jacobi_eigen(DenseT<T>& a, DenseT<T>& v) {
    const Eigen::Index n = a.rows();
    v = DenseT<T>::Identity(n, n);
    const T eps = qmath::epsilon<T>();
    for (int sweep = 0; sweep < 60; ++sweep) {
        T off = T(0), total = T(0);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                total += a(i, j) * a(i, j);
                if (i != j) off += a(i, j) * a(i, j);
            }
        if (off <= eps * eps * total) return;
        for (Eigen::Index p = 0; p < n - 1; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (a(p, q) == T(0)) continue;
                const T theta = (a(q, q) - a(p, p)) / (T(2) * a(p, q));
                const T sgn = theta >= T(0) ? T(1) : T(-1);
                const T t = sgn / (qmath::abs(theta) + qmath::sqrt(theta * theta + T(1)));
                const T c = T(1) / qmath::sqrt(t * t + T(1));
                const T s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const T akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const T apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const T vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
    }
}

/// Modified Gram-Schmidt, applied twice.
template <class T>
void orthonormalize(DenseT<T>& x) {
    for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
            for (Eigen::Index j = 0; j < k; ++j) {
                T d = T(0);
                for (Eigen::Index i = 0; i < x.rows(); ++i) d += x(i, j) * x(i, k);
                for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, k) -= d * x(i, j);
            }
            T nrm = T(0);
            for (Eigen::Index i = 0; i < x.rows(); ++i) nrm += x(i, k) * x(i, k);
            nrm = qmath::sqrt(nrm);
            if (!(nrm > T(0))) throw Error("KL refinement: subspace collapsed");
            for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, k) /= nrm;
        }
}

inline DenseT<quad> multiply(const DenseT<quad>& a, const DenseT<quad>& x) {
    DenseT<quad> y = DenseT<quad>::Zero(a.rows(), x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const quad xj = x(j, k);
            for (Eigen::Index i = 0; i < a.rows(); ++i) y(i, k) += a(i, j) * xj;
        }
    return y;
}

} // namespace detail

/// Nyström solution of ∫₀ᴸ exp(-(s-t)²/r²) ψ(t) dt = λ ψ(s) on Gauss-Legendre nodes.
///
/// The full spectrum comes from a double-precision symmetric solve. The leading
/// eigenvalues of a long-correlation kernel decay geometrically past double
/// resolution, so the retained pairs are refined by subspace iteration in
/// binary128 whenever the smallest of them falls below 1e-6 λ₁.
inline KlEigen1d kl_eigenpairs_1d(double corr_length, double domain_length, int n_quad = 128, int n_modes = 5) {
    if (!(corr_length > 0.0)) throw InvalidArgument("kl_eigenpairs_1d: correlation length must be positive");
    if (!(domain_length > 0.0)) throw InvalidArgument("kl_eigenpairs_1d: domain length must be positive");
    if (n_modes < 1 || n_modes > n_quad) throw InvalidArgument("kl_eigenpairs_1d: need 1 <= n_modes <= n_quad");

    using QMat = detail::DenseT<quad>;
    const auto n = static_cast<Eigen::Index>(n_quad);
    const auto std_rule = gauss_legendre<quad>(n_quad);
    const auto rule = gauss_legendre<quad>(n_quad, quad(0), quad(domain_length));

    KlEigen1d out;
    out.length = domain_length;
    out.corr_length = corr_length;
    std::vector<quad> sw(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < sw.size(); ++i) {
        out.nodes.push_back(static_cast<double>(rule.nodes[i]));
        out.weights.push_back(static_cast<double>(rule.weights[i]));
        sw[i] = qmath::sqrt(rule.weights[i]);
        const quad s = std_rule.nodes[i];
        const double b = static_cast<double>(qmath::sqrt((quad(1) - s * s) * std_rule.weights[i]));
        out.bary.push_back(i % 2 == 0 ? b : -b);
    }

    const quad inv_r2 = quad(1) / (quad(corr_length) * quad(corr_length));
    QMat bq(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            const quad d = rule.nodes[static_cast<std::size_t>(i)] - rule.nodes[static_cast<std::size_t>(j)];
            const quad v = sw[static_cast<std::size_t>(i)] * sw[static_cast<std::size_t>(j)] * qmath::exp(-d * d * inv_r2);
            bq(i, j) = v;
            bq(j, i) = v;
        }

    Matrix bd(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) bd(i, j) = static_cast<double>(bq(i, j));
    Eigen::SelfAdjointEigenSolver<Matrix> es(bd);
    if (es.info() != Eigen::Success) throw Error("kl_eigenpairs_1d: symmetric eigen-solve did not converge");
    for (Eigen::Index k = n - 1; k >= 0; --k) out.spectrum.push_back(es.eigenvalues()(k));

    const auto m = static_cast<Eigen::Index>(n_modes);
    Matrix vecs(n, m);
    std::vector<double> vals(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k) {
        vals[static_cast<std::size_t>(k)] = es.eigenvalues()(n - 1 - k);
        vecs.col(k) = es.eigenvectors().col(n - 1 - k);
    }

    if (vals.back() < 1e-6 * vals.front()) {
        const Eigen::Index p = std::min<Eigen::Index>(m + 4, n);
        QMat x(n, p);
        for (Eigen::Index k = 0; k < p; ++k)
            for (Eigen::Index i = 0; i < n; ++i) x(i, k) = quad(es.eigenvectors()(i, n - 1 - k));
        detail::orthonormalize(x);
        std::vector<quad> theta(static_cast<std::size_t>(p), quad(0));
        for (int iter = 0; iter < 200; ++iter) {
            const QMat z = detail::multiply(bq, x);
            QMat h(p, p);
            for (Eigen::Index a = 0; a < p; ++a)
                for (Eigen::Index b = 0; b <= a; ++b) {
                    quad s = 0;
                    for (Eigen::Index i = 0; i < n; ++i) s += x(i, a) * z(i, b);
                    h(a, b) = s;
                    h(b, a) = s;
                }
            QMat v;
            detail::jacobi_eigen(h, v);
            std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
            for (Eigen::Index k = 0; k < p; ++k) order[static_cast<std::size_t>(k)] = k;
            std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return h(a, a) > h(b, b); });

            QMat ritz = QMat::Zero(n, p);
            bool converged = iter > 0;
            for (Eigen::Index k = 0; k < p; ++k) {
                const Eigen::Index src = order[static_cast<std::size_t>(k)];
                const quad t = h(src, src);
                if (k < m && qmath::abs(t - theta[static_cast<std::size_t>(k)]) >
                                 quad(1e-20) * qmath::abs(t) + quad(1e-32) * qmath::abs(h(order[0], order[0])))
                    converged = false;
                theta[static_cast<std::size_t>(k)] = t;
                for (Eigen::Index j = 0; j < p; ++j) {
                    const quad c = v(j, src);
                    for (Eigen::Index i = 0; i < n; ++i) ritz(i, k) += x(i, j) * c;
                }
            }
            if (converged || iter == 199) {
                x = ritz;
                break;
            }
            x = detail::multiply(bq, ritz);
            detail::orthonormalize(x);
        }
        for (Eigen::Index k = 0; k < m; ++k) {
            vals[static_cast<std::size_t>(k)] = static_cast<double>(theta[static_cast<std::size_t>(k)]);
            for (Eigen::Index i = 0; i < n; ++i) vecs(i, k) = static_cast<double>(x(i, k));
        }
    }

    out.values = vals;
    out.functions.resize(n, m);
    for (Eigen::Index k = 0; k < m; ++k) {
        if (!(vals[static_cast<std::size_t>(k)] > 0.0))
            throw Error("kl_eigenpairs_1d: mode " + std::to_string(k + 1) + " is below working precision");
        for (Eigen::Index i = 0; i < n; ++i) out.functions(i, k) = vecs(i, k) / static_cast<double>(sw[static_cast<std::size_t>(i)]);
    }
    const Vector left = out.eval_all(0.0);
    for (Eigen::Index k = 0; k < m; ++k)
        if (left(k) < 0.0) out.functions.col(k) *= -1.0;
    return out;
}

/// A retained product mode ψ_{i₁}(x₁)ψ_{i₂}(x₂) with eigenvalue λ_{i₁}λ_{i₂}.
struct KlMode {
    std::size_t i1 = 0;
    std::size_t i2 = 0;
    double lambda = 0.0;
};

/// Truncated KL expansion of a 2D field with a separable Gaussian kernel on [0, L₁] × [0, L₂].
class KLBasis {
public:
    KLBasis(std::array<double, 2> corr_lengths, std::array<double, 2> dims, int n_per_direction = 5, int n_kl = 10,
            int n_quad = 128)
        : dir_{kl_eigenpairs_1d(corr_lengths[0], dims[0], n_quad, n_per_direction),
               kl_eigenpairs_1d(corr_lengths[1], dims[1], n_quad, n_per_direction)} {
        if (n_kl < 1 || n_kl > n_per_direction * n_per_direction)
            throw InvalidArgument("KLBasis: need 1 <= n_KL <= n_per_direction²");
        std::vector<KlMode> all;
        for (std::size_t a = 0; a < dir_[0].modes(); ++a)
            for (std::size_t b = 0; b < dir_[1].modes(); ++b) all.push_back({a, b, dir_[0].values[a] * dir_[1].values[b]});
        std::stable_sort(all.begin(), all.end(), [](const KlMode& x, const KlMode& y) { return x.lambda > y.lambda; });
        modes_.assign(all.begin(), all.begin() + n_kl);
    }

    [[nodiscard]] const KlEigen1d& direction(std::size_t j) const { return dir_.at(j); }
    [[nodiscard]] const std::vector<KlMode>& modes() const noexcept { return modes_; }
    [[nodiscard]] std::size_t size() const noexcept { return modes_.size(); }
    [[nodiscard]] double length(std::size_t j) const { return dir_.at(j).length; }

    /// Σ retained λᵢ over the sum of every discrete product eigenvalue.
    [[nodiscard]] double truncation_energy() const {
        double kept = 0.0;
        for (const auto& m : modes_) kept += m.lambda;
        double s0 = 0.0, s1 = 0.0;
        for (double v : dir_[0].spectrum) s0 += v;
        for (double v : dir_[1].spectrum) s1 += v;
        return kept / (s0 * s1);
    }

    /// ψᵢ(x) for each retained mode.
    [[nodiscard]] Vector mode_values(double x1, double x2) const {
        const Vector f1 = dir_[0].eval_all(x1);
        const Vector f2 = dir_[1].eval_all(x2);
        Vector out(static_cast<Eigen::Index>(modes_.size()));
        for (std::size_t i = 0; i < modes_.size(); ++i)
            out(static_cast<Eigen::Index>(i)) =
                f1(static_cast<Eigen::Index>(modes_[i].i1)) * f2(static_cast<Eigen::Index>(modes_[i].i2));
        return out;
    }

    /// Rows √λᵢ ψᵢ(x) at each point, so that the field at the points is (matrix · ξ).
    [[nodiscard]] Matrix field_matrix(const std::vector<std::array<double, 2>>& points) const {
        Matrix out(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(modes_.size()));
        for (std::size_t p = 0; p < points.size(); ++p) {
            const Vector v = mode_values(points[p][0], points[p][1]);
            for (std::size_t i = 0; i < modes_.size(); ++i)
                out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) =
                    std::sqrt(modes_[i].lambda) * v(static_cast<Eigen::Index>(i));
        }
        return out;
    }

private:
    std::array<KlEigen1d, 2> dir_;
    std::vector<KlMode> modes_;
};

/// y(x) = Σᵢ √λᵢ ξᵢ ψᵢ(x) over the retained modes.
inline double kl_field_eval(const KLBasis& basis, std::span<const double> xi, std::array<double, 2> x) {
    if (xi.size() != basis.size())
        throw DimensionMismatch("kl_field_eval: expected " + std::to_string(basis.size()) + " coefficients");
    const Vector v = basis.mode_values(x[0], x[1]);
    double y = 0.0;
    for (std::size_t i = 0; i < xi.size(); ++i)
        y += std::sqrt(basis.modes()[i].lambda) * xi[i] * v(static_cast<Eigen::Index>(i));
    return y;
}

/// E = a + (b - a) Φ(y).
inline double young_modulus(double y, double a, double b) {
    if (!(a < b)) throw InvalidArgument("young_modulus: need a < b");
    return a + (b - a) * normal_cdf(y);
}

} // namespace cvis::fem
