#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"

namespace cvis::fem {

/// Symmetric matrix with half-bandwidth bw, lower band stored row by row.
class BandedMatrix {
public:
    BandedMatrix() = default;
    BandedMatrix(std::size_t n, std::size_t bw) : n_(n), bw_(std::min(bw, n == 0 ? 0 : n - 1)), data_(n * (bw_ + 1), 0.0) {}

    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] std::size_t bandwidth() const noexcept { return bw_; }

    [[nodiscard]] bool in_band(std::size_t i, std::size_t j) const noexcept {
        return i < n_ && j < n_ && (i >= j ? i - j : j - i) <= bw_;
    }

    /// Entry (i, j) of the symmetric matrix.
    [[nodiscard]] double operator()(std::size_t i, std::size_t j) const {
        if (i < j) std::swap(i, j);
        if (i >= n_) throw DimensionMismatch("BandedMatrix: index out of range");
        return i - j <= bw_ ? data_[slot(i, j)] : 0.0;
    }

    /// Adds v to (i, j) and, implicitly, to (j, i).
    void add(std::size_t i, std::size_t j, double v) {
        if (i < j) std::swap(i, j);
        if (i >= n_) throw DimensionMismatch("BandedMatrix: index out of range");
        if (i - j > bw_) throw AssemblyError("BandedMatrix: entry outside the band");
        data_[slot(i, j)] += v;
    }

    [[nodiscard]] Vector multiply(const Vector& x) const {
        if (static_cast<std::size_t>(x.size()) != n_) throw DimensionMismatch("BandedMatrix: vector length");
        Vector y = Vector::Zero(x.size());
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t j0 = i > bw_ ? i - bw_ : 0;
            for (std::size_t j = j0; j < i; ++j) {
                const double a = data_[slot(i, j)];
                y(static_cast<Eigen::Index>(i)) += a * x(static_cast<Eigen::Index>(j));
                y(static_cast<Eigen::Index>(j)) += a * x(static_cast<Eigen::Index>(i));
            }
            y(static_cast<Eigen::Index>(i)) += data_[slot(i, i)] * x(static_cast<Eigen::Index>(i));
        }
        return y;
    }

    [[nodiscard]] Matrix dense() const {
        Matrix m = Matrix::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = (i > bw_ ? i - bw_ : 0); j <= i; ++j) {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data_[slot(i, j)];
                m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = data_[slot(i, j)];
            }
        return m;
    }

    [[nodiscard]] std::vector<double>& raw() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& raw() const noexcept { return data_; }
    [[nodiscard]] std::size_t slot(std::size_t i, std::size_t j) const noexcept { return i * (bw_ + 1) + (j + bw_ - i); }

private:
    std::size_t n_ = 0;
    std::size_t bw_ = 0;
    std::vector<double> data_;
};

/// Banded Cholesky factor L with A = L Lᵀ.
class BandedCholesky {
public:
    explicit BandedCholesky(BandedMatrix a) : l_(std::move(a)) {
        const std::size_t n = l_.size(), bw = l_.bandwidth();
        auto& d = l_.raw();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j0 = i > bw ? i - bw : 0;
            for (std::size_t j = j0; j <= i; ++j) {
                const std::size_t k0 = std::max(j0, j > bw ? j - bw : 0);
                double s = d[l_.slot(i, j)];
                const double* li = &d[l_.slot(i, k0)];
                const double* lj = &d[l_.slot(j, k0)];
                for (std::size_t k = 0; k < j - k0; ++k) s -= li[k] * lj[k];
                if (i == j) {
                    const double diag = d[l_.slot(i, i)];
                    if (!(s > 1e-14 * std::abs(diag)) || !std::isfinite(s))
                        throw AssemblyError("banded Cholesky: matrix is not positive definite at row " +
                                            std::to_string(i));
                    d[l_.slot(i, i)] = std::sqrt(s);
                } else {
                    d[l_.slot(i, j)] = s / d[l_.slot(j, j)];
                }
            }
        }
    }

    [[nodiscard]] Vector solve(const Vector& b) const {
        const std::size_t n = l_.size(), bw = l_.bandwidth();
        if (static_cast<std::size_t>(b.size()) != n) throw DimensionMismatch("banded solve: vector length");
        const auto& d = l_.raw();
        Vector y = b;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j0 = i > bw ? i - bw : 0;
            double s = y(static_cast<Eigen::Index>(i));
            for (std::size_t j = j0; j < i; ++j) s -= d[l_.slot(i, j)] * y(static_cast<Eigen::Index>(j));
            y(static_cast<Eigen::Index>(i)) = s / d[l_.slot(i, i)];
        }
        for (std::size_t ii = n; ii-- > 0;) {
            const double yi = y(static_cast<Eigen::Index>(ii)) / d[l_.slot(ii, ii)];
            y(static_cast<Eigen::Index>(ii)) = yi;
            const std::size_t j0 = ii > bw ? ii - bw : 0;
            for (std::size_t j = j0; j < ii; ++j) y(static_cast<Eigen::Index>(j)) -= d[l_.slot(ii, j)] * yi;
        }
        return y;
    }

private:
    BandedMatrix l_;
};

} // namespace cvis::fem
