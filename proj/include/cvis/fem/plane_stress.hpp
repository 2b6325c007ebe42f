#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/fem/assembly.hpp"
#include "cvis/fem/mesh.hpp"

namespace cvis::fem {

using ElementCoords = std::array<std::array<double, 2>, 4>;

inline ElementCoords element_coords(const StructuredMesh& mesh, std::size_t e) {
    ElementCoords xy;
    for (std::size_t a = 0; a < 4; ++a) xy[a] = mesh.node(mesh.element(e)[a]);
    return xy;
}

/// Bilinear shape functions and their x/y gradients at (ξ, η).
struct Q4Point {
    std::array<double, 4> n{};
    std::array<double, 4> dx{};
    std::array<double, 4> dy{};
    double det_j = 0.0;
};

inline Q4Point q4_point(const ElementCoords& xy, double xi, double eta) {
    static constexpr double sx[4] = {-1, 1, 1, -1};
    static constexpr double sy[4] = {-1, -1, 1, 1};
    Q4Point q;
    std::array<double, 4> dxi{}, deta{};
    double j11 = 0, j12 = 0, j21 = 0, j22 = 0;
    for (std::size_t k = 0; k < 4; ++k) {
        q.n[k] = 0.25 * (1 + sx[k] * xi) * (1 + sy[k] * eta);
        dxi[k] = 0.25 * sx[k] * (1 + sy[k] * eta);
        deta[k] = 0.25 * sy[k] * (1 + sx[k] * xi);
        j11 += dxi[k] * xy[k][0];
        j12 += dxi[k] * xy[k][1];
        j21 += deta[k] * xy[k][0];
        j22 += deta[k] * xy[k][1];
    }
    q.det_j = j11 * j22 - j12 * j21;
    if (!(q.det_j > 0.0)) throw AssemblyError("Q4 element has a non-positive Jacobian");
    for (std::size_t k = 0; k < 4; ++k) {
        q.dx[k] = (j22 * dxi[k] - j12 * deta[k]) / q.det_j;
        q.dy[k] = (-j21 * dxi[k] + j11 * deta[k]) / q.det_j;
    }
    return q;
}

inline constexpr double kGauss2 = 0.57735026918962576451;

/// Plane-stress constitutive matrix.
inline Matrix plane_stress_d(double e, double nu) {
    Matrix d(3, 3);
    d << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu);
    return d * (e / (1.0 - nu * nu));
}

/// Strain-displacement matrix (εxx, εyy, γxy) for DOF order (u₀, v₀, u₁, v₁, ...).
inline Matrix plane_stress_b(const Q4Point& q) {
    Matrix b = Matrix::Zero(3, 8);
    for (Eigen::Index k = 0; k < 4; ++k) {
        const auto s = static_cast<std::size_t>(k);
        b(0, 2 * k) = q.dx[s];
        b(1, 2 * k + 1) = q.dy[s];
        b(2, 2 * k) = q.dy[s];
        b(2, 2 * k + 1) = q.dx[s];
    }
    return b;
}

/// 2×2 Gauss stiffness of a Q4 plane-stress element.
inline Matrix q4_plane_stress_stiffness(const ElementCoords& xy, double e, double nu, double thickness) {
    const Matrix d = plane_stress_d(e, nu);
    Matrix k = Matrix::Zero(8, 8);
    for (double xi : {-kGauss2, kGauss2})
        for (double eta : {-kGauss2, kGauss2}) {
            const Q4Point q = q4_point(xy, xi, eta);
            const Matrix b = plane_stress_b(q);
            k += b.transpose() * d * b * (q.det_j * thickness);
        }
    return k;
}

/// Strain (εxx, εyy, γxy) at (ξ, η) from element displacements.
inline Vector q4_plane_stress_strain(const ElementCoords& xy, const Vector& ue, double xi, double eta) {
    if (ue.size() != 8) throw DimensionMismatch("q4_plane_stress_strain: expected 8 displacements");
    return plane_stress_b(q4_point(xy, xi, eta)) * ue;
}

/// Plane-stress system with the edge x = 0 fixed. E is given per element.
///
/// Every element of a structured mesh is congruent, so one unit-modulus element
/// matrix is scaled by E_e t.
inline AssembledSystem assemble_plane_stress(const StructuredMesh& mesh, const std::vector<double>& e_per_element,
                                             double nu, double thickness = 1.0) {
    if (e_per_element.size() != mesh.element_count())
        throw DimensionMismatch("assemble_plane_stress: one modulus per element expected");
    if (!(nu > 0.0 && nu < 0.5)) throw InvalidArgument("assemble_plane_stress: need 0 < nu < 0.5");
    if (!(thickness > 0.0)) throw InvalidArgument("assemble_plane_stress: thickness must be positive");
    for (double e : e_per_element)
        if (!(e > 0.0) || !std::isfinite(e)) throw InvalidArgument("assemble_plane_stress: moduli must be positive");

    std::vector<std::optional<double>> bc(mesh.node_count() * 2);
    for (std::size_t n = 0; n < mesh.node_count(); ++n)
        if (mesh.node(n)[0] == 0.0) {
            bc[2 * n] = 0.0;
            bc[2 * n + 1] = 0.0;
        }
    const Matrix unit = q4_plane_stress_stiffness(element_coords(mesh, 0), 1.0, nu, thickness);
    return assemble(
        mesh, 2, bc, [&](std::size_t e) -> Matrix { return unit * e_per_element[e]; },
        [](std::size_t) { return Vector(); });
}

} // namespace cvis::fem
