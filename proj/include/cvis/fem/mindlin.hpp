#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/fem/assembly.hpp"
#include "cvis/fem/mesh.hpp"
#include "cvis/fem/plane_stress.hpp"

namespace cvis::fem {

/// Quadrant of the element centroid: 0 lower-left, 1 lower-right, 2 upper-left, 3 upper-right.
inline std::size_t plate_region(const StructuredMesh& mesh, std::size_t e) {
    const auto c = mesh.centroid(e);
    return (c[0] > 0.5 * mesh.lx() ? 1u : 0u) + (c[1] > 0.5 * mesh.ly() ? 2u : 0u);
}

struct MindlinElement {
    Matrix bending;  // per unit h³
    Matrix shear;    // per unit h
    Vector load;     // per unit pressure
};

/// Q4 Mindlin element, DOFs (w, θ₁, θ₂) per node. Bending uses 2×2 Gauss, shear 1×1.
inline MindlinElement q4_mindlin(const ElementCoords& xy, double e, double nu, double kappa) {
    MindlinElement m{Matrix::Zero(12, 12), Matrix::Zero(12, 12), Vector::Zero(12)};
    Matrix db(3, 3);
    db << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu);
    db *= e / (12.0 * (1.0 - nu * nu));
    const double ds = kappa * e / (2.0 * (1.0 + nu));

    for (double xi : {-kGauss2, kGauss2})
        for (double eta : {-kGauss2, kGauss2}) {
            const Q4Point q = q4_point(xy, xi, eta);
            Matrix bb = Matrix::Zero(3, 12);
            for (Eigen::Index k = 0; k < 4; ++k) {
                const auto s = static_cast<std::size_t>(k);
                bb(0, 3 * k + 1) = q.dx[s];
                bb(1, 3 * k + 2) = q.dy[s];
                bb(2, 3 * k + 1) = q.dy[s];
                bb(2, 3 * k + 2) = q.dx[s];
                m.load(3 * k) += q.n[s] * q.det_j;
            }
            m.bending += bb.transpose() * db * bb * q.det_j;
        }

    const Q4Point q = q4_point(xy, 0.0, 0.0);
    Matrix bs = Matrix::Zero(2, 12);
    for (Eigen::Index k = 0; k < 4; ++k) {
        const auto s = static_cast<std::size_t>(k);
        bs(0, 3 * k) = q.dx[s];
        bs(0, 3 * k + 1) = q.n[s];
        bs(1, 3 * k) = q.dy[s];
        bs(1, 3 * k + 2) = q.n[s];
    }
    m.shear = bs.transpose() * bs * (ds * 4.0 * q.det_j);
    return m;
}

/// Clamped Mindlin plate with thickness and transverse pressure constant on each quadrant.
inline AssembledSystem assemble_mindlin(const StructuredMesh& mesh, const std::array<double, 4>& thickness,
                                        const std::array<double, 4>& load, double e, double nu, double kappa) {
    for (double h : thickness)
        if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("assemble_mindlin: thicknesses must be positive");
    for (double s : load)
        if (!std::isfinite(s)) throw InvalidArgument("assemble_mindlin: loads must be finite");
    if (!(e > 0.0)) throw InvalidArgument("assemble_mindlin: modulus must be positive");
    if (!(nu > -1.0 && nu < 0.5)) throw InvalidArgument("assemble_mindlin: need -1 < nu < 0.5");
    if (!(kappa > 0.0)) throw InvalidArgument("assemble_mindlin: shear correction must be positive");

    std::vector<std::optional<double>> bc(mesh.node_count() * 3);
    for (std::size_t n = 0; n < mesh.node_count(); ++n) {
        const auto& p = mesh.node(n);
        if (p[0] == 0.0 || p[1] == 0.0 || p[0] == mesh.lx() || p[1] == mesh.ly())
            for (std::size_t c = 0; c < 3; ++c) bc[3 * n + c] = 0.0;
    }
    const MindlinElement unit = q4_mindlin(element_coords(mesh, 0), e, nu, kappa);
    std::vector<std::size_t> region(mesh.element_count());
    for (std::size_t el = 0; el < region.size(); ++el) region[el] = plate_region(mesh, el);
    return assemble(
        mesh, 3, bc,
        [&](std::size_t el) -> Matrix {
            const double h = thickness[region[el]];
            return unit.bending * (h * h * h) + unit.shear * h;
        },
        [&](std::size_t el) -> Vector { return unit.load * load[region[el]]; });
}

} // namespace cvis::fem
