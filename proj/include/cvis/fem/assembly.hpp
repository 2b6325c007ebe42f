#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/fem/banded.hpp"
#include "cvis/fem/mesh.hpp"

namespace cvis::fem {

/// Stiffness and load over the free DOFs. Constrained DOFs carry prescribed values.
struct AssembledSystem {
    BandedMatrix stiffness;
    Vector load;
    std::size_t dofs_per_node = 0;
    std::vector<std::ptrdiff_t> free_index;  // full DOF -> row of the reduced system, or -1
    Vector prescribed;                       // full length; zero on free DOFs

    [[nodiscard]] std::size_t full_size() const noexcept { return free_index.size(); }
    [[nodiscard]] std::size_t free_size() const noexcept { return stiffness.size(); }

    [[nodiscard]] std::vector<std::size_t> constrained() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < free_index.size(); ++k)
            if (free_index[k] < 0) out.push_back(k);
        return out;
    }
};

/// Scatter of element matrices into a banded system.
///
/// element_matrix(e) and element_load(e) return the dense element stiffness and
/// load in node-major DOF order; an empty load means none. bc[k] fixes DOF k.
template <class ElementMatrix, class ElementLoad>
AssembledSystem assemble(const StructuredMesh& mesh, std::size_t dofs_per_node,
                         const std::vector<std::optional<double>>& bc, ElementMatrix&& element_matrix,
                         ElementLoad&& element_load) {
    const std::size_t ndof = mesh.node_count() * dofs_per_node;
    if (bc.size() != ndof) throw DimensionMismatch("assemble: boundary data has the wrong length");
    AssembledSystem sys;
    sys.dofs_per_node = dofs_per_node;
    sys.free_index.assign(ndof, -1);
    sys.prescribed = Vector::Zero(static_cast<Eigen::Index>(ndof));
    std::ptrdiff_t nfree = 0;
    for (std::size_t k = 0; k < ndof; ++k) {
        if (bc[k]) sys.prescribed(static_cast<Eigen::Index>(k)) = *bc[k];
        else sys.free_index[k] = nfree++;
    }
    if (nfree == 0) throw AssemblyError("assemble: every DOF is constrained");

    const std::size_t ne = 4 * dofs_per_node;
    std::vector<std::size_t> edofs(ne);
    auto element_dofs = [&](std::size_t e) {
        const auto& nodes = mesh.element(e);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t c = 0; c < dofs_per_node; ++c) edofs[a * dofs_per_node + c] = nodes[a] * dofs_per_node + c;
    };

    std::size_t bw = 0;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        element_dofs(e);
        std::ptrdiff_t lo = nfree, hi = -1;
        for (std::size_t k : edofs) {
            const std::ptrdiff_t r = sys.free_index[k];
            if (r < 0) continue;
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        if (hi >= lo) bw = std::max(bw, static_cast<std::size_t>(hi - lo));
    }

    sys.stiffness = BandedMatrix(static_cast<std::size_t>(nfree), bw);
    sys.load = Vector::Zero(nfree);
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        element_dofs(e);
        const Matrix ke = element_matrix(e);
        const Vector fe = element_load(e);
        if (ke.rows() != static_cast<Eigen::Index>(ne) || ke.cols() != static_cast<Eigen::Index>(ne))
            throw DimensionMismatch("assemble: element matrix has the wrong size");
        if (fe.size() != 0 && fe.size() != static_cast<Eigen::Index>(ne))
            throw DimensionMismatch("assemble: element load has the wrong size");
        for (std::size_t a = 0; a < ne; ++a) {
            const std::ptrdiff_t ra = sys.free_index[edofs[a]];
            if (ra < 0) continue;
            if (fe.size() != 0) sys.load(ra) += fe(static_cast<Eigen::Index>(a));
            for (std::size_t b = 0; b < ne; ++b) {
                const double kab = ke(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                const std::ptrdiff_t rb = sys.free_index[edofs[b]];
                if (rb < 0) sys.load(ra) -= kab * sys.prescribed(static_cast<Eigen::Index>(edofs[b]));
                else if (rb <= ra) sys.stiffness.add(static_cast<std::size_t>(ra), static_cast<std::size_t>(rb), kab);
            }
        }
    }
    return sys;
}

/// Adds a nodal force to a free DOF; forces on constrained DOFs are reactions and are dropped.
inline void add_point_load(AssembledSystem& sys, std::size_t node, std::size_t dof, double value) {
    const std::size_t k = node * sys.dofs_per_node + dof;
    if (dof >= sys.dofs_per_node || k >= sys.full_size()) throw OutOfDomain("add_point_load: DOF out of range");
    const std::ptrdiff_t r = sys.free_index[k];
    if (r >= 0) sys.load(r) += value;
}

/// Full displacement vector: free DOFs from a banded Cholesky solve, constrained DOFs prescribed.
inline Vector solve(const AssembledSystem& sys) {
    const BandedCholesky chol(sys.stiffness);
    const Vector ur = chol.solve(sys.load);
    Vector u = sys.prescribed;
    for (std::size_t k = 0; k < sys.free_index.size(); ++k)
        if (sys.free_index[k] >= 0) u(static_cast<Eigen::Index>(k)) = ur(sys.free_index[k]);
    return u;
}

/// ‖K u - f‖ / ‖f‖ over the free DOFs.
inline double relative_residual(const AssembledSystem& sys, const Vector& u_full) {
    Vector ur(static_cast<Eigen::Index>(sys.free_size()));
    for (std::size_t k = 0; k < sys.free_index.size(); ++k)
        if (sys.free_index[k] >= 0) ur(sys.free_index[k]) = u_full(static_cast<Eigen::Index>(k));
    const double fn = sys.load.norm();
    return (sys.stiffness.multiply(ur) - sys.load).norm() / (fn > 0.0 ? fn : 1.0);
}

} // namespace cvis::fem
