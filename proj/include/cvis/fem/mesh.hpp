#pragma once

#include <array>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cvis/core/error.hpp"

namespace cvis::fem {

enum class NodeOrder {
    automatic,  // shorter side first
    x_fastest,
    y_fastest,
};

/// Rectangular [0, lx] × [0, ly] grid of nx × ny equal Q4 elements.
class StructuredMesh {
public:
    StructuredMesh(int nx, int ny, double lx, double ly, NodeOrder order = NodeOrder::automatic)
        : nx_(nx), ny_(ny), lx_(lx), ly_(ly) {
        if (nx < 1 || ny < 1) throw InvalidArgument("StructuredMesh: element counts must be positive");
        if (!(lx > 0.0) || !(ly > 0.0)) throw InvalidArgument("StructuredMesh: dimensions must be positive");
        if (order == NodeOrder::automatic) order = ny <= nx ? NodeOrder::y_fastest : NodeOrder::x_fastest;
        order_ = order;
        const std::size_t nn = node_count();
        coords_.resize(nn);
        for (int i = 0; i <= nx_; ++i)
            for (int j = 0; j <= ny_; ++j) coords_[node_at(i, j)] = {lx_ * i / nx_, ly_ * j / ny_};
        elements_.resize(static_cast<std::size_t>(nx_ * ny_));
        for (int j = 0; j < ny_; ++j)
            for (int i = 0; i < nx_; ++i)
                elements_[element_at(i, j)] = {node_at(i, j), node_at(i + 1, j), node_at(i + 1, j + 1), node_at(i, j + 1)};
    }

    /// Same grid with the nodes relabelled by perm (new id = perm[old id]).
    [[nodiscard]] StructuredMesh renumbered(const std::vector<std::size_t>& perm) const {
        if (perm.size() != node_count()) throw DimensionMismatch("renumbered: permutation has the wrong length");
        std::vector<bool> seen(perm.size(), false);
        for (std::size_t p : perm) {
            if (p >= perm.size() || seen[p]) throw InvalidArgument("renumbered: not a permutation");
            seen[p] = true;
        }
        StructuredMesh m = *this;
        for (std::size_t old = 0; old < perm.size(); ++old) m.coords_[perm[old]] = coords_[old];
        for (auto& e : m.elements_)
            for (auto& n : e) n = perm[n];
        m.custom_ = true;
        return m;
    }

    [[nodiscard]] int nx() const noexcept { return nx_; }
    [[nodiscard]] int ny() const noexcept { return ny_; }
    [[nodiscard]] double lx() const noexcept { return lx_; }
    [[nodiscard]] double ly() const noexcept { return ly_; }
    [[nodiscard]] double hx() const noexcept { return lx_ / nx_; }
    [[nodiscard]] double hy() const noexcept { return ly_ / ny_; }
    [[nodiscard]] std::size_t node_count() const noexcept { return static_cast<std::size_t>((nx_ + 1) * (ny_ + 1)); }
    [[nodiscard]] std::size_t element_count() const noexcept { return elements_.size(); }
    [[nodiscard]] const std::array<double, 2>& node(std::size_t n) const { return coords_.at(n); }
    [[nodiscard]] const std::vector<std::array<double, 2>>& nodes() const noexcept { return coords_; }
    /// Counterclockwise node ids of element e.
    [[nodiscard]] const std::array<std::size_t, 4>& element(std::size_t e) const { return elements_.at(e); }

    /// Node id of grid point (i, j). Only meaningful before renumbering.
    [[nodiscard]] std::size_t node_at(int i, int j) const {
        if (custom_) throw InvalidArgument("node_at: mesh has a custom numbering");
        if (i < 0 || i > nx_ || j < 0 || j > ny_) throw OutOfDomain("node_at: grid index out of range");
        return order_ == NodeOrder::y_fastest ? static_cast<std::size_t>(i * (ny_ + 1) + j)
                                              : static_cast<std::size_t>(j * (nx_ + 1) + i);
    }

    /// Element (i, j) in the x-fastest element order, independent of node numbering.
    [[nodiscard]] std::size_t element_at(int i, int j) const {
        if (i < 0 || i >= nx_ || j < 0 || j >= ny_) throw OutOfDomain("element_at: grid index out of range");
        return static_cast<std::size_t>(j * nx_ + i);
    }

    [[nodiscard]] std::array<double, 2> centroid(std::size_t e) const {
        const auto& n = element(e);
        std::array<double, 2> c{0.0, 0.0};
        for (std::size_t k : n) {
            c[0] += 0.25 * coords_[k][0];
            c[1] += 0.25 * coords_[k][1];
        }
        return c;
    }

    [[nodiscard]] std::vector<std::array<double, 2>> centroids() const {
        std::vector<std::array<double, 2>> out(element_count());
        for (std::size_t e = 0; e < out.size(); ++e) out[e] = centroid(e);
        return out;
    }

    /// Jacobian determinant of the bilinear map of element e at (ξ, η).
    [[nodiscard]] double jacobian_det(std::size_t e, double xi, double eta) const {
        static constexpr double sx[4] = {-1, 1, 1, -1};
        static constexpr double sy[4] = {-1, -1, 1, 1};
        double j11 = 0, j12 = 0, j21 = 0, j22 = 0;
        const auto& n = element(e);
        for (int k = 0; k < 4; ++k) {
            const double dxi = 0.25 * sx[k] * (1 + sy[k] * eta);
            const double deta = 0.25 * sy[k] * (1 + sx[k] * xi);
            const auto& p = coords_[n[static_cast<std::size_t>(k)]];
            j11 += dxi * p[0];
            j12 += dxi * p[1];
            j21 += deta * p[0];
            j22 += deta * p[1];
        }
        return j11 * j22 - j12 * j21;
    }

    /// Node closest to the point (x, y).
    [[nodiscard]] std::size_t nearest_node(double x, double y) const {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < coords_.size(); ++k) {
            const double d = (coords_[k][0] - x) * (coords_[k][0] - x) + (coords_[k][1] - y) * (coords_[k][1] - y);
            if (d < bd) {
                bd = d;
                best = k;
            }
        }
        return best;
    }

private:
    int nx_, ny_;
    double lx_, ly_;
    NodeOrder order_ = NodeOrder::y_fastest;
    bool custom_ = false;
    std::vector<std::array<double, 2>> coords_;
    std::vector<std::array<std::size_t, 4>> elements_;
};

} // namespace cvis::fem
