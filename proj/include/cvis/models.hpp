#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/core/parallel.hpp"
#include "cvis/core/rng.hpp"
#include "cvis/core/stats.hpp"
#include "cvis/densities.hpp"
#include "cvis/fem.hpp"
#include "cvis/model.hpp"
#include "cvis/model_pair.hpp"
#include "cvis/theory.hpp"

namespace cvis {

// ---------------------------------------------------------------------------
// Analytic threshold models

/// Y(z) = z on N(0, 1) with failure when z > l.
inline Model threshold_model(std::string name, double l, double cost = 1.0) {
    return Model(std::move(name), 1, [](std::span<const double> z) { return z[0]; }, cost)
        .with_threshold(l)
        .with_exact_mean(1.0 - normal_cdf(l));
}

/// HF g₀ = l₀ - z and LF g₁ = l₁ - z under a standard normal input.
inline ModelPair analytic_pair(double l0 = 3.0, double l1 = 2.8, double cost_ratio = 30.0) {
    if (!(cost_ratio > 0.0)) throw InvalidArgument("analytic_pair: cost ratio must be positive");
    return ModelPair(threshold_model("analytic-hf", l0, cost_ratio), threshold_model("analytic-lf", l1, 1.0),
                     std::make_shared<const Density>(StandardNormal(1)));
}

/// Proposal-defining model g(z) = l - z of an intermediate biasing density.
inline Model intermediate_threshold(double l_seq) { return threshold_model("intermediate", l_seq); }

/// Exact conditional density p(z | z > l) of the intermediate model.
inline Density intermediate_density(double l_seq) {
    return Density(ConditionalDensity(std::make_shared<const Density>(StandardNormal(1)),
                                      std::make_shared<const Model>(intermediate_threshold(l_seq)),
                                      1.0 - normal_cdf(l_seq)));
}

// ---------------------------------------------------------------------------
// Synthetic linear-Gaussian ensembles

struct SyntheticFamily {
    std::vector<Model> models;  // Y₀, Y₁, ..., Y_M
    Vector means;
    Matrix covariance;          // (M+1)×(M+1)
    ModelStatistics stats;
    std::shared_ptr<const Density> input;
};

namespace detail {

/// Lower factor L with L Lᵀ = a for a positive semidefinite a.
inline Matrix semidefinite_factor(const Matrix& a) {
    const Eigen::Index n = a.rows();
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    Matrix l = Matrix::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d < -1e-10 * scale) throw ConstructionError("synthetic family: target covariance is not PSD");
        const bool null_pivot = d <= 1e-12 * scale;
        l(j, j) = null_pivot ? 0.0 : std::sqrt(d);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (null_pivot) {
                if (std::abs(s) > 1e-8 * scale) throw ConstructionError("synthetic family: target covariance is not PSD");
                l(i, j) = 0.0;
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

} // namespace detail

/// Models Yᵢ(z) = μᵢ + (L z)ᵢ on z ~ N(0, I) with L Lᵀ the target covariance.
inline SyntheticFamily synthetic_gaussian_family(const Matrix& correlation, const Vector& variances,
                                                 const Vector& means) {
    const Eigen::Index n = correlation.rows();
    if (n < 2 || correlation.cols() != n || variances.size() != n || means.size() != n)
        throw DimensionMismatch("synthetic family: need an (M+1)×(M+1) correlation with M >= 1");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(variances(i) > 0.0)) throw ConstructionError("synthetic family: variances must be positive");
        if (std::abs(correlation(i, i) - 1.0) > 1e-12) throw ConstructionError("synthetic family: unit diagonal required");
        for (Eigen::Index j = 0; j < n; ++j) {
            if (std::abs(correlation(i, j) - correlation(j, i)) > 1e-12)
                throw ConstructionError("synthetic family: correlation must be symmetric");
            if (std::abs(correlation(i, j)) > 1.0 + 1e-12)
                throw ConstructionError("synthetic family: correlations must lie in [-1, 1]");
        }
    }
    const Vector sd = variances.cwiseSqrt();
    SyntheticFamily fam;
    fam.covariance = sd.asDiagonal() * correlation * sd.asDiagonal();
    fam.means = means;
    const Matrix l = detail::semidefinite_factor(fam.covariance);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector row = l.row(i).transpose();
        const double mu = means(i);
        fam.models.push_back(
            Model("synthetic-" + std::to_string(i), static_cast<std::size_t>(n),
                  [row, mu](std::span<const double> z) { return mu + row.dot(as_vector(z)); })
                .with_exact_mean(mu));
    }
    const Eigen::Index m = n - 1;
    fam.stats.C = fam.covariance.bottomRightCorner(m, m);
    fam.stats.c = fam.covariance.col(0).tail(m);
    fam.stats.var0 = fam.covariance(0, 0);
    fam.input = std::make_shared<const Density>(StandardNormal(static_cast<std::size_t>(n)));
    return fam;
}

/// Family whose controls correlate with Y₀ by ρᵢ and with each other by ρᵢρⱼ.
inline SyntheticFamily synthetic_gaussian_family(const Vector& rho, const Vector& variances, const Vector& means) {
    const Eigen::Index m = rho.size();
    Matrix corr = Matrix::Identity(m + 1, m + 1);
    for (Eigen::Index i = 0; i < m; ++i) {
        corr(0, i + 1) = corr(i + 1, 0) = rho(i);
        for (Eigen::Index j = 0; j < m; ++j)
            if (i != j) corr(i + 1, j + 1) = rho(i) * rho(j);
    }
    return synthetic_gaussian_family(corr, variances, means);
}

/// Unit-variance, zero-mean family with M exchangeable controls and the given R².
///
/// Controls share one correlation ρ with Y₀ and ρ² with each other, so
/// R² = M ρ² / (1 + (M - 1) ρ²).
inline SyntheticFamily synthetic_family_for_r2(Eigen::Index m, double r2) {
    if (m < 1) throw InvalidArgument("synthetic_family_for_r2: need M >= 1");
    if (!(r2 >= 0.0 && r2 <= 1.0)) throw InvalidArgument("synthetic_family_for_r2: R² must lie in [0, 1]");
    const double md = static_cast<double>(m);
    const double rho2 = r2 / (md - (md - 1.0) * r2);
    const Vector rho = Vector::Constant(m, std::sqrt(rho2));
    return synthetic_gaussian_family(rho, Vector(Vector::Ones(m + 1)), Vector(Vector::Zero(m + 1)));
}

// ---------------------------------------------------------------------------
// Threshold calibration

struct Calibration {
    double threshold = 0.0;
    double achieved_pf = 0.0;
};

/// Threshold l so that P(QoI > l) ≈ target_pf over n_ref reference samples of p.
inline Calibration calibrate_thresholds(const Model& model, const Density& p, double target_pf, std::size_t n_ref,
                                        RngStream& rng, unsigned threads = 1) {
    if (!(target_pf > 0.0 && target_pf <= 0.5)) throw InvalidArgument("calibrate_thresholds: need 0 < P_f <= 0.5");
    if (static_cast<double>(n_ref) * target_pf < 100.0)
        throw InsufficientTailMass("calibrate_thresholds: n_ref * P_f = " +
                                   std::to_string(static_cast<double>(n_ref) * target_pf) + " < 100");
    if (p.dimension() != model.dimension()) throw DimensionMismatch("calibrate_thresholds: density dimension");
    const SampleMatrix z = p.sample(rng, n_ref);
    std::vector<double> q(n_ref);
    parallel_for(n_ref, threads, [&](std::size_t i) { q[i] = model.response(row_span(z, static_cast<Eigen::Index>(i))); });
    Calibration c;
    c.threshold = empirical_quantile(q, 1.0 - target_pf);
    std::size_t above = 0;
    for (double v : q)
        if (v > c.threshold) ++above;
    c.achieved_pf = static_cast<double>(above) / static_cast<double>(n_ref);
    return c;
}

// ---------------------------------------------------------------------------
// Cantilever beam

struct BeamConfig {
    std::array<int, 2> hf_mesh{60, 20};
    std::array<int, 2> lf_mesh{30, 10};
    int n_per_direction = 5;
    int n_kl = 10;
    int n_quad = 128;
    double a = 1.0;
    double b = 2.0;
    double nu = 0.3;
    std::array<double, 2> corr_lengths{60.0, 20.0};
    std::array<double, 2> dims{0.6, 0.2};
    double load = 1.0;
    double cost_ratio = 11.0;
    std::optional<double> hf_threshold;
    std::optional<double> lf_threshold;
};

/// Cantilever fixed at x = 0 with a vertical point load at the upper-right corner.
/// The QoI is the deflection of the load point in the load direction.
class BeamProblem {
public:
    explicit BeamProblem(const BeamConfig& cfg = {})
        : cfg_(cfg),
          basis_(cfg.corr_lengths, cfg.dims, cfg.n_per_direction, cfg.n_kl, cfg.n_quad),
          hf_(cfg.hf_mesh[0], cfg.hf_mesh[1], cfg.dims[0], cfg.dims[1]),
          lf_(cfg.lf_mesh[0], cfg.lf_mesh[1], cfg.dims[0], cfg.dims[1]),
          hf_field_(basis_.field_matrix(hf_.centroids())),
          lf_field_(basis_.field_matrix({{0.5 * cfg.dims[0], 0.5 * cfg.dims[1]}})) {
        if (!(cfg.a < cfg.b) || !(cfg.a > 0.0)) throw InvalidArgument("beam: need 0 < a < b");
    }

    [[nodiscard]] const BeamConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const fem::KLBasis& basis() const noexcept { return basis_; }
    [[nodiscard]] const fem::StructuredMesh& hf_mesh() const noexcept { return hf_; }
    [[nodiscard]] const fem::StructuredMesh& lf_mesh() const noexcept { return lf_; }
    [[nodiscard]] std::size_t dimension() const noexcept { return basis_.size(); }

    /// Young's modulus at each HF element centroid.
    [[nodiscard]] std::vector<double> hf_moduli(std::span<const double> xi) const {
        const Vector y = hf_field_ * as_vector(check(xi));
        std::vector<double> e(static_cast<std::size_t>(y.size()));
        for (Eigen::Index i = 0; i < y.size(); ++i) e[static_cast<std::size_t>(i)] = fem::young_modulus(y(i), cfg_.a, cfg_.b);
        return e;
    }

    /// The LF modulus, the field at the beam centroid, repeated over the coarse elements.
    [[nodiscard]] std::vector<double> lf_moduli(std::span<const double> xi) const {
        const double y = (lf_field_ * as_vector(check(xi)))(0);
        return std::vector<double>(lf_.element_count(), fem::young_modulus(y, cfg_.a, cfg_.b));
    }

    [[nodiscard]] double hf_deflection(std::span<const double> xi) const { return deflection(hf_, hf_moduli(xi)); }
    [[nodiscard]] double lf_deflection(std::span<const double> xi) const { return deflection(lf_, lf_moduli(xi)); }

    [[nodiscard]] double deflection(const fem::StructuredMesh& mesh, const std::vector<double>& e) const {
        auto sys = fem::assemble_plane_stress(mesh, e, cfg_.nu, 1.0);
        const std::size_t tip = mesh.nearest_node(cfg_.dims[0], cfg_.dims[1]);
        fem::add_point_load(sys, tip, 1, -cfg_.load);
        return -fem::solve(sys)(static_cast<Eigen::Index>(2 * tip + 1));
    }

private:
    std::span<const double> check(std::span<const double> xi) const {
        if (xi.size() != basis_.size()) throw DimensionMismatch("beam: expected " + std::to_string(basis_.size()) + " KL coefficients");
        return xi;
    }

    BeamConfig cfg_;
    fem::KLBasis basis_;
    fem::StructuredMesh hf_, lf_;
    Matrix hf_field_, lf_field_;
};

inline ModelPair beam_pair(std::shared_ptr<const BeamProblem> problem) {
    const auto& cfg = problem->config();
    Model hf("beam-hf", problem->dimension(), [problem](std::span<const double> xi) { return problem->hf_deflection(xi); },
             cfg.cost_ratio);
    Model lf("beam-lf", problem->dimension(), [problem](std::span<const double> xi) { return problem->lf_deflection(xi); },
             1.0);
    if (cfg.hf_threshold) hf = hf.with_threshold(*cfg.hf_threshold);
    if (cfg.lf_threshold) lf = lf.with_threshold(*cfg.lf_threshold);
    return ModelPair(std::move(hf), std::move(lf), std::make_shared<const Density>(StandardNormal(problem->dimension())));
}

inline ModelPair beam_pair(const BeamConfig& cfg = {}) { return beam_pair(std::make_shared<const BeamProblem>(cfg)); }

// ---------------------------------------------------------------------------
// Clamped Mindlin plate

struct PlateConfig {
    int hf_mesh = 30;
    int lf_mesh = 10;
    double e = 1e4;
    double nu = 0.3;
    double kappa = 5.0 / 6.0;
    std::array<double, 2> thickness_range{0.05, 0.1};
    std::array<double, 2> load_range{1.0, 2.0};
    double cost_ratio = 37.0;
    std::optional<double> hf_threshold;
    std::optional<double> lf_threshold;
};

/// Unit square plate, clamped on all edges, with thickness hᵢ and pressure sᵢ on
/// quadrant i. Inputs are 8 standard normals mapped through Φ onto the uniform
/// ranges: z₀..z₃ give h, z₄..z₇ give s. The QoI is the center deflection.
class PlateProblem {
public:
    explicit PlateProblem(const PlateConfig& cfg = {})
        : cfg_(cfg), hf_(cfg.hf_mesh, cfg.hf_mesh, 1.0, 1.0), lf_(cfg.lf_mesh, cfg.lf_mesh, 1.0, 1.0) {
        if (cfg.hf_mesh % 2 != 0 || cfg.lf_mesh % 2 != 0)
            throw InvalidArgument("plate: element counts must be even so quadrants align with elements");
    }

    [[nodiscard]] const PlateConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const fem::StructuredMesh& hf_mesh() const noexcept { return hf_; }
    [[nodiscard]] const fem::StructuredMesh& lf_mesh() const noexcept { return lf_; }

    /// Physical inputs (h₁..h₄, s₁..s₄) from the latent normals.
    [[nodiscard]] std::pair<std::array<double, 4>, std::array<double, 4>> physical(std::span<const double> z) const {
        if (z.size() != 8) throw DimensionMismatch("plate: expected 8 inputs");
        std::pair<std::array<double, 4>, std::array<double, 4>> out;
        const auto& hr = cfg_.thickness_range;
        const auto& sr = cfg_.load_range;
        for (std::size_t i = 0; i < 4; ++i) {
            out.first[i] = hr[0] + (hr[1] - hr[0]) * normal_cdf(z[i]);
            out.second[i] = sr[0] + (sr[1] - sr[0]) * normal_cdf(z[4 + i]);
        }
        return out;
    }

    [[nodiscard]] double center_deflection(const fem::StructuredMesh& mesh, const std::array<double, 4>& h,
                                           const std::array<double, 4>& s) const {
        const Vector u = fem::solve(fem::assemble_mindlin(mesh, h, s, cfg_.e, cfg_.nu, cfg_.kappa));
        return u(static_cast<Eigen::Index>(3 * mesh.nearest_node(0.5, 0.5)));
    }

    [[nodiscard]] double hf_deflection(std::span<const double> z) const {
        const auto [h, s] = physical(z);
        return center_deflection(hf_, h, s);
    }

    [[nodiscard]] double lf_deflection(std::span<const double> z) const {
        const auto [h, s] = physical(z);
        return center_deflection(lf_, h, s);
    }

private:
    PlateConfig cfg_;
    fem::StructuredMesh hf_, lf_;
};

inline ModelPair plate_pair(std::shared_ptr<const PlateProblem> problem) {
    const auto& cfg = problem->config();
    Model hf("plate-hf", 8, [problem](std::span<const double> z) { return problem->hf_deflection(z); }, cfg.cost_ratio);
    Model lf("plate-lf", 8, [problem](std::span<const double> z) { return problem->lf_deflection(z); }, 1.0);
    if (cfg.hf_threshold) hf = hf.with_threshold(*cfg.hf_threshold);
    if (cfg.lf_threshold) lf = lf.with_threshold(*cfg.lf_threshold);
    return ModelPair(std::move(hf), std::move(lf), std::make_shared<const Density>(StandardNormal(8)));
}

inline ModelPair plate_pair(const PlateConfig& cfg = {}) { return plate_pair(std::make_shared<const PlateProblem>(cfg)); }

} // namespace cvis
