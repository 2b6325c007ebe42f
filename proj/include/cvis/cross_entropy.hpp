#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
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
#include "cvis/model.hpp"

namespace cvis {

struct EMConfig {
    std::size_t n_s = 3000;      ///< samples per level
    double tau = 0.1;            ///< elite fraction
    std::size_t k_init = 3;      ///< initial mixture components
    int max_levels = 50;
    double cov_jitter = 1e-8;    ///< relative to the mean elite variance
    double min_weight = 1e-4;    ///< components below this weight are pruned
    int em_iters = 10;

    void validate(std::size_t d) const {
        require(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
        require(k_init >= 1, "k_init must be positive");
        require(n_s >= 10 * d * k_init, "n_s must be at least 10·d·k_init");
        require(max_levels >= 1, "max_levels must be positive");
        require(em_iters >= 1, "em_iters must be positive");
        require(cov_jitter > 0.0, "cov_jitter must be positive");
        require(min_weight >= 0.0 && min_weight < 1.0, "min_weight must lie in [0,1)");
    }
};

struct CEState {
    std::optional<GaussianMixture> mixture;
    double threshold = std::numeric_limits<double>::infinity();
    int level = 0;
    std::size_t elite_count = 0;
    double ess = 0.0;                 ///< effective sample size of the elite weights
    std::vector<double> thresholds;   ///< one per completed level
};

class CeNotConverged : public Error {
public:
    CeNotConverged(const std::string& what, CEState state) : Error(what), state_(std::move(state)) {}
    [[nodiscard]] const CEState& state() const noexcept { return state_; }

private:
    CEState state_;
};

/// γ_ij = π_j N(z_i; μ_j, Σ_j) / Σ_r π_r N(z_i; μ_r, Σ_r), computed in log space.
inline Matrix responsibilities(const SampleMatrix& samples, const GaussianMixture& mix) {
    if (static_cast<std::size_t>(samples.cols()) != mix.dimension())
        throw DimensionMismatch("responsibilities: sample and mixture dimensions differ");
    const auto k = static_cast<Eigen::Index>(mix.components());
    Matrix g(samples.rows(), k);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        const auto terms = mix.weighted_component_log_pdfs(row_span(samples, i));
        const double lse = log_sum_exp(terms);
        if (!std::isfinite(lse))
            throw DegenerateResponsibility("responsibilities: every component vanishes at sample " + std::to_string(i));
        for (Eigen::Index j = 0; j < k; ++j) g(i, j) = std::exp(terms[static_cast<std::size_t>(j)] - lse);
    }
    return g;
}

/// One weighted EM step. Components whose share of the total weight falls
/// below `min_weight` are dropped and the rest renormalized; `jitter` is added
/// to every covariance diagonal.
inline GaussianMixture em_update(const SampleMatrix& samples, std::span<const double> is_weights, const Matrix& gamma,
                                 double jitter, double min_weight = 1e-4) {
    const auto n = samples.rows();
    const auto d = samples.cols();
    if (static_cast<Eigen::Index>(is_weights.size()) != n || gamma.rows() != n)
        throw DimensionMismatch("em_update: samples, weights and responsibilities differ in length");
    double wsum = 0.0;
    for (double w : is_weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("em_update: weights must be finite and >= 0");
        wsum += w;
    }
    if (!(wsum > 0.0)) throw InvalidArgument("em_update: all weights are zero");
    require(jitter >= 0.0, "em_update: jitter must be non-negative");

    const Eigen::Map<const Vector> w(is_weights.data(), n);
    const auto k = gamma.cols();
    Vector nu = gamma.transpose() * w;
    const double total = nu.sum();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < k; ++j)
        if (nu(j) > 0.0 && nu(j) / total >= min_weight) keep.push_back(j);
    if (keep.empty()) {
        Eigen::Index best;
        nu.maxCoeff(&best);
        keep.push_back(best);
    }
    double kept_total = 0.0;
    for (auto j : keep) kept_total += nu(j);

    std::vector<double> weights;
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    const Eigen::Map<const SampleMatrix> z(samples.data(), n, d);
    for (auto j : keep) {
        const Vector wg = w.cwiseProduct(gamma.col(j));
        const Vector mu = (z.transpose() * wg) / nu(j);
        const SampleMatrix centered = z.rowwise() - mu.transpose();
        Matrix sigma = centered.transpose() * wg.asDiagonal() * centered / nu(j);
        sigma = 0.5 * (sigma + sigma.transpose());
        sigma.diagonal().array() += jitter;
        weights.push_back(nu(j) / kept_total);
        means.push_back(mu);
        covs.push_back(std::move(sigma));
    }
    try {
        return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
    } catch (const ConstructionError& e) {
        throw EmDegenerate(std::string("em_update produced an invalid mixture: ") + e.what());
    }
}

/// Σ_i W_i log q(z_i): the weighted log-likelihood that EM increases.
inline double weighted_log_likelihood(const SampleMatrix& samples, std::span<const double> is_weights,
                                      const GaussianMixture& mix) {
    std::vector<double> terms(static_cast<std::size_t>(samples.rows()));
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        terms[static_cast<std::size_t>(i)] = is_weights[static_cast<std::size_t>(i)] * mix.log_pdf(row_span(samples, i));
    return pairwise_sum(terms);
}

/// Q(v | v_old) = Σ_i W_i Σ_j γ_ij log(π_j N(z_i; μ_j, Σ_j)) with γ taken from v_old.
inline double em_objective(const SampleMatrix& samples, std::span<const double> is_weights, const Matrix& gamma_old,
                           const GaussianMixture& mix) {
    if (gamma_old.cols() != static_cast<Eigen::Index>(mix.components()))
        throw DimensionMismatch("em_objective: responsibilities and mixture differ in component count");
    std::vector<double> terms(static_cast<std::size_t>(samples.rows()));
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        const auto lp = mix.weighted_component_log_pdfs(row_span(samples, i));
        double s = 0.0;
        for (Eigen::Index j = 0; j < gamma_old.cols(); ++j)
            if (gamma_old(i, j) > 0.0) s += gamma_old(i, j) * lp[static_cast<std::size_t>(j)];
        terms[static_cast<std::size_t>(i)] = is_weights[static_cast<std::size_t>(i)] * s;
    }
    return pairwise_sum(terms);
}

namespace detail {

/// Starting mixture for EM on a weighted elite set: means seeded k-means++
/// style (first pick ∝ W, later picks ∝ W·D²), every covariance equal to the
/// weighted elite covariance, equal weights.
inline GaussianMixture seed_mixture(const SampleMatrix& z, std::span<const double> w, std::size_t k, double jitter,
                                    RngStream& rng) {
    const auto n = z.rows();
    const Eigen::Map<const Vector> wv(w.data(), n);
    const double wsum = wv.sum();
    const Vector mu = (z.transpose() * wv) / wsum;
    const SampleMatrix c = z.rowwise() - mu.transpose();
    Matrix sigma = c.transpose() * wv.asDiagonal() * c / wsum;
    sigma = 0.5 * (sigma + sigma.transpose());
    sigma.diagonal().array() += jitter;

    std::vector<Vector> means;
    Vector dist2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
    for (std::size_t c_idx = 0; c_idx < k; ++c_idx) {
        Vector score(n);
        for (Eigen::Index i = 0; i < n; ++i) score(i) = means.empty() ? wv(i) : wv(i) * dist2(i);
        const double total = score.sum();
        if (!(total > 0.0)) break;
        double u = rng.uniform() * total;
        Eigen::Index pick = n - 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            u -= score(i);
            if (u < 0.0 && score(i) > 0.0) {
                pick = i;
                break;
            }
        }
        means.emplace_back(z.row(pick).transpose());
        for (Eigen::Index i = 0; i < n; ++i)
            dist2(i) = std::min(dist2(i), (z.row(i).transpose() - means.back()).squaredNorm());
    }
    if (means.empty()) means.push_back(mu);
    std::vector<double> weights(means.size(), 1.0 / static_cast<double>(means.size()));
    std::vector<Matrix> covs(means.size(), sigma);
    try {
        return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
    } catch (const ConstructionError& e) {
        throw EmDegenerate(std::string("could not seed a mixture from the elite set: ") + e.what());
    }
}

} // namespace detail

struct CEResult {
    GaussianMixture mixture;
    CEState state;
};

/// Multilevel cross-entropy fit of a Gaussian mixture to p(z | g(z) < 0).
///
/// Level 0 samples p; later levels sample the current mixture. Each level
/// sets its threshold to the τ-quantile of g (never below 0 and never above
/// the previous threshold), keeps the samples with g at or below it, and fits
/// a fresh mixture to them by `em_iters` weighted EM steps with weights p/q.
inline CEResult ce_fit(const Model& limit_state, const Density& p, const EMConfig& cfg, const RngStream& rng,
                       unsigned threads = 1) {
    if (!limit_state.has_limit_state()) throw InvalidArgument("ce_fit needs a model with a threshold");
    if (p.dimension() != limit_state.dimension()) throw DimensionMismatch("ce_fit: density and model differ");
    cfg.validate(p.dimension());

    CEState state;
    std::optional<Density> current;
    for (int level = 0; level < cfg.max_levels; ++level) {
        RngStream stream = rng.split(static_cast<std::uint64_t>(level));
        const Density& sampler = current ? *current : p;
        const SampleMatrix z = sampler.sample(stream, cfg.n_s);
        std::vector<double> g(cfg.n_s);
        parallel_for(cfg.n_s, threads, [&](std::size_t i) {
            g[i] = limit_state.limit_state(row_span(z, static_cast<Eigen::Index>(i)));
        });

        double threshold = std::max(empirical_quantile(g, cfg.tau), 0.0);
        if (!state.thresholds.empty()) threshold = std::min(threshold, state.thresholds.back());

        std::vector<Eigen::Index> elite;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (g[i] <= threshold) elite.push_back(static_cast<Eigen::Index>(i));
        SampleMatrix ze(static_cast<Eigen::Index>(elite.size()), z.cols());
        std::vector<double> w(elite.size());
        for (std::size_t e = 0; e < elite.size(); ++e) {
            ze.row(static_cast<Eigen::Index>(e)) = z.row(elite[e]);
            w[e] = current ? density_ratio(p, *current, row_span(z, elite[e])) : 1.0;
        }
        double sw = 0.0, sw2 = 0.0;
        for (double x : w) {
            sw += x;
            sw2 += x * x;
        }
        if (elite.empty() || !(sw > 0.0)) {
            state.level = level;
            throw CeNotConverged("cross-entropy level " + std::to_string(level) + " has no weighted elite samples",
                                 state);
        }

        const Eigen::Map<const Vector> wv(w.data(), static_cast<Eigen::Index>(w.size()));
        const Vector mu = (ze.transpose() * wv) / sw;
        const Vector sq = (ze.rowwise() - mu.transpose()).rowwise().squaredNorm();
        const double spread = sq.dot(wv) / (sw * static_cast<double>(ze.cols()));
        const double jitter = cfg.cov_jitter * (spread > 0.0 ? spread : 1.0);

        GaussianMixture mix = detail::seed_mixture(ze, w, std::min(cfg.k_init, elite.size()), jitter, stream);
        for (int it = 0; it < cfg.em_iters; ++it) {
            const Matrix gamma = responsibilities(ze, mix);
            mix = em_update(ze, w, gamma, jitter, cfg.min_weight);
        }

        state.level = level + 1;
        state.threshold = threshold;
        state.thresholds.push_back(threshold);
        state.elite_count = elite.size();
        state.ess = sw * sw / sw2;
        state.mixture = mix;
        current.emplace(mix);
        if (threshold <= 0.0) return {mix, state};
    }
    throw CeNotConverged("cross-entropy did not reach the failure threshold within " +
                             std::to_string(cfg.max_levels) + " levels",
                         state);
}

} // namespace cvis
