#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/core/rng.hpp"
#include "cvis/core/stats.hpp"
#include "cvis/model.hpp"

namespace cvis {

namespace detail {

inline void check_point(std::span<const double> z, std::size_t d) {
    if (z.size() != d)
        throw DimensionMismatch("density of dimension " + std::to_string(d) + " evaluated at a point of dimension " +
                                std::to_string(z.size()));
}

inline constexpr double kLogTwoPi = 1.8378770664093454836;

} // namespace detail

class StandardNormal {
public:
    explicit StandardNormal(std::size_t d = 1) : d_(d) { require(d > 0, "dimension must be positive"); }

    [[nodiscard]] std::size_t dimension() const noexcept { return d_; }

    [[nodiscard]] double log_pdf(std::span<const double> z) const {
        detail::check_point(z, d_);
        double sq = 0.0;
        for (double v : z) sq += v * v;
        return -0.5 * (static_cast<double>(d_) * detail::kLogTwoPi + sq);
    }

    void sample_into(RngStream& rng, std::span<double> out) const {
        for (double& v : out) v = rng.normal();
    }

private:
    std::size_t d_;
};

class UniformBox {
public:
    UniformBox(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
        if (lo_.size() != hi_.size()) throw DimensionMismatch("uniform box bounds differ in length");
        require(lo_.size() > 0, "dimension must be positive");
        log_volume_ = 0.0;
        for (Eigen::Index i = 0; i < lo_.size(); ++i) {
            if (!(hi_(i) > lo_(i))) throw ConstructionError("uniform box needs lo < hi in every coordinate");
            log_volume_ += std::log(hi_(i) - lo_(i));
        }
    }

    [[nodiscard]] std::size_t dimension() const noexcept { return static_cast<std::size_t>(lo_.size()); }
    [[nodiscard]] const Vector& lo() const noexcept { return lo_; }
    [[nodiscard]] const Vector& hi() const noexcept { return hi_; }

    [[nodiscard]] double log_pdf(std::span<const double> z) const {
        detail::check_point(z, dimension());
        for (std::size_t i = 0; i < z.size(); ++i) {
            const auto j = static_cast<Eigen::Index>(i);
            if (z[i] < lo_(j) || z[i] > hi_(j)) return -std::numeric_limits<double>::infinity();
        }
        return -log_volume_;
    }

    void sample_into(RngStream& rng, std::span<double> out) const {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const auto j = static_cast<Eigen::Index>(i);
            out[i] = lo_(j) + (hi_(j) - lo_(j)) * rng.uniform();
        }
    }

private:
    Vector lo_;
    Vector hi_;
    double log_volume_ = 0.0;
};

/// Finite mixture of multivariate normals. Covariances are factorized once
/// at construction.
class GaussianMixture {
public:
    GaussianMixture(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covariances)
        : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
        const std::size_t k = weights_.size();
        if (k == 0) throw ConstructionError("mixture needs at least one component");
        if (means_.size() != k || covariances_.size() != k)
            throw ConstructionError("mixture weights, means and covariances differ in count");
        d_ = static_cast<std::size_t>(means_[0].size());
        if (d_ == 0) throw ConstructionError("mixture dimension must be positive");
        double total = 0.0;
        for (double w : weights_) {
            if (!(w >= 0.0 && w <= 1.0)) throw ConstructionError("mixture weight outside [0,1]");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-12) throw ConstructionError("mixture weights do not sum to 1");
        chol_.reserve(k);
        log_norm_.reserve(k);
        for (std::size_t j = 0; j < k; ++j) {
            if (static_cast<std::size_t>(means_[j].size()) != d_ ||
                static_cast<std::size_t>(covariances_[j].rows()) != d_)
                throw DimensionMismatch("mixture component " + std::to_string(j) + " has the wrong dimension");
            if (!means_[j].allFinite()) throw ConstructionError("mixture mean has non-finite entries");
            chol_.push_back(cholesky_lower(covariances_[j], "mixture component " + std::to_string(j)));
            const double log_det = 2.0 * chol_.back().diagonal().array().log().sum();
            log_norm_.push_back(-0.5 * (static_cast<double>(d_) * detail::kLogTwoPi + log_det));
        }
        cumulative_.resize(k);
        double c = 0.0;
        for (std::size_t j = 0; j < k; ++j) cumulative_[j] = (c += weights_[j]);
    }

    [[nodiscard]] std::size_t dimension() const noexcept { return d_; }
    [[nodiscard]] std::size_t components() const noexcept { return weights_.size(); }
    [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }
    [[nodiscard]] const std::vector<Vector>& means() const noexcept { return means_; }
    [[nodiscard]] const std::vector<Matrix>& covariances() const noexcept { return covariances_; }

    /// log N(z; μ_j, Σ_j), without the mixture weight.
    [[nodiscard]] double component_log_pdf(std::size_t j, std::span<const double> z) const {
        detail::check_point(z, d_);
        const Vector diff = as_vector(z) - means_[j];
        const Vector y = chol_[j].triangularView<Eigen::Lower>().solve(diff);
        return log_norm_[j] - 0.5 * y.squaredNorm();
    }

    /// log(π_j) + log N(z; μ_j, Σ_j) for every component.
    [[nodiscard]] std::vector<double> weighted_component_log_pdfs(std::span<const double> z) const {
        std::vector<double> out(components());
        for (std::size_t j = 0; j < components(); ++j)
            out[j] = weights_[j] > 0.0 ? std::log(weights_[j]) + component_log_pdf(j, z)
                                       : -std::numeric_limits<double>::infinity();
        return out;
    }

    [[nodiscard]] double log_pdf(std::span<const double> z) const {
        const auto terms = weighted_component_log_pdfs(z);
        return log_sum_exp(terms);
    }

    [[nodiscard]] std::size_t pick_component(double u) const {
        for (std::size_t j = 0; j + 1 < cumulative_.size(); ++j)
            if (u < cumulative_[j]) return j;
        return cumulative_.size() - 1;
    }

    void sample_into(RngStream& rng, std::span<double> out) const {
        const std::size_t j = pick_component(rng.uniform());
        Vector e(static_cast<Eigen::Index>(d_));
        for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = rng.normal();
        const Vector x = means_[j] + chol_[j] * e;
        for (std::size_t i = 0; i < d_; ++i) out[i] = x(static_cast<Eigen::Index>(i));
    }

private:
    std::size_t d_ = 0;
    std::vector<double> weights_;
    std::vector<Vector> means_;
    std::vector<Matrix> covariances_;
    std::vector<Matrix> chol_;
    std::vector<double> log_norm_;
    std::vector<double> cumulative_;
};

class Density;

/// p restricted to the failure set of a limit state, p(z | g(z) < 0).
/// This is the zero-variance importance density for an indicator target.
/// Sampling is exact (rejection from p); the density needs the failure
/// probability as a normalizing constant.
class ConditionalDensity {
public:
    ConditionalDensity(std::shared_ptr<const Density> base, std::shared_ptr<const Model> limit_state,
                       double failure_probability, std::size_t max_proposals_per_accept = 10'000'000);

    [[nodiscard]] std::size_t dimension() const noexcept { return limit_state_->dimension(); }
    [[nodiscard]] const Density& base() const noexcept { return *base_; }
    [[nodiscard]] const Model& limit_state() const noexcept { return *limit_state_; }
    [[nodiscard]] double failure_probability() const noexcept { return failure_probability_; }

    [[nodiscard]] double log_pdf(std::span<const double> z) const;
    void sample_into(RngStream& rng, std::span<double> out) const;

private:
    std::shared_ptr<const Density> base_;
    std::shared_ptr<const Model> limit_state_;
    double failure_probability_;
    std::size_t max_proposals_;
};

/// A probability density on R^d. Immutable once built, so it can be shared
/// across threads.
class Density {
public:
    using Kind = std::variant<StandardNormal, UniformBox, GaussianMixture, ConditionalDensity>;

    Density(StandardNormal d) : kind_(std::move(d)) {}
    Density(UniformBox d) : kind_(std::move(d)) {}
    Density(GaussianMixture d) : kind_(std::move(d)) {}
    Density(ConditionalDensity d) : kind_(std::move(d)) {}

    [[nodiscard]] std::size_t dimension() const {
        return std::visit([](const auto& k) { return k.dimension(); }, kind_);
    }

    [[nodiscard]] double log_pdf(std::span<const double> z) const {
        for (double v : z)
            if (!std::isfinite(v)) throw InvalidArgument("log_pdf evaluated at a non-finite point");
        return std::visit([&](const auto& k) { return k.log_pdf(z); }, kind_);
    }

    [[nodiscard]] double pdf(std::span<const double> z) const { return std::exp(log_pdf(z)); }

    /// n independent draws, one per row.
    [[nodiscard]] SampleMatrix sample(RngStream& rng, std::size_t n) const {
        require(n >= 1, "sample count must be positive");
        const std::size_t d = dimension();
        SampleMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        std::visit(
            [&](const auto& k) {
                for (std::size_t i = 0; i < n; ++i) k.sample_into(rng, {out.data() + i * d, d});
            },
            kind_);
        return out;
    }

    [[nodiscard]] const Kind& kind() const noexcept { return kind_; }

    [[nodiscard]] const GaussianMixture* as_mixture() const noexcept { return std::get_if<GaussianMixture>(&kind_); }

private:
    Kind kind_;
};

inline ConditionalDensity::ConditionalDensity(std::shared_ptr<const Density> base,
                                              std::shared_ptr<const Model> limit_state, double failure_probability,
                                              std::size_t max_proposals_per_accept)
    : base_(std::move(base)), limit_state_(std::move(limit_state)), failure_probability_(failure_probability),
      max_proposals_(max_proposals_per_accept) {
    if (!base_ || !limit_state_) throw ConstructionError("conditional density needs a base density and a limit state");
    if (!limit_state_->has_limit_state()) throw ConstructionError("conditional density needs a thresholded model");
    if (base_->dimension() != limit_state_->dimension())
        throw DimensionMismatch("conditional density: base and limit state dimensions differ");
    if (!(failure_probability_ > 0.0 && failure_probability_ <= 1.0))
        throw ConstructionError("conditional density needs a failure probability in (0,1]");
    require(max_proposals_ >= 1, "max proposals must be positive");
}

inline double ConditionalDensity::log_pdf(std::span<const double> z) const {
    if (!limit_state_->fails(z)) return -std::numeric_limits<double>::infinity();
    return base_->log_pdf(z) - std::log(failure_probability_);
}

inline void ConditionalDensity::sample_into(RngStream& rng, std::span<double> out) const {
    for (std::size_t tries = 0; tries < max_proposals_; ++tries) {
        const SampleMatrix z = base_->sample(rng, 1);
        if (limit_state_->fails(row_span(z, 0))) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = z(0, static_cast<Eigen::Index>(i));
            return;
        }
    }
    throw IntractableTarget("rejection sampling exceeded " + std::to_string(max_proposals_) +
                            " proposals for one accepted sample");
}

/// p(z)/q(z) evaluated as exp(log p - log q). Throws UnsupportedPoint where q vanishes.
inline double density_ratio(const Density& p, const Density& q, std::span<const double> z) {
    const double lq = q.log_pdf(z);
    if (lq == -std::numeric_limits<double>::infinity())
        throw UnsupportedPoint("density ratio requested where the proposal density is zero");
    const double lp = p.log_pdf(z);
    return std::exp(lp - lq);
}

struct RejectionResult {
    SampleMatrix samples;
    std::size_t proposals = 0;

    [[nodiscard]] double acceptance_rate() const {
        return proposals == 0 ? 0.0 : static_cast<double>(samples.rows()) / static_cast<double>(proposals);
    }
};

/// Exact draws from p(z | g(z) < 0) by rejection from p.
inline RejectionResult rejection_sample_counted(const Model& limit_state, const Density& p, RngStream& rng,
                                                std::size_t n, std::size_t max_proposals_per_accept = 10'000'000) {
    require(n >= 1, "sample count must be positive");
    if (p.dimension() != limit_state.dimension())
        throw DimensionMismatch("rejection_sample: density and limit state dimensions differ");
    const std::size_t d = p.dimension();
    RejectionResult res;
    res.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t tries = 0;
        for (;;) {
            if (tries == max_proposals_per_accept)
                throw IntractableTarget("rejection sampling exceeded " + std::to_string(max_proposals_per_accept) +
                                        " proposals for one accepted sample");
            const SampleMatrix z = p.sample(rng, 1);
            ++tries;
            if (limit_state.fails(row_span(z, 0))) {
                res.samples.row(static_cast<Eigen::Index>(i)) = z.row(0);
                break;
            }
        }
        res.proposals += tries;
    }
    return res;
}

inline SampleMatrix rejection_sample(const Model& limit_state, const Density& p, RngStream& rng, std::size_t n,
                                     std::size_t max_proposals_per_accept = 10'000'000) {
    return rejection_sample_counted(limit_state, p, rng, n, max_proposals_per_accept).samples;
}

struct McValue {
    double value = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo estimate of KL(q_ref || q_approx) from n draws of q_ref.
inline McValue kl_divergence_mc(const Density& q_ref, const Density& q_approx, RngStream& rng, std::size_t n) {
    require(n >= 2, "kl_divergence_mc needs at least two samples");
    if (q_ref.dimension() != q_approx.dimension()) throw DimensionMismatch("kl_divergence_mc: dimensions differ");
    const SampleMatrix z = q_ref.sample(rng, n);
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = row_span(z, static_cast<Eigen::Index>(i));
        const double la = q_approx.log_pdf(zi);
        if (la == -std::numeric_limits<double>::infinity())
            throw UnsupportedPoint("kl_divergence_mc: approximate density vanishes on a reference sample");
        terms[i] = q_ref.log_pdf(zi) - la;
    }
    return {mean(terms), std::sqrt(sample_variance(terms) / static_cast<double>(n))};
}

/// A single normal N(mu, sigma^2 I) packaged as a one-component mixture.
inline GaussianMixture isotropic_normal(const Vector& mu, double variance) {
    const auto d = mu.size();
    return GaussianMixture({1.0}, {mu}, {Matrix::Identity(d, d) * variance});
}

inline nlohmann::json mixture_to_json(const GaussianMixture& g) {
    nlohmann::json j;
    j["d"] = g.dimension();
    j["k"] = g.components();
    j["weights"] = g.weights();
    auto means = nlohmann::json::array();
    auto covs = nlohmann::json::array();
    for (std::size_t c = 0; c < g.components(); ++c) {
        means.push_back(std::vector<double>(g.means()[c].data(), g.means()[c].data() + g.means()[c].size()));
        auto rows = nlohmann::json::array();
        const Matrix& s = g.covariances()[c];
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            std::vector<double> row(static_cast<std::size_t>(s.cols()));
            for (Eigen::Index q = 0; q < s.cols(); ++q) row[static_cast<std::size_t>(q)] = s(r, q);
            rows.push_back(row);
        }
        covs.push_back(rows);
    }
    j["means"] = means;
    j["covariances"] = covs;
    return j;
}

inline GaussianMixture mixture_from_json(const nlohmann::json& j) {
    try {
        const auto d = j.at("d").get<std::size_t>();
        const auto k = j.at("k").get<std::size_t>();
        auto weights = j.at("weights").get<std::vector<double>>();
        if (weights.size() != k) throw ConstructionError("mixture json: weights length differs from k");
        std::vector<Vector> means;
        std::vector<Matrix> covs;
        for (std::size_t c = 0; c < k; ++c) {
            const auto m = j.at("means").at(c).get<std::vector<double>>();
            if (m.size() != d) throw DimensionMismatch("mixture json: mean has the wrong length");
            means.push_back(Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(d)));
            Matrix s(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
            const auto& rows = j.at("covariances").at(c);
            if (rows.size() != d) throw DimensionMismatch("mixture json: covariance has the wrong shape");
            for (std::size_t r = 0; r < d; ++r) {
                const auto row = rows.at(r).get<std::vector<double>>();
                if (row.size() != d) throw DimensionMismatch("mixture json: covariance has the wrong shape");
                for (std::size_t q = 0; q < d; ++q)
                    s(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)) = row[q];
            }
            covs.push_back(s);
        }
        return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
    } catch (const nlohmann::json::exception& e) {
        throw ConstructionError(std::string("mixture json: ") + e.what());
    }
}

} // namespace cvis
