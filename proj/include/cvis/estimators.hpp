#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvis/core/error.hpp"
#include "cvis/core/linalg.hpp"
#include "cvis/core/parallel.hpp"
#include "cvis/core/rng.hpp"
#include "cvis/core/stats.hpp"
#include "cvis/densities.hpp"
#include "cvis/model.hpp"
#include "cvis/model_pair.hpp"
#include "cvis/theory.hpp"

namespace cvis {

struct Estimate {
    double estimate = 0.0;
    double variance = 0.0;       ///< estimated variance of the estimator
    std::vector<double> values;  ///< per-sample Y(z_i) W(z_i)
    double cost = 0.0;
};

namespace detail {

inline Estimate summarize(std::vector<double> values, double cost) {
    Estimate e;
    e.estimate = mean(values);
    e.variance = sample_variance(values) / static_cast<double>(values.size());
    e.values = std::move(values);
    e.cost = cost;
    return e;
}

/// Y(z_i) W(z_i) for every row; W is skipped when q and p are the same object.
inline std::vector<double> weighted_outputs(const Model& model, const Density& p, const Density& q,
                                            const SampleMatrix& z, Eigen::Index first = 0,
                                            Eigen::Index count = -1) {
    if (count < 0) count = z.rows() - first;
    const bool same = &p == &q;
    std::vector<double> out(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) {
        const auto zi = row_span(z, first + i);
        const double y = model.evaluate(zi);
        // Skip the ratio where Y vanishes; it cannot change the product.
        out[static_cast<std::size_t>(i)] = (same || y == 0.0) ? y : y * density_ratio(p, q, zi);
    }
    return out;
}

} // namespace detail

/// Plain Monte Carlo estimate of E_p[Y] from n draws.
inline Estimate mc_estimate(const Model& model, const Density& p, RngStream& rng, std::size_t n) {
    require(n >= 2, "mc_estimate needs n >= 2");
    if (p.dimension() != model.dimension()) throw DimensionMismatch("mc_estimate: density and model differ");
    const SampleMatrix z = p.sample(rng, n);
    return detail::summarize(detail::weighted_outputs(model, p, p, z), model.cost() * static_cast<double>(n));
}

/// Importance sampling estimate of E_p[Y] with n draws from q.
inline Estimate is_estimate(const Model& model, const Density& p, const Density& q, RngStream& rng, std::size_t n) {
    require(n >= 2, "is_estimate needs n >= 2");
    if (p.dimension() != model.dimension() || q.dimension() != model.dimension())
        throw DimensionMismatch("is_estimate: densities and model differ");
    const SampleMatrix z = q.sample(rng, n);
    return detail::summarize(detail::weighted_outputs(model, p, q, z), model.cost() * static_cast<double>(n));
}

/// Q0 + αᵀ(Q - μ) from per-sample baseline values and an n×M matrix of control values.
inline double cv_estimate(std::span<const double> baseline, const Matrix& controls, const Vector& known_means,
                          const Vector& alpha) {
    if (controls.rows() != static_cast<Eigen::Index>(baseline.size()))
        throw DimensionMismatch("cv_estimate: controls and baseline have different sample counts");
    if (controls.cols() != known_means.size() || alpha.size() != known_means.size())
        throw DimensionMismatch("cv_estimate: control count, means and weights differ in length");
    double est = mean(baseline);
    for (Eigen::Index i = 0; i < controls.cols(); ++i) {
        const Vector col = controls.col(i);
        est += alpha(i) * (mean({col.data(), static_cast<std::size_t>(col.size())}) - known_means(i));
    }
    return est;
}

struct BatchCovariance {
    Matrix C_hat;  ///< M×M
    Vector c_hat;  ///< M
};

namespace detail {

inline std::span<const double> column_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

inline double column_cov(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    const Vector x = a.col(i);
    const Vector y = b.col(j);
    return sample_covariance(column_span(x), column_span(y));
}

} // namespace detail

/// Sample covariances across the K batch rows of Q (column 0 is the baseline).
inline BatchCovariance sample_cov_batches(const Matrix& Q) {
    if (Q.rows() < 2) throw InvalidArgument("sample_cov_batches needs K >= 2 batches");
    if (Q.cols() < 2) throw DimensionMismatch("sample_cov_batches needs at least one control column");
    if (!Q.allFinite()) throw InvalidArgument("sample_cov_batches: non-finite batch values");
    const auto m = Q.cols() - 1;
    BatchCovariance out{Matrix(m, m), Vector(m)};
    for (Eigen::Index i = 0; i < m; ++i) {
        out.c_hat(i) = detail::column_cov(Q, i + 1, Q, 0);
        for (Eigen::Index j = 0; j <= i; ++j) out.C_hat(i, j) = out.C_hat(j, i) = detail::column_cov(Q, i + 1, Q, j + 1);
    }
    return out;
}

/// α̲ = -(Ĉ∘F)⁻¹(diag(F)∘ĉ); the CV scheme passes F = all ones.
inline Vector estimated_weight(const Matrix& C_hat, const Vector& c_hat, const Matrix& F) {
    if (C_hat.rows() != F.rows() || C_hat.cols() != F.cols() || c_hat.size() != C_hat.rows())
        throw DimensionMismatch("estimated_weight: shapes differ");
    return -solve_checked<DegenerateCovariance>(hadamard(C_hat, F), hadamard(diag_of(F), c_hat),
                                                "estimated weight");
}

inline Vector estimated_weight(Scheme scheme, const Matrix& C_hat, const Vector& c_hat, const Vector& r) {
    const Matrix f = scheme == Scheme::CV ? Matrix::Ones(C_hat.rows(), C_hat.cols()) : f_matrix(scheme, r);
    return estimated_weight(C_hat, c_hat, f);
}

/// Batch layout of an ensemble estimator.
struct BatchPlan {
    int K = 2;
    std::size_t n = 1;        ///< shared samples per batch
    std::size_t m = 0;        ///< extra low-fidelity samples per batch (single control)
    Vector r;                 ///< per-control sample ratios; overrides m when set
    Scheme scheme = Scheme::CV;

    /// Extra samples per batch for each of M controls.
    [[nodiscard]] std::vector<std::size_t> extra_counts(Eigen::Index M) const {
        std::vector<std::size_t> e(static_cast<std::size_t>(M), 0);
        if (scheme == Scheme::CV) return e;
        if (r.size() > 0) {
            if (r.size() != M) throw DimensionMismatch("batch plan: one ratio per control is required");
            for (Eigen::Index i = 0; i < M; ++i) {
                if (!(r(i) > 1.0)) throw InvalidRatio("sample ratios must exceed 1");
                const double extra = std::round(static_cast<double>(n) * (r(i) - 1.0));
                e[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::max(1.0, extra));
            }
            return e;
        }
        if (M != 1) throw InvalidArgument("batch plan: ratios r are required for more than one control");
        if (m < 1) throw InvalidArgument("batch plan: ACV schemes need m >= 1 extra samples");
        e[0] = m;
        return e;
    }

    /// Ratios implied by the sample counts, r_i = (n + extra_i)/n.
    [[nodiscard]] Vector effective_ratios(Eigen::Index M) const {
        const auto e = extra_counts(M);
        Vector out(M);
        for (Eigen::Index i = 0; i < M; ++i)
            out(i) = static_cast<double>(n + e[static_cast<std::size_t>(i)]) / static_cast<double>(n);
        return out;
    }

    void validate() const {
        require(K >= 2, "batch plan needs K >= 2");
        require(n >= 1, "batch plan needs n >= 1");
    }
};

/// Per-batch estimator values: Q holds Q_n(Y_0..Y_M) and mu the control
/// means (exact values for CV, sample estimates for ACV).
struct BatchData {
    Matrix Q;   ///< K×(M+1)
    Matrix mu;  ///< K×M
    double cost = 0.0;

    [[nodiscard]] Eigen::Index K() const noexcept { return Q.rows(); }
    [[nodiscard]] Eigen::Index M() const noexcept { return Q.cols() - 1; }
    /// Centered controls Q_i - μ_i per batch, K×M.
    [[nodiscard]] Matrix control_deviation() const { return Q.rightCols(M()) - mu; }
};

/// Runs K independent batches. Each batch draws n shared samples from q for
/// all models, then extra samples for the controls according to the scheme:
/// independent increments per control (ACV-IS) or one nested pool (ACV-MF).
/// Batch j uses stream rng.split(j), so results do not depend on `threads`.
inline BatchData simulate_batches(std::span<const Model> models, const Density& p, const Density& q,
                                  const BatchPlan& plan, const std::optional<Vector>& known_means,
                                  const RngStream& rng, unsigned threads = 1) {
    plan.validate();
    require(models.size() >= 2, "ensemble estimators need a baseline and at least one control");
    const auto M = static_cast<Eigen::Index>(models.size() - 1);
    for (const auto& mdl : models)
        if (mdl.dimension() != p.dimension() || mdl.dimension() != q.dimension())
            throw DimensionMismatch("ensemble: models and densities differ in dimension");
    if (plan.scheme == Scheme::CV) {
        if (!known_means) throw InvalidArgument("the CV scheme needs known control means");
        if (known_means->size() != M) throw DimensionMismatch("known means: one value per control is required");
    }
    const auto extras = plan.extra_counts(M);
    const std::size_t pool = extras.empty() ? 0 : *std::max_element(extras.begin(), extras.end());

    BatchData out;
    out.Q.resize(plan.K, M + 1);
    out.mu.resize(plan.K, M);
    const auto n = static_cast<Eigen::Index>(plan.n);

    parallel_for(static_cast<std::size_t>(plan.K), threads, [&](std::size_t j) {
        RngStream stream = rng.split(j);
        const auto row = static_cast<Eigen::Index>(j);
        const SampleMatrix z = q.sample(stream, plan.n);
        std::vector<double> shared_sums(models.size());
        for (std::size_t k = 0; k < models.size(); ++k) {
            const auto v = detail::weighted_outputs(models[k], p, q, z);
            shared_sums[k] = pairwise_sum(v);
            out.Q(row, static_cast<Eigen::Index>(k)) = shared_sums[k] / static_cast<double>(plan.n);
        }
        if (plan.scheme == Scheme::CV) {
            out.mu.row(row) = known_means->transpose();
            return;
        }
        SampleMatrix pool_z;
        if (plan.scheme == Scheme::ACV_MF && pool > 0) pool_z = q.sample(stream, pool);
        for (Eigen::Index i = 0; i < M; ++i) {
            const std::size_t e = extras[static_cast<std::size_t>(i)];
            const Model& mdl = models[static_cast<std::size_t>(i + 1)];
            std::vector<double> v;
            if (plan.scheme == Scheme::ACV_IS) {
                const SampleMatrix ze = q.sample(stream, e);
                v = detail::weighted_outputs(mdl, p, q, ze);
            } else {
                v = detail::weighted_outputs(mdl, p, q, pool_z, 0, static_cast<Eigen::Index>(e));
            }
            out.mu(row, i) = (shared_sums[static_cast<std::size_t>(i + 1)] + pairwise_sum(v)) /
                             static_cast<double>(plan.n + e);
        }
    });

    double per_batch = 0.0;
    for (const auto& mdl : models) per_batch += static_cast<double>(n) * mdl.cost();
    for (Eigen::Index i = 0; i < M; ++i)
        per_batch += static_cast<double>(extras[static_cast<std::size_t>(i)]) * models[static_cast<std::size_t>(i + 1)].cost();
    out.cost = per_batch * plan.K;
    return out;
}

struct Combination {
    double estimate = 0.0;
    double variance = 0.0;  ///< sample variance of the batch estimators / K
};

/// Ensemble estimate at a fixed weight: the mean over batches of
/// Q_0 + αᵀ(Q - μ), with its batch-means variance estimate.
inline Combination combine(const BatchData& b, const Vector& alpha) {
    if (alpha.size() != b.M()) throw DimensionMismatch("combine: one weight per control is required");
    const Matrix d = b.control_deviation();
    std::vector<double> v(static_cast<std::size_t>(b.K()));
    for (Eigen::Index j = 0; j < b.K(); ++j) v[static_cast<std::size_t>(j)] = b.Q(j, 0) + alpha.dot(d.row(j).transpose());
    Combination c;
    c.estimate = mean(v);
    c.variance = b.K() >= 2 ? sample_variance(v) / static_cast<double>(b.K()) : 0.0;
    return c;
}

namespace detail {

inline constexpr double kDegenerateScale = 1e-14;

inline bool negligible(const Matrix& a, double scale) {
    if (!(scale > 0.0)) return true;
    return a.cwiseAbs().maxCoeff() <= kDegenerateScale * scale;
}

} // namespace detail

struct WeightEstimate {
    Vector alpha;
    bool fallback = false;  ///< true when the covariance was degenerate and α fell back to 0
};

/// The weight that minimizes the batch-sample variance of Q_0 + αᵀ(Q - μ):
/// α̲ = -Cov(Q-μ)⁻¹ Cov(Q-μ, Q_0). With known means this is -Ĉ⁻¹ĉ; with one
/// estimated mean it is the extra-sample weight of the approximate CV.
inline WeightEstimate direct_weight(const BatchData& b) {
    const Matrix d = b.control_deviation();
    Matrix full(b.K(), b.M() + 1);
    full.col(0) = b.Q.col(0);
    full.rightCols(b.M()) = d;
    const auto cov = sample_cov_batches(full);
    const double scale = std::max(cov.C_hat.diagonal().maxCoeff(), detail::column_cov(full, 0, full, 0));
    if (detail::negligible(cov.C_hat, scale)) return {Vector::Zero(b.M()), true};
    try {
        return {estimated_weight(cov.C_hat, cov.c_hat, Matrix::Ones(b.M(), b.M())), false};
    } catch (const DegenerateCovariance&) {
        return {Vector::Zero(b.M()), true};
    }
}

/// α̲ = -(Ĉ∘F)⁻¹(diag(F)∘ĉ) with Ĉ, ĉ from the shared-sample columns only.
inline WeightEstimate partition_weight(const BatchData& b, const Matrix& F) {
    const auto cov = sample_cov_batches(b.Q);
    const double scale = std::max(cov.C_hat.diagonal().maxCoeff(), detail::column_cov(b.Q, 0, b.Q, 0));
    if (detail::negligible(cov.C_hat, scale)) return {Vector::Zero(b.M()), true};
    try {
        return {estimated_weight(cov.C_hat, cov.c_hat, F), false};
    } catch (const DegenerateCovariance&) {
        return {Vector::Zero(b.M()), true};
    }
}

struct EnsembleResult {
    double estimate = 0.0;
    Vector weight;
    double variance = 0.0;
    double cost = 0.0;
    int K = 0;
    std::size_t n = 0;
    std::size_t m = 0;
    Scheme scheme = Scheme::CV;
    Matrix C_hat;
    Vector c_hat;
    bool weight_fallback = false;
};

inline nlohmann::json to_json(const EnsembleResult& r) {
    nlohmann::json j;
    j["estimate"] = r.estimate;
    j["weight"] = std::vector<double>(r.weight.data(), r.weight.data() + r.weight.size());
    j["variance"] = r.variance;
    j["cost"] = r.cost;
    j["K"] = r.K;
    j["n"] = r.n;
    j["m"] = r.m;
    j["scheme"] = std::string(to_string(r.scheme));
    return j;
}

namespace detail {

inline EnsembleResult finish(const BatchData& b, const BatchPlan& plan, const WeightEstimate& w) {
    const auto comb = combine(b, w.alpha);
    const auto cov = sample_cov_batches(b.Q);
    EnsembleResult r;
    r.estimate = comb.estimate;
    r.weight = w.alpha;
    r.variance = comb.variance;
    r.cost = b.cost;
    r.K = plan.K;
    r.n = plan.n;
    r.m = plan.scheme == Scheme::CV ? 0 : plan.extra_counts(b.M()).front();
    r.scheme = plan.scheme;
    r.C_hat = cov.C_hat;
    r.c_hat = cov.c_hat;
    r.weight_fallback = w.fallback;
    return r;
}

} // namespace detail

/// Ensemble control variate estimator with importance sampling: both models
/// share the q-samples of each batch and the control mean μ1 is known.
inline EnsembleResult ensemble_cv_is(const ModelPair& models, const Density& q, double mu1, BatchPlan plan,
                                     const RngStream& rng, unsigned threads = 1) {
    if (plan.scheme != Scheme::CV) throw InvalidArgument("ensemble_cv_is needs the CV scheme");
    const auto list = models.as_list();
    const auto b = simulate_batches(list, *models.input, q, plan, Vector::Constant(1, mu1), rng, threads);
    return detail::finish(b, plan, direct_weight(b));
}

/// Ensemble approximate control variate estimator with importance sampling:
/// per batch, n shared q-samples plus m extra low-fidelity q-samples whose
/// union estimates the control mean.
inline EnsembleResult ensemble_acv_is(const ModelPair& models, const Density& q, BatchPlan plan,
                                      const RngStream& rng, unsigned threads = 1) {
    if (plan.scheme == Scheme::CV) throw InvalidArgument("ensemble_acv_is needs an ACV scheme");
    plan.r = Vector();
    const auto list = models.as_list();
    const auto b = simulate_batches(list, *models.input, q, plan, std::nullopt, rng, threads);
    return detail::finish(b, plan, direct_weight(b));
}

/// General-M ensemble estimator with Monte Carlo baselines. ACV schemes use
/// the partition F-matrix of the realized sample ratios; the CV scheme needs
/// exact means attached to every control model.
inline EnsembleResult acv_mc_estimate(std::span<const Model> models, const Density& p, const BatchPlan& plan,
                                      const RngStream& rng, unsigned threads = 1) {
    require(models.size() >= 2, "acv_mc_estimate needs a baseline and at least one control");
    const auto M = static_cast<Eigen::Index>(models.size() - 1);
    std::optional<Vector> means;
    Matrix F = Matrix::Ones(M, M);
    if (plan.scheme == Scheme::CV) {
        Vector mu(M);
        for (Eigen::Index i = 0; i < M; ++i) {
            const auto em = models[static_cast<std::size_t>(i + 1)].exact_mean();
            if (!em) throw InvalidArgument("CV scheme needs exact control means");
            mu(i) = *em;
        }
        means = mu;
    } else {
        F = f_matrix(plan.scheme, plan.effective_ratios(M));
    }
    const auto b = simulate_batches(models, p, p, plan, means, rng, threads);
    return detail::finish(b, plan, partition_weight(b, F));
}

} // namespace cvis
