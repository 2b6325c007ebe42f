#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvis/cross_entropy.hpp"
#include "cvis/estimators.hpp"
#include "cvis/models.hpp"
#include "cvis/theory.hpp"

namespace cvis {

enum class ProblemKind { analytic, beam, plate, synthetic };

inline std::string_view to_string(ProblemKind k) {
    switch (k) {
    case ProblemKind::analytic: return "analytic";
    case ProblemKind::beam: return "beam";
    case ProblemKind::plate: return "plate";
    case ProblemKind::synthetic: return "synthetic";
    }
    return "?";
}

inline ProblemKind problem_from_string(std::string_view s) {
    if (s == "analytic") return ProblemKind::analytic;
    if (s == "beam") return ProblemKind::beam;
    if (s == "plate") return ProblemKind::plate;
    if (s == "synthetic") return ProblemKind::synthetic;
    throw InvalidArgument("unknown problem '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Equal-cost allocation

struct Allocation {
    std::size_t n_hf = 0;
    std::size_t n_lf = 0;
};

/// Splits a budget of budget_nhf HF-equivalents so that
/// n_HF·cost_ratio + n_LF matches the cost of budget_nhf HF samples.
inline Allocation allocate_equal_cost(std::size_t budget_nhf, double cost_ratio, Scheme scheme, double rho_alloc) {
    if (budget_nhf == 0) throw InvalidArgument("allocation: budget must be positive");
    if (!(cost_ratio > 1.0)) throw InvalidRatio("allocation: cost ratio must exceed 1");
    if (scheme == Scheme::CV) {
        if (rho_alloc != 1.0) throw InvalidRatio("allocation: the CV scheme uses rho_alloc = 1");
    } else if (!(rho_alloc >= 1.0) || !std::isfinite(rho_alloc)) {
        throw InvalidRatio("allocation: rho_alloc must be at least 1");
    }
    const double b = static_cast<double>(budget_nhf);
    Allocation a;
    a.n_hf = static_cast<std::size_t>(std::floor(b * cost_ratio / (cost_ratio + rho_alloc) + 1e-9));
    a.n_lf = scheme == Scheme::CV ? a.n_hf
                                  : static_cast<std::size_t>(std::floor(rho_alloc * static_cast<double>(a.n_hf) + 1e-9));
    return a;
}

/// The MFIS baseline spends the whole budget on the high-fidelity model.
inline Allocation mfis_allocation(std::size_t budget_nhf) {
    if (budget_nhf == 0) throw InvalidArgument("allocation: budget must be positive");
    return {budget_nhf, 0};
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
    ProblemKind problem = ProblemKind::analytic;
    EMConfig em;
    BatchPlan plan;                     ///< K and the ACV partition; n and m follow from the allocation
    std::size_t budget = 5000;          ///< HF-equivalents
    std::optional<double> cost_ratio;   ///< problem default when unset
    std::optional<double> lf_hf_ratio;  ///< rho_alloc, problem default when unset
    std::vector<double> alpha_grid;
    int replications = 200;
    std::uint64_t seed = 1;
    unsigned threads = 1;

    double l0 = 3.0;  ///< analytic thresholds
    double l1 = 2.8;
    double r2 = 0.81; ///< synthetic family
    int models = 1;

    double hf_pf = 0.01;  ///< calibration targets for the PDE problems
    double lf_pf = 0.022428;
    std::size_t calibration_samples = 10000;
    std::size_t lf_calibration_samples = 20000;
    std::size_t reference_samples = 100000;  ///< LF samples for the control mean
    std::optional<double> hf_threshold;
    std::optional<double> lf_threshold;

    ExperimentConfig() {
        plan.K = 100;
        plan.scheme = Scheme::ACV_IS;
    }

    [[nodiscard]] double effective_cost_ratio() const {
        if (cost_ratio) return *cost_ratio;
        switch (problem) {
        case ProblemKind::beam: return 11.0;
        case ProblemKind::plate: return 37.0;
        default: return 30.0;
        }
    }

    [[nodiscard]] double effective_rho() const {
        if (lf_hf_ratio) return *lf_hf_ratio;
        return problem == ProblemKind::beam ? 4.0 : 4.5;
    }

    [[nodiscard]] Scheme acv_scheme() const { return plan.scheme == Scheme::CV ? Scheme::ACV_IS : plan.scheme; }

    void validate() const {
        require(budget > 0, "budget must be positive");
        require(replications >= 1, "replications must be at least 1");
        require(plan.K >= 2, "plan.K must be at least 2");
        require(effective_cost_ratio() > 1.0, "cost_ratio must exceed 1");
        require(effective_rho() >= 1.0, "lf_hf_ratio must be at least 1");
        require(models >= 1, "models must be positive");
        require(r2 >= 0.0 && r2 <= 1.0, "r2 must lie in [0, 1]");
    }
};

/// Problem defaults: EM settings, budget, batch count and replications.
inline ExperimentConfig default_config(ProblemKind problem) {
    ExperimentConfig cfg;
    cfg.problem = problem;
    switch (problem) {
    case ProblemKind::analytic:
        cfg.em.n_s = 3000;
        cfg.em.k_init = 3;
        break;
    case ProblemKind::beam:
    case ProblemKind::plate:
        cfg.em.n_s = 5000;
        cfg.em.k_init = 5;
        cfg.budget = 2000;
        cfg.plan.K = 50;
        cfg.replications = 1;
        cfg.lf_pf = problem == ProblemKind::beam ? 0.022428 : 0.02;
        break;
    case ProblemKind::synthetic:
        cfg.plan.K = 10;
        cfg.budget = 1000;
        break;
    }
    return cfg;
}

namespace detail {

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& out) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null())
        out.reset();
    else
        out = j.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidArgument(where + ": expected an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || item.key() == a;
        if (!ok) throw InvalidArgument(where + ": unknown key '" + item.key() + "'");
    }
}

} // namespace detail

/// Reads a configuration; missing keys keep the defaults of the named problem.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        detail::check_keys(j,
                           {"problem", "em", "plan", "budget", "cost_ratio", "lf_hf_ratio", "alpha_grid", "replications",
                            "seed", "threads", "l0", "l1", "r2", "models", "hf_pf", "lf_pf", "calibration_samples",
                            "lf_calibration_samples", "reference_samples", "hf_threshold", "lf_threshold"},
                           "config");
        ExperimentConfig cfg = default_config(problem_from_string(j.value("problem", std::string("analytic"))));
        if (j.contains("em")) {
            const auto& e = j.at("em");
            detail::check_keys(e, {"n_s", "tau", "k_init", "max_levels", "cov_jitter", "min_weight", "em_iters"}, "em");
            detail::read_if(e, "n_s", cfg.em.n_s);
            detail::read_if(e, "tau", cfg.em.tau);
            detail::read_if(e, "k_init", cfg.em.k_init);
            detail::read_if(e, "max_levels", cfg.em.max_levels);
            detail::read_if(e, "cov_jitter", cfg.em.cov_jitter);
            detail::read_if(e, "min_weight", cfg.em.min_weight);
            detail::read_if(e, "em_iters", cfg.em.em_iters);
        }
        if (j.contains("plan")) {
            const auto& p = j.at("plan");
            detail::check_keys(p, {"K", "scheme"}, "plan");
            detail::read_if(p, "K", cfg.plan.K);
            if (p.contains("scheme")) cfg.plan.scheme = scheme_from_string(p.at("scheme").get<std::string>());
        }
        detail::read_if(j, "budget", cfg.budget);
        detail::read_optional(j, "cost_ratio", cfg.cost_ratio);
        detail::read_optional(j, "lf_hf_ratio", cfg.lf_hf_ratio);
        detail::read_if(j, "alpha_grid", cfg.alpha_grid);
        detail::read_if(j, "replications", cfg.replications);
        detail::read_if(j, "seed", cfg.seed);
        detail::read_if(j, "threads", cfg.threads);
        detail::read_if(j, "l0", cfg.l0);
        detail::read_if(j, "l1", cfg.l1);
        detail::read_if(j, "r2", cfg.r2);
        detail::read_if(j, "models", cfg.models);
        detail::read_if(j, "hf_pf", cfg.hf_pf);
        detail::read_if(j, "lf_pf", cfg.lf_pf);
        detail::read_if(j, "calibration_samples", cfg.calibration_samples);
        detail::read_if(j, "lf_calibration_samples", cfg.lf_calibration_samples);
        detail::read_if(j, "reference_samples", cfg.reference_samples);
        detail::read_optional(j, "hf_threshold", cfg.hf_threshold);
        detail::read_optional(j, "lf_threshold", cfg.lf_threshold);
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["problem"] = std::string(to_string(c.problem));
    j["em"] = {{"n_s", c.em.n_s},           {"tau", c.em.tau},
               {"k_init", c.em.k_init},     {"max_levels", c.em.max_levels},
               {"cov_jitter", c.em.cov_jitter}, {"min_weight", c.em.min_weight},
               {"em_iters", c.em.em_iters}};
    j["plan"] = {{"K", c.plan.K}, {"scheme", std::string(to_string(c.acv_scheme()))}};
    j["budget"] = c.budget;
    j["cost_ratio"] = c.effective_cost_ratio();
    j["lf_hf_ratio"] = c.effective_rho();
    j["alpha_grid"] = c.alpha_grid;
    j["replications"] = c.replications;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["l0"] = c.l0;
    j["l1"] = c.l1;
    j["r2"] = c.r2;
    j["models"] = c.models;
    j["hf_pf"] = c.hf_pf;
    j["lf_pf"] = c.lf_pf;
    j["calibration_samples"] = c.calibration_samples;
    j["lf_calibration_samples"] = c.lf_calibration_samples;
    j["reference_samples"] = c.reference_samples;
    j["hf_threshold"] = c.hf_threshold ? nlohmann::json(*c.hf_threshold) : nlohmann::json();
    j["lf_threshold"] = c.lf_threshold ? nlohmann::json(*c.lf_threshold) : nlohmann::json();
    return j;
}

// ---------------------------------------------------------------------------
// Reports

struct EstimatorRow {
    std::string name;
    std::size_t n_hf = 0;
    std::size_t n_lf = 0;
    double estimate = std::numeric_limits<double>::quiet_NaN();
    double variance = std::numeric_limits<double>::quiet_NaN();
    double variance_stderr = std::numeric_limits<double>::quiet_NaN();
    double variance_ratio = std::numeric_limits<double>::quiet_NaN();  ///< vs MFIS
    double variance_ratio_stderr = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> alpha;
    std::string status = "ok";
};

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const {
        const auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw InvalidArgument("table has no column '" + name + "'");
        return static_cast<std::size_t>(it - columns.begin());
    }
};

struct Report {
    std::string kind;
    std::vector<EstimatorRow> estimators;
    Table table;
    nlohmann::json info = nlohmann::json::object();

    [[nodiscard]] const EstimatorRow& row(const std::string& name) const {
        for (const auto& r : estimators)
            if (r.name == name) return r;
        throw InvalidArgument("report has no estimator '" + name + "'");
    }
};

namespace detail {

inline nlohmann::json number(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

} // namespace detail

inline nlohmann::json to_json(const EstimatorRow& r) {
    nlohmann::json j;
    j["name"] = r.name;
    j["n_hf"] = r.n_hf;
    j["n_lf"] = r.n_lf;
    j["estimate"] = detail::number(r.estimate);
    j["variance"] = detail::number(r.variance);
    j["variance_stderr"] = detail::number(r.variance_stderr);
    j["variance_ratio"] = detail::number(r.variance_ratio);
    j["variance_ratio_stderr"] = detail::number(r.variance_ratio_stderr);
    j["alpha"] = r.alpha ? detail::number(*r.alpha) : nlohmann::json();
    j["status"] = r.status;
    return j;
}

inline nlohmann::json to_json(const Report& r) {
    nlohmann::json j;
    j["kind"] = r.kind;
    auto rows = nlohmann::json::array();
    for (const auto& e : r.estimators) rows.push_back(to_json(e));
    j["estimators"] = rows;
    auto table = nlohmann::json::array();
    for (const auto& row : r.table.rows) {
        nlohmann::json o;
        for (std::size_t c = 0; c < r.table.columns.size(); ++c) o[r.table.columns[c]] = detail::number(row[c]);
        table.push_back(o);
    }
    j["table"] = table;
    j["info"] = r.info;
    return j;
}

/// RFC-4180 CSV: the table when present, otherwise the estimator rows.
inline void write_csv(const Report& r, std::ostream& os) {
    const char* eol = "\r\n";
    if (!r.table.columns.empty()) {
        for (std::size_t c = 0; c < r.table.columns.size(); ++c)
            os << (c ? "," : "") << detail::csv_field(r.table.columns[c]);
        os << eol;
        for (const auto& row : r.table.rows) {
            for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << detail::format_number(row[c]);
            os << eol;
        }
        return;
    }
    os << "name,n_hf,n_lf,estimate,variance,variance_stderr,variance_ratio,variance_ratio_stderr,alpha,status" << eol;
    for (const auto& e : r.estimators) {
        os << detail::csv_field(e.name) << ',' << e.n_hf << ',' << e.n_lf << ',' << detail::format_number(e.estimate)
           << ',' << detail::format_number(e.variance) << ',' << detail::format_number(e.variance_stderr) << ','
           << detail::format_number(e.variance_ratio) << ',' << detail::format_number(e.variance_ratio_stderr) << ','
           << (e.alpha ? detail::format_number(*e.alpha) : std::string()) << ',' << detail::csv_field(e.status) << eol;
    }
}

// ---------------------------------------------------------------------------
// Problem setup

/// A ready-to-run problem: models with thresholds, the biasing density and
/// the control mean used by the CV estimator.
struct ProblemSetup {
    ModelPair pair;
    std::shared_ptr<const Density> proposal;
    double mu1 = 0.0;
    std::optional<double> exact_hf;
    nlohmann::json info = nlohmann::json::object();
};

namespace detail {

inline double reference_mean(const Model& m, const Density& p, std::size_t n, RngStream rng, unsigned threads) {
    require(n >= 2, "reference_samples must be at least 2");
    const SampleMatrix z = p.sample(rng, n);
    std::vector<double> v(n);
    parallel_for(n, threads, [&](std::size_t i) { v[i] = m.evaluate(row_span(z, static_cast<Eigen::Index>(i))); });
    return mean(v);
}

template <class Problem, class Config, class Factory>
ModelPair calibrated_pair(const ExperimentConfig& cfg, Config pcfg, Factory make, const RngStream& rng,
                          nlohmann::json& info) {
    const ModelPair raw = make(std::make_shared<const Problem>(pcfg));
    if (cfg.hf_threshold) {
        pcfg.hf_threshold = cfg.hf_threshold;
    } else {
        RngStream s = rng.split(1);
        const auto c = calibrate_thresholds(raw.hf, *raw.input, cfg.hf_pf, cfg.calibration_samples, s, cfg.threads);
        pcfg.hf_threshold = c.threshold;
        info["hf_calibrated_pf"] = c.achieved_pf;
    }
    if (cfg.lf_threshold) {
        pcfg.lf_threshold = cfg.lf_threshold;
    } else {
        RngStream s = rng.split(2);
        const auto c = calibrate_thresholds(raw.lf, *raw.input, cfg.lf_pf, cfg.lf_calibration_samples, s, cfg.threads);
        pcfg.lf_threshold = c.threshold;
        info["lf_calibrated_pf"] = c.achieved_pf;
    }
    info["hf_threshold"] = *pcfg.hf_threshold;
    info["lf_threshold"] = *pcfg.lf_threshold;
    return make(std::make_shared<const Problem>(pcfg));
}

} // namespace detail

/// Builds the model pair, calibrates PDE thresholds, estimates the control
/// mean and fits the biasing density on the low-fidelity failure set.
inline ProblemSetup prepare_problem(const ExperimentConfig& cfg) {
    cfg.validate();
    const RngStream rng(cfg.seed, 0);
    const double ratio = cfg.effective_cost_ratio();
    nlohmann::json info = nlohmann::json::object();
    std::optional<ModelPair> pair;
    std::optional<double> mu1, exact;

    switch (cfg.problem) {
    case ProblemKind::analytic:
        pair = analytic_pair(cfg.l0, cfg.l1, ratio);
        mu1 = pair->lf.exact_mean();
        exact = pair->hf.exact_mean();
        break;
    case ProblemKind::synthetic: {
        if (cfg.models != 1) throw InvalidArgument("synthetic experiments use one control; see run_theory_validation");
        const auto fam = synthetic_family_for_r2(1, cfg.r2);
        pair = ModelPair(fam.models[0].with_cost(ratio), fam.models[1], fam.input);
        mu1 = fam.means(1);
        exact = fam.means(0);
        break;
    }
    case ProblemKind::beam: {
        BeamConfig b;
        b.cost_ratio = ratio;
        pair = detail::calibrated_pair<BeamProblem>(
            cfg, b, [](std::shared_ptr<const BeamProblem> p) { return beam_pair(std::move(p)); }, rng, info);
        break;
    }
    case ProblemKind::plate: {
        PlateConfig p;
        p.cost_ratio = ratio;
        pair = detail::calibrated_pair<PlateProblem>(
            cfg, p, [](std::shared_ptr<const PlateProblem> q) { return plate_pair(std::move(q)); }, rng, info);
        break;
    }
    }
    if (!mu1) {
        mu1 = detail::reference_mean(pair->lf, *pair->input, cfg.reference_samples, rng.split(3), cfg.threads);
        info["mu1_reference_samples"] = cfg.reference_samples;
    }
    info["mu1"] = *mu1;
    if (exact) info["exact_hf_mean"] = *exact;

    std::shared_ptr<const Density> proposal = pair->input;
    if (pair->lf.has_limit_state()) {
        const auto fit = ce_fit(pair->lf, *pair->input, cfg.em, rng.split(4), cfg.threads);
        proposal = std::make_shared<const Density>(fit.mixture);
        info["ce_levels"] = fit.state.level;
        info["ce_thresholds"] = fit.state.thresholds;
        info["ce_elite_count"] = fit.state.elite_count;
        info["ce_ess"] = fit.state.ess;
        info["mixture"] = mixture_to_json(fit.mixture);
    }
    return {std::move(*pair), std::move(proposal), *mu1, exact, std::move(info)};
}

// ---------------------------------------------------------------------------
// Trials

/// Per-batch sample counts of the three estimators under one budget.
struct TrialPlans {
    Allocation mfis, cv, acv;
    BatchPlan cv_plan, acv_plan;
};

inline TrialPlans plan_trials(const ExperimentConfig& cfg) {
    TrialPlans t;
    const double c = cfg.effective_cost_ratio();
    t.mfis = mfis_allocation(cfg.budget);
    t.cv = allocate_equal_cost(cfg.budget, c, Scheme::CV, 1.0);
    t.acv = allocate_equal_cost(cfg.budget, c, cfg.acv_scheme(), cfg.effective_rho());
    const auto k = static_cast<std::size_t>(cfg.plan.K);
    if (t.cv.n_hf / k < 1 || t.acv.n_hf / k < 1) throw InvalidArgument("budget too small for plan.K batches");
    t.cv_plan.K = cfg.plan.K;
    t.cv_plan.n = t.cv.n_hf / k;
    t.cv_plan.scheme = Scheme::CV;
    t.acv_plan.K = cfg.plan.K;
    t.acv_plan.n = t.acv.n_hf / k;
    t.acv_plan.scheme = cfg.acv_scheme();
    const std::size_t lf_per_batch = t.acv.n_lf / k;
    if (lf_per_batch <= t.acv_plan.n) throw InvalidArgument("lf_hf_ratio leaves no extra LF samples per batch");
    t.acv_plan.m = lf_per_batch - t.acv_plan.n;
    return t;
}

/// Sample counts actually drawn (flooring to whole batches).
inline Allocation realized(const BatchPlan& p) {
    const auto k = static_cast<std::size_t>(p.K);
    return {k * p.n, k * (p.n + p.m)};
}

namespace detail {

/// Var of the sample variance, using the fourth central moment.
inline double variance_stderr(std::span<const double> x) {
    const auto n = static_cast<double>(x.size());
    if (x.size() < 4) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(x);
    double m2 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = (v - m) * (v - m);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    const double s2 = m2 * n / (n - 1.0);
    return std::sqrt(std::max(0.0, (m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n));
}

struct VarianceStat {
    double value = 0.0;
    double stderr_ = 0.0;
};

/// Variance of a mean over `values`: s²/len with its standard error.
inline VarianceStat variance_of_mean(std::span<const double> values) {
    const auto n = static_cast<double>(values.size());
    return {sample_variance(values) / n, variance_stderr(values) / n};
}

/// Variance across replications of the estimates themselves.
inline VarianceStat replication_variance(std::span<const double> estimates) {
    return {sample_variance(estimates), variance_stderr(estimates)};
}

inline std::pair<double, double> ratio_with_stderr(const VarianceStat& a, const VarianceStat& b) {
    const double r = a.value / b.value;
    const double ra = a.value > 0.0 ? a.stderr_ / a.value : 0.0;
    const double rb = b.value > 0.0 ? b.stderr_ / b.value : 0.0;
    return {r, std::abs(r) * std::sqrt(ra * ra + rb * rb)};
}

inline std::vector<double> batch_values(const BatchData& b, double alpha) {
    const Matrix d = b.control_deviation();
    std::vector<double> v(static_cast<std::size_t>(b.K()));
    for (Eigen::Index j = 0; j < b.K(); ++j) v[static_cast<std::size_t>(j)] = b.Q(j, 0) + alpha * d(j, 0);
    return v;
}

/// Cov of two sample variances computed from the same n pairs.
inline double variance_covariance(std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<double>(x.size());
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (x[i] - mx) * (y[i] - my) * (y[i] - my);
    return (sxy / n - sample_variance(x) * sample_variance(y)) / n;
}

/// Replicated (or single-run) results of the three estimators.
struct TrialSet {
    std::vector<Estimate> mfis;
    std::vector<BatchData> cv;
    std::vector<BatchData> acv;
    std::vector<std::string> errors{3};
};

inline TrialSet run_trials(const ExperimentConfig& cfg, const ProblemSetup& setup, const TrialPlans& plans) {
    const RngStream rng(cfg.seed, 1);
    const auto reps = static_cast<std::size_t>(cfg.replications);
    const unsigned outer = reps > 1 ? cfg.threads : 1;
    const unsigned inner = reps > 1 ? 1 : cfg.threads;  // ensemble batches only
    const auto list = setup.pair.as_list();
    const Density& p = *setup.pair.input;
    const Density& q = *setup.proposal;
    TrialSet t;
    auto guarded = [&](std::size_t slot, auto&& body) {
        try {
            body();
        } catch (const Error& e) {
            t.errors[slot] = e.what();
        }
    };
    guarded(0, [&] {
        std::vector<Estimate> out(reps);
        parallel_for(reps, outer, [&](std::size_t r) {
            RngStream s = rng.split(r).split(0);
            out[r] = is_estimate(setup.pair.hf, p, q, s, plans.mfis.n_hf);
        });
        t.mfis = std::move(out);
    });
    guarded(1, [&] {
        std::vector<BatchData> out(reps);
        const Vector mu = Vector::Constant(1, setup.mu1);
        parallel_for(reps, outer, [&](std::size_t r) {
            out[r] = simulate_batches(list, p, q, plans.cv_plan, mu, rng.split(r).split(1), inner);
        });
        t.cv = std::move(out);
    });
    guarded(2, [&] {
        std::vector<BatchData> out(reps);
        parallel_for(reps, outer, [&](std::size_t r) {
            out[r] = simulate_batches(list, p, q, plans.acv_plan, std::nullopt, rng.split(r).split(2), inner);
        });
        t.acv = std::move(out);
    });
    return t;
}

/// Estimates and variance of an ensemble estimator across the trials, at a
/// fixed α or (when unset) at each trial's estimated weight.
struct EnsembleSummary {
    double estimate = 0.0;
    VarianceStat variance;
    double alpha = 0.0;
};

inline EnsembleSummary summarize_ensemble(const std::vector<BatchData>& trials, std::optional<double> alpha) {
    EnsembleSummary s;
    std::vector<double> est, alphas;
    std::vector<double> last;
    for (const auto& b : trials) {
        const double a = alpha ? *alpha : direct_weight(b).alpha(0);
        last = batch_values(b, a);
        est.push_back(mean(last));
        alphas.push_back(a);
    }
    s.estimate = mean(est);
    s.alpha = mean(alphas);
    s.variance = trials.size() > 1 ? replication_variance(est) : variance_of_mean(last);
    return s;
}

inline VarianceStat mfis_variance(const std::vector<Estimate>& trials) {
    if (trials.size() > 1) {
        std::vector<double> est;
        for (const auto& e : trials) est.push_back(e.estimate);
        return replication_variance(est);
    }
    return variance_of_mean(trials.front().values);
}

inline double mfis_mean(const std::vector<Estimate>& trials) {
    double s = 0.0;
    for (const auto& e : trials) s += e.estimate;
    return s / static_cast<double>(trials.size());
}

/// Pooled per-batch covariance of (Q0, Q1 - μ1) over every trial.
inline std::pair<double, double> pooled_control_moments(const std::vector<BatchData>& trials) {
    std::vector<double> q0, d;
    for (const auto& b : trials) {
        const Matrix dev = b.control_deviation();
        for (Eigen::Index j = 0; j < b.K(); ++j) {
            q0.push_back(b.Q(j, 0));
            d.push_back(dev(j, 0));
        }
    }
    return {sample_covariance(q0, d), sample_variance(d)};
}

inline nlohmann::json weight_theory(const std::vector<BatchData>& trials) {
    const auto [cov, var] = pooled_control_moments(trials);
    nlohmann::json j;
    j["cov"] = cov;
    j["var"] = var;
    if (var > 0.0) {
        const Interval range = weight_range(cov, var);
        j["alpha_star"] = -cov / var;
        j["weight_range"] = {range.lo, range.hi};
    }
    return j;
}

} // namespace detail

struct ProfilePoint {
    double alpha = 0.0;
    double ratio = 0.0;   ///< V(α)/V(0)
    double stderr_ = 0.0;
};

/// Replication variance of a fixed-weight ensemble estimator relative to its
/// α = 0 baseline, with a standard error that accounts for both variances
/// coming from the same replications.
inline std::vector<ProfilePoint> relative_alpha_profile(const std::vector<BatchData>& trials,
                                                        std::span<const double> grid) {
    require(trials.size() >= 4, "alpha profile needs at least 4 replications");
    auto estimates = [&](double a) {
        std::vector<double> e;
        for (const auto& b : trials) e.push_back(mean(detail::batch_values(b, a)));
        return e;
    };
    const auto base = estimates(0.0);
    const double v0 = sample_variance(base);
    const double var0 = detail::variance_stderr(base) * detail::variance_stderr(base);
    std::vector<ProfilePoint> out;
    for (double a : grid) {
        const auto e = estimates(a);
        const double va = sample_variance(e);
        const double r = va / v0;
        const double vara = detail::variance_stderr(e) * detail::variance_stderr(e);
        const double cov = detail::variance_covariance(e, base);
        const double rel = vara / (va * va) + var0 / (v0 * v0) - 2.0 * cov / (va * v0);
        out.push_back({a, r, r * std::sqrt(std::max(0.0, rel))});
    }
    return out;
}

/// End-to-end comparison of MFIS, MF-CV and MF-ACV at equal online cost. The
/// biasing density is fitted offline; its cost and any reference runs are
/// excluded from the budget. With one replication, variances are the
/// estimators' own batch-based estimates.
inline Report run_experiment(const ExperimentConfig& cfg) {
    const ProblemSetup setup = prepare_problem(cfg);
    const TrialPlans plans = plan_trials(cfg);
    const auto trials = detail::run_trials(cfg, setup, plans);

    Report rep;
    rep.kind = "experiment";
    rep.info = setup.info;
    rep.info["config"] = to_json(cfg);

    EstimatorRow mfis;
    mfis.name = "MFIS";
    mfis.n_hf = plans.mfis.n_hf;
    std::optional<detail::VarianceStat> v0;
    if (trials.errors[0].empty()) {
        v0 = detail::mfis_variance(trials.mfis);
        mfis.estimate = detail::mfis_mean(trials.mfis);
        mfis.variance = v0->value;
        mfis.variance_stderr = v0->stderr_;
        mfis.variance_ratio = 1.0;
        mfis.variance_ratio_stderr = 0.0;
    } else {
        mfis.status = "failed: " + trials.errors[0];
    }
    rep.estimators.push_back(mfis);

    auto ensemble_row = [&](const std::string& name, const BatchPlan& plan, const std::vector<BatchData>& data,
                            const std::string& error) {
        const Allocation a = realized(plan);
        EstimatorRow row;
        row.name = name;
        row.n_hf = a.n_hf;
        row.n_lf = a.n_lf;
        if (!error.empty()) {
            row.status = "failed: " + error;
            return row;
        }
        try {
            const auto s = detail::summarize_ensemble(data, std::nullopt);
            row.estimate = s.estimate;
            row.variance = s.variance.value;
            row.variance_stderr = s.variance.stderr_;
            row.alpha = s.alpha;
            if (v0) std::tie(row.variance_ratio, row.variance_ratio_stderr) = detail::ratio_with_stderr(s.variance, *v0);
        } catch (const Error& e) {
            row.status = std::string("failed: ") + e.what();
        }
        return row;
    };
    rep.estimators.push_back(ensemble_row("MF-CV", plans.cv_plan, trials.cv, trials.errors[1]));
    rep.estimators.push_back(ensemble_row("MF-ACV", plans.acv_plan, trials.acv, trials.errors[2]));

    if (trials.errors[1].empty()) rep.info["cv_theory"] = detail::weight_theory(trials.cv);
    if (trials.errors[2].empty()) rep.info["acv_theory"] = detail::weight_theory(trials.acv);
    rep.info["cv_plan"] = {{"K", plans.cv_plan.K}, {"n", plans.cv_plan.n}};
    rep.info["acv_plan"] = {{"K", plans.acv_plan.K}, {"n", plans.acv_plan.n}, {"m", plans.acv_plan.m}};
    return rep;
}

inline std::vector<double> default_alpha_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 20; ++i) g.push_back(-1.5 + 0.1 * i);
    return g;
}

/// Variance ratios against MFIS over a grid of fixed weights, plus the
/// estimated-weight estimators (constant columns).
inline Report run_alpha_sweep(const ExperimentConfig& cfg) {
    const ProblemSetup setup = prepare_problem(cfg);
    const TrialPlans plans = plan_trials(cfg);
    const auto trials = detail::run_trials(cfg, setup, plans);
    for (const auto& e : trials.errors)
        if (!e.empty()) throw Error("alpha sweep: " + e);

    const auto grid = cfg.alpha_grid.empty() ? default_alpha_grid() : cfg.alpha_grid;
    const auto v0 = detail::mfis_variance(trials.mfis);
    const auto bar_cv = detail::summarize_ensemble(trials.cv, std::nullopt);
    const auto bar_is = detail::summarize_ensemble(trials.acv, std::nullopt);
    const auto [rbc, rbc_se] = detail::ratio_with_stderr(bar_cv.variance, v0);
    const auto [rbi, rbi_se] = detail::ratio_with_stderr(bar_is.variance, v0);

    Report rep;
    rep.kind = "alpha-sweep";
    rep.table.columns = {"alpha",
                         "v_cv_ratio",
                         "v_is_ratio",
                         "v_bar_cv_ratio",
                         "v_bar_is_ratio",
                         "v_cv_ratio_stderr",
                         "v_is_ratio_stderr",
                         "v_bar_cv_ratio_stderr",
                         "v_bar_is_ratio_stderr"};
    for (double a : grid) {
        const auto cv = detail::summarize_ensemble(trials.cv, a);
        const auto is = detail::summarize_ensemble(trials.acv, a);
        const auto [rc, rc_se] = detail::ratio_with_stderr(cv.variance, v0);
        const auto [ri, ri_se] = detail::ratio_with_stderr(is.variance, v0);
        rep.table.rows.push_back({a, rc, ri, rbc, rbi, rc_se, ri_se, rbc_se, rbi_se});
    }
    rep.info = setup.info;
    rep.info["config"] = to_json(cfg);
    rep.info["v0"] = v0.value;
    rep.info["alpha_bar_cv"] = bar_cv.alpha;
    rep.info["alpha_bar_is"] = bar_is.alpha;
    rep.info["cv_theory"] = detail::weight_theory(trials.cv);
    rep.info["acv_theory"] = detail::weight_theory(trials.acv);
    return rep;
}

struct TheoryValidationConfig {
    int M = 1;
    std::vector<int> K_grid{10};
    double r2 = 0.81;  ///< R² of the CV scheme; other schemes use their own R² of the same family
    Scheme scheme = Scheme::CV;
    double r = 8.0;    ///< common sample ratio for the ACV schemes
    std::size_t n = 100;
    int replications = 2000;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

/// Replicated ensemble estimates on a synthetic family against the closed-form
/// variance ratio and the minimum-K bound.
inline Report run_theory_validation(const TheoryValidationConfig& cfg) {
    require(cfg.replications >= 4, "theory validation needs at least 4 replications");
    require(!cfg.K_grid.empty(), "K_grid must not be empty");
    const auto fam = synthetic_family_for_r2(cfg.M, cfg.r2);
    const Vector r = Vector::Constant(cfg.M, cfg.r);
    const double r2_scheme = r_squared(cfg.scheme, fam.stats, cfg.scheme == Scheme::CV ? Vector::Ones(cfg.M) : r);
    const std::optional<double> r_opt = cfg.scheme == Scheme::CV ? std::nullopt : std::optional<double>(cfg.r);

    Report rep;
    rep.kind = "theory-validation";
    rep.table.columns = {"K", "empirical_ratio", "empirical_ratio_stderr", "predicted_ratio", "bound_B", "below_one"};
    const double bound =
        r2_scheme > 0.0 ? ensemble_bound(cfg.scheme, r2_scheme, cfg.M, r_opt) : std::numeric_limits<double>::infinity();
    for (int K : cfg.K_grid) {
        BatchPlan plan;
        plan.K = K;
        plan.n = cfg.n;
        plan.scheme = cfg.scheme;
        if (cfg.scheme != Scheme::CV) plan.r = r;
        std::vector<double> est(static_cast<std::size_t>(cfg.replications));
        const RngStream rng(cfg.seed, static_cast<std::uint64_t>(K));
        parallel_for(est.size(), cfg.threads, [&](std::size_t i) {
            est[i] = acv_mc_estimate(fam.models, *fam.input, plan, rng.split(i)).estimate;
        });
        const double mc = fam.stats.var0 / static_cast<double>(cfg.n * static_cast<std::size_t>(K));
        const auto v = detail::replication_variance(est);
        const double predicted = K > cfg.M + 2 ? variance_ratio_prediction(cfg.scheme, r2_scheme, cfg.M, K, r_opt)
                                               : std::numeric_limits<double>::quiet_NaN();
        rep.table.rows.push_back({static_cast<double>(K), v.value / mc, v.stderr_ / mc, predicted, bound,
                                  v.value / mc < 1.0 ? 1.0 : 0.0});
    }
    rep.info["M"] = cfg.M;
    rep.info["r2_cv"] = cfg.r2;
    rep.info["r2_scheme"] = r2_scheme;
    rep.info["scheme"] = std::string(to_string(cfg.scheme));
    rep.info["n"] = cfg.n;
    rep.info["replications"] = cfg.replications;
    if (r_opt) rep.info["r"] = *r_opt;
    if (r2_scheme > 0.0) rep.info["min_ensembles"] = min_ensembles(cfg.scheme, r2_scheme, cfg.M, r_opt);
    return rep;
}

} // namespace cvis
