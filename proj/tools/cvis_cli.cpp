#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cvis/experiment.hpp"

using namespace cvis;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::string out;
    std::string config;
    std::string problem = "analytic";
};

ExperimentConfig load_config(const Globals& g) {
    ExperimentConfig cfg = default_config(problem_from_string(g.problem));
    if (!g.config.empty()) {
        std::ifstream in(g.config);
        if (!in) throw InvalidArgument("cannot open config " + g.config);
        nlohmann::json j = nlohmann::json::parse(in);
        if (!j.contains("problem")) j["problem"] = g.problem;
        cfg = config_from_json(j);
    }
    if (g.seed) cfg.seed = *g.seed;
    cfg.threads = g.threads;
    return cfg;
}

void emit(const Globals& g, const std::string& name, const Report& rep) {
    if (g.out.empty()) {
        std::cout << to_json(rep).dump(2) << '\n';
        return;
    }
    fs::create_directories(g.out);
    std::ofstream(fs::path(g.out) / (name + ".json")) << to_json(rep).dump(2) << '\n';
    std::ofstream csv(fs::path(g.out) / (name + ".csv"), std::ios::binary);
    write_csv(rep, csv);
    std::cerr << "wrote " << (fs::path(g.out) / name).string() << ".{json,csv}\n";
}

void emit_json(const Globals& g, const std::string& name, const nlohmann::json& j) {
    if (g.out.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    fs::create_directories(g.out);
    std::ofstream(fs::path(g.out) / (name + ".json")) << j.dump(2) << '\n';
    std::cerr << "wrote " << (fs::path(g.out) / name).string() << ".json\n";
}

std::optional<double> optional_r(Scheme s, double r) {
    return s == Scheme::CV ? std::nullopt : std::optional<double>(r);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-fidelity control-variate importance sampling experiments"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output directory for JSON and CSV reports");

    auto add_problem = [&](CLI::App* sub) {
        sub->add_option("--config", g.config, "JSON experiment configuration")->check(CLI::ExistingFile);
        sub->add_option("--problem", g.problem, "analytic, beam, plate or synthetic");
    };

    auto* fit = app.add_subcommand("fit-biasing", "Fit the cross-entropy mixture biasing density");
    add_problem(fit);
    auto* est = app.add_subcommand("estimate", "Run MFIS, MF-CV and MF-ACV at equal cost");
    add_problem(est);
    auto* sweep = app.add_subcommand("sweep-alpha", "Sweep the control weight");
    add_problem(sweep);

    auto* theory = app.add_subcommand("theory", "Closed-form variance ratio, bound and weight range");
    std::string scheme_name = "CV";
    double r2 = 0.81, r = 8.0;
    int M = 1, K = 10;
    std::optional<double> cov, var;
    theory->add_option("--scheme", scheme_name, "CV, ACV-IS or ACV-MF");
    theory->add_option("--r2", r2, "R² of the scheme")->check(CLI::Range(0.0, 1.0));
    theory->add_option("--models", M, "Number of control models")->check(CLI::PositiveNumber);
    theory->add_option("--K", K, "Number of ensembles")->check(CLI::PositiveNumber);
    theory->add_option("--r", r, "Sample ratio for ACV schemes");
    theory->add_option("--cov", cov, "Cov(Y0, Y1) for the weight range");
    theory->add_option("--var", var, "Var(Y1) for the weight range");

    auto* validate = app.add_subcommand("validate-theorem2", "Replicate ensemble estimators on a synthetic family");
    TheoryValidationConfig tv;
    std::string tv_scheme = "CV";
    validate->add_option("--models", tv.M)->check(CLI::PositiveNumber);
    validate->add_option("--K", tv.K_grid, "Ensemble counts")->expected(1, -1);
    validate->add_option("--r2", tv.r2)->check(CLI::Range(0.0, 1.0));
    validate->add_option("--scheme", tv_scheme);
    validate->add_option("--r", tv.r);
    validate->add_option("--n", tv.n, "Samples per batch")->check(CLI::PositiveNumber);
    validate->add_option("--replications", tv.replications)->check(CLI::PositiveNumber);

    auto* alloc = app.add_subcommand("allocate", "Equal-cost sample allocation");
    std::size_t budget = 500000;
    double cost_ratio = 30.0, rho = 4.5;
    std::string alloc_scheme = "CV";
    alloc->add_option("--budget", budget, "Budget in high-fidelity equivalents")->check(CLI::PositiveNumber);
    alloc->add_option("--cost-ratio", cost_ratio);
    alloc->add_option("--scheme", alloc_scheme, "CV, ACV-IS, ACV-MF or MFIS");
    alloc->add_option("--rho", rho, "LF/HF sample ratio for ACV schemes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*fit) {
            const auto cfg = load_config(g);
            const auto setup = prepare_problem(cfg);
            nlohmann::json j = setup.info;
            j["config"] = to_json(cfg);
            emit_json(g, "biasing", j);
        } else if (*est) {
            emit(g, "estimate", run_experiment(load_config(g)));
        } else if (*sweep) {
            auto cfg = load_config(g);
            if (cfg.alpha_grid.empty()) cfg.alpha_grid = default_alpha_grid();
            emit(g, "alpha_sweep", run_alpha_sweep(cfg));
        } else if (*theory) {
            const Scheme s = scheme_from_string(scheme_name);
            const auto ro = optional_r(s, r);
            nlohmann::json j;
            j["scheme"] = scheme_name;
            j["r2"] = r2;
            j["M"] = M;
            j["K"] = K;
            if (K > M + 2) j["predicted_ratio"] = variance_ratio_prediction(s, r2, M, K, ro);
            if (r2 > 0.0) {
                j["bound_B"] = ensemble_bound(s, r2, M, ro);
                j["min_ensembles"] = min_ensembles(s, r2, M, ro);
            }
            if (cov && var) {
                const auto w = weight_range(*cov, *var);
                j["alpha_star"] = -*cov / *var;
                j["weight_range"] = {w.lo, w.hi};
            }
            emit_json(g, "theory", j);
        } else if (*validate) {
            tv.scheme = scheme_from_string(tv_scheme);
            if (g.seed) tv.seed = *g.seed;
            tv.threads = g.threads;
            emit(g, "theorem2", run_theory_validation(tv));
        } else if (*alloc) {
            const Allocation a = alloc_scheme == "MFIS"
                                     ? mfis_allocation(budget)
                                     : allocate_equal_cost(budget, cost_ratio, scheme_from_string(alloc_scheme), rho);
            emit_json(g, "allocation", {{"scheme", alloc_scheme}, {"n_hf", a.n_hf}, {"n_lf", a.n_lf}});
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
