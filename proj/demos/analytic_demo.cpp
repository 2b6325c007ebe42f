#include <cstdio>

#include "cvis/experiment.hpp"

// MFIS against the ensemble hybrids on the two-threshold normal problem.
int main() {
    using namespace cvis;
    ExperimentConfig cfg = default_config(ProblemKind::analytic);
    cfg.replications = 100;
    const Report rep = run_experiment(cfg);
    std::printf("exact P_f %.6e, control mean %.6e\n", rep.info["exact_hf_mean"].get<double>(),
                rep.info["mu1"].get<double>());
    std::printf("%-8s %8s %8s %14s %12s %10s\n", "name", "n_hf", "n_lf", "estimate", "variance", "ratio");
    for (const auto& r : rep.estimators)
        std::printf("%-8s %8zu %8zu %14.6e %12.3e %10.4f\n", r.name.c_str(), r.n_hf, r.n_lf, r.estimate, r.variance,
                    r.variance_ratio);

    const auto t = predict(Scheme::CV, synthetic_family_for_r2(1, 0.81).stats, Vector::Ones(1), 10);
    std::printf("\nR2 = 0.81, K = 10: predicted ensemble CV ratio %.4f, minimum K %d\n", *t.ratio, *t.k_min);
    return 0;
}
