#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cvis/models.hpp"

using Catch::Approx;
using namespace cvis;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

void check_indicator_consistency(const Model& m, const Density& p, std::uint64_t seed, std::size_t n) {
    RngStream rng(seed, 0);
    const SampleMatrix z = p.sample(rng, n);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const auto zi = row_span(z, i);
        REQUIRE((m.evaluate(zi) == 1.0) == (m.limit_state(zi) < 0.0));
        REQUIRE(m.evaluate(zi) == m.evaluate(zi));
    }
}

} // namespace

TEST_CASE("analytic pair carries exact failure probabilities", "[models]") {
    const ModelPair pair = analytic_pair(3.0, 2.8);
    REQUIRE(*pair.hf.exact_mean() == Approx(1.349898e-3).epsilon(1e-6));
    REQUIRE(*pair.lf.exact_mean() == Approx(2.555130e-3).epsilon(1e-6));
    REQUIRE(*analytic_pair(0.0, 0.0).hf.exact_mean() == 0.5);
    REQUIRE(pair.cost_ratio() == 30.0);
    REQUIRE(analytic_pair(3.0, 2.8, 12.0).cost_ratio() == 12.0);
    const double z[1] = {2.9};
    REQUIRE(pair.hf.limit_state(z) == Approx(0.1));
    REQUIRE(pair.hf.evaluate(z) == 0.0);
    REQUIRE(pair.lf.evaluate(z) == 1.0);
    check_indicator_consistency(pair.hf, *pair.input, 1, 10000);
    check_indicator_consistency(pair.lf, *pair.input, 2, 10000);
}

TEST_CASE("intermediate thresholds define the biasing sequence", "[models]") {
    const Model end = intermediate_threshold(2.8);
    const Model lf = analytic_pair(3.0, 2.8).lf;
    RngStream rng(3, 0);
    const Density p{StandardNormal(1)};
    const SampleMatrix z = p.sample(rng, 5000);
    for (Eigen::Index i = 0; i < z.rows(); ++i) REQUIRE(end.fails(row_span(z, i)) == lf.fails(row_span(z, i)));

    const auto res = rejection_sample_counted(intermediate_threshold(1.6), p, rng, 2000);
    const double expected = 1.0 - normal_cdf(1.6);
    REQUIRE(expected == Approx(0.0548).epsilon(1e-2));
    const double se = std::sqrt(expected * (1.0 - expected) / static_cast<double>(res.proposals));
    REQUIRE(std::abs(res.acceptance_rate() - expected) < 4.0 * se);

    // KL(q_2.8 ‖ q_l) = log(P(z > l) / P(z > 2.8)) exactly, growing as l falls
    const Density target = intermediate_density(2.8);
    double previous = -1.0;
    for (double l : {2.8, 2.6, 2.4, 2.2, 2.0, 1.8, 1.6}) {
        RngStream s(4, static_cast<std::uint64_t>(l * 10));
        const auto kl = kl_divergence_mc(target, intermediate_density(l), s, 500);
        const double exact = std::log((1.0 - normal_cdf(l)) / (1.0 - normal_cdf(2.8)));
        REQUIRE(kl.value == Approx(exact).margin(1e-12));
        REQUIRE(kl.value > previous);
        previous = kl.value;
    }
}

TEST_CASE("synthetic families reproduce their correlations", "[models]") {
    const auto fam = synthetic_gaussian_family(vec({0.8}), vec({1.0, 1.0}), vec({0.0, 0.0}));
    RngStream rng(5, 0);
    const SampleMatrix z = fam.input->sample(rng, 100000);
    std::vector<double> y0(100000), y1(100000);
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        y0[static_cast<std::size_t>(i)] = fam.models[0].evaluate(row_span(z, i));
        y1[static_cast<std::size_t>(i)] = fam.models[1].evaluate(row_span(z, i));
    }
    REQUIRE(std::abs(sample_correlation(y0, y1) - 0.8) < 0.01);
    REQUIRE(r_squared(Scheme::CV, fam.stats, Vector::Ones(1)) == Approx(0.64).epsilon(1e-12));

    const auto perfect = synthetic_gaussian_family(vec({1.0}), vec({4.0, 1.0}), vec({1.0, -2.0}));
    REQUIRE(r_squared(Scheme::CV, perfect.stats, Vector::Ones(1)) == Approx(1.0).epsilon(1e-12));
    for (Eigen::Index i = 0; i < 100; ++i) {
        const auto zi = row_span(z, i);
        // Y₁ = -2 + (Y₀ - 1) / 2
        REQUIRE(perfect.models[1].evaluate(zi) == Approx(-2.0 + 0.5 * (perfect.models[0].evaluate(zi) - 1.0)).margin(1e-12));
    }
}

TEST_CASE("synthetic family metadata matches sampled covariance", "[models]") {
    const auto fam = synthetic_gaussian_family(vec({0.9, 0.6}), vec({2.0, 1.0, 0.5}), vec({1.0, 2.0, 3.0}));
    RngStream rng(6, 0);
    const std::size_t n = 100000;
    const SampleMatrix z = fam.input->sample(rng, n);
    Matrix y(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
        for (Eigen::Index k = 0; k < 3; ++k) y(i, k) = fam.models[static_cast<std::size_t>(k)].evaluate(row_span(z, i));
    const Matrix centered = y.rowwise() - y.colwise().mean();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
    for (Eigen::Index i = 0; i < 3; ++i) {
        REQUIRE(std::abs(y.col(i).mean() - fam.means(i)) < 0.02);
        for (Eigen::Index j = 0; j < 3; ++j) REQUIRE(std::abs(cov(i, j) - fam.covariance(i, j)) < 0.02 * fam.covariance(i, i));
    }
    REQUIRE((fam.stats.c - fam.covariance.col(0).tail(2)).norm() == 0.0);
    REQUIRE(*fam.models[2].exact_mean() == 3.0);

    Matrix bad(3, 3);
    bad << 1, 0.9, -0.9, 0.9, 1, 0.9, -0.9, 0.9, 1;
    REQUIRE_THROWS_AS(synthetic_gaussian_family(bad, Vector::Ones(3), Vector::Zero(3)), ConstructionError);

    for (double r2 : {0.0, 0.25, 0.81, 0.95}) {
        for (Eigen::Index m : {1, 2, 4}) {
            const auto f = synthetic_family_for_r2(m, r2);
            REQUIRE(r_squared(Scheme::CV, f.stats, Vector::Ones(m)) == Approx(r2).margin(1e-12));
        }
    }
}

TEST_CASE("threshold calibration", "[models]") {
    const Model qoi("z", 1, [](std::span<const double> z) { return z[0]; });
    const Density p{StandardNormal(1)};
    RngStream rng(7, 0);
    const auto c = calibrate_thresholds(qoi, p, 1.3499e-3, 1000000, rng, 2);
    REQUIRE(std::abs(c.threshold - 3.0) < 0.05);
    REQUIRE(std::abs(c.achieved_pf - 1.3499e-3) < 1e-4);

    RngStream a(8, 0), b(8, 0);
    const auto med = calibrate_thresholds(qoi, p, 0.5, 1001, a);
    const SampleMatrix z = p.sample(b, 1001);
    std::vector<double> v(z.data(), z.data() + 1001);
    std::nth_element(v.begin(), v.begin() + 500, v.end());
    REQUIRE(med.threshold == v[500]);

    REQUIRE_THROWS_AS(calibrate_thresholds(qoi, p, 1e-3, 50000, rng), InsufficientTailMass);
    REQUIRE_THROWS_AS(calibrate_thresholds(qoi, p, 0.7, 50000, rng), InvalidArgument);
}

TEST_CASE("beam pair: field and responses", "[models][beam]") {
    const auto problem = std::make_shared<const BeamProblem>();
    const ModelPair pair = beam_pair(problem);
    REQUIRE(pair.hf.dimension() == 10);
    REQUIRE(pair.cost_ratio() == 11.0);

    const std::vector<double> half(10, 0.5);
    const auto ehf = problem->hf_moduli(half);
    const auto elf = problem->lf_moduli(half);
    REQUIRE(ehf.size() == 1200);
    REQUIRE(*std::max_element(ehf.begin(), ehf.end()) - *std::min_element(ehf.begin(), ehf.end()) > 0.0);
    REQUIRE(*std::max_element(elf.begin(), elf.end()) == *std::min_element(elf.begin(), elf.end()));
    for (double e : ehf) REQUIRE((e > 1.0 && e < 2.0));

    // ξ = 0 gives E = 1.5 everywhere; the response then matches a uniform solve
    const std::vector<double> zero(10, 0.0);
    const double uniform = problem->deflection(problem->hf_mesh(), std::vector<double>(1200, 1.5));
    REQUIRE(pair.hf.response(zero) == Approx(uniform).epsilon(1e-12));
    REQUIRE(pair.hf.response(zero) > 0.0);

    RngStream rng(9, 0);
    const SampleMatrix z = pair.input->sample(rng, 1000);
    std::vector<double> hf(1000), lf(1000);
    parallel_for(1000, 2, [&](std::size_t i) {
        hf[i] = pair.hf.response(row_span(z, static_cast<Eigen::Index>(i)));
        lf[i] = pair.lf.response(row_span(z, static_cast<Eigen::Index>(i)));
    });
    REQUIRE(sample_correlation(hf, lf) > 0.9);
    REQUIRE_THROWS_AS(pair.hf.response(std::vector<double>(3, 0.0)), DimensionMismatch);

    BeamConfig cfg;
    cfg.hf_threshold = 100.0;
    cfg.lf_threshold = 90.0;
    const ModelPair thresholded = beam_pair(cfg);
    check_indicator_consistency(thresholded.lf, *thresholded.input, 10, 200);
}

TEST_CASE("plate pair: mesh agreement and monotonicity", "[models][plate]") {
    const auto problem = std::make_shared<const PlateProblem>();
    const std::array<double, 4> thin{0.05, 0.05, 0.05, 0.05}, unit{1.0, 1.0, 1.0, 1.0};
    const double whf = problem->center_deflection(problem->hf_mesh(), thin, unit);
    const double wlf = problem->center_deflection(problem->lf_mesh(), thin, unit);
    REQUIRE(std::abs(wlf / whf - 1.0) < 0.10);

    std::vector<double> corners;
    for (double h : {0.05, 0.1})
        for (double s : {1.0, 2.0})
            corners.push_back(problem->center_deflection(problem->lf_mesh(), {h, h, h, h}, {s, s, s, s}));
    // (h, s) = (0.1, 1) is the third corner
    REQUIRE(*std::min_element(corners.begin(), corners.end()) == corners[2]);

    const ModelPair pair = plate_pair(problem);
    REQUIRE(pair.cost_ratio() == 37.0);
    const std::vector<double> z(8, 0.0);
    const auto [h, s] = problem->physical(z);
    REQUIRE(h[0] == Approx(0.075));
    REQUIRE(s[3] == Approx(1.5));

    RngStream rng(11, 0);
    const auto cal = calibrate_thresholds(pair.lf, *pair.input, 0.01, 20000, rng);
    REQUIRE(cal.achieved_pf >= 1e-3);
    REQUIRE(cal.achieved_pf <= 3e-2);
    PlateConfig cfg;
    cfg.lf_threshold = cal.threshold;
    check_indicator_consistency(plate_pair(cfg).lf, *pair.input, 12, 2000);
}
