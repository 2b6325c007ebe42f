#include <catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <numbers>

#include "cvis/densities.hpp"

using Catch::Approx;
using namespace cvis;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

double at(const Density& d, double x) {
    const double z[1] = {x};
    return d.log_pdf(z);
}

// Trapezoid rule on [a, b].
template <class F>
double integrate(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = 0.5 * (f(a) + f(b));
    for (int i = 1; i < n; ++i) s += f(a + i * h);
    return s * h;
}

GaussianMixture two_bumps() {
    return GaussianMixture({0.5, 0.5}, {vec({-5.0}), vec({5.0})}, {Matrix::Identity(1, 1), Matrix::Identity(1, 1)});
}

Model upper_tail(double l) {
    return Model("tail", 1, [](std::span<const double> z) { return z[0]; }).with_threshold(l);
}

} // namespace

TEST_CASE("log_pdf reference values", "[densities]") {
    const Density n1{StandardNormal(1)};
    REQUIRE(at(n1, 0.0) == Approx(std::log(0.3989422804)).epsilon(1e-10));
    const Density box{UniformBox(vec({0.0}), vec({1.0}))};
    REQUIRE(at(box, 0.5) == 0.0);
    const Density mix{GaussianMixture({1.0}, {vec({0.0})}, {Matrix::Identity(1, 1)})};
    REQUIRE(at(mix, 0.0) == Approx(at(n1, 0.0)).epsilon(1e-15));
    REQUIRE(at(mix, 1.7) == Approx(at(n1, 1.7)).epsilon(1e-15));
}

TEST_CASE("log_pdf rejects the wrong dimension", "[densities]") {
    const Density n2{StandardNormal(2)};
    const double z[1] = {0.0};
    REQUIRE_THROWS_AS(n2.log_pdf(z), DimensionMismatch);
}

TEST_CASE("mixture construction validates its parameters", "[densities]") {
    REQUIRE_THROWS_AS(GaussianMixture({0.5, 0.6}, {vec({0}), vec({1})}, {Matrix::Identity(1, 1), Matrix::Identity(1, 1)}),
                      ConstructionError);
    Matrix bad(2, 2);
    bad << 1, 2, 2, 1;
    REQUIRE_THROWS_AS(GaussianMixture({1.0}, {vec({0, 0})}, {bad}), ConstructionError);
    REQUIRE_THROWS_AS(UniformBox(vec({1.0}), vec({0.0})), ConstructionError);
}

TEST_CASE("densities integrate to one", "[densities][property]") {
    const Density n1{StandardNormal(1)};
    const Density mix{two_bumps()};
    const Density box{UniformBox(vec({-1.0}), vec({2.0}))};
    for (const Density* d : {&n1, &mix}) {
        const double total = integrate([&](double x) { return std::exp(at(*d, x)); }, -15.0, 15.0, 30000);
        REQUIRE(std::abs(total - 1.0) < 1e-3);
    }
    // midpoint rule avoids the discontinuities at the box edges
    double total = 0.0;
    const int n = 3000;
    for (int i = 0; i < n; ++i) total += std::exp(at(box, -2.0 + (i + 0.5) * 5.0 / n)) * 5.0 / n;
    REQUIRE(std::abs(total - 1.0) < 1e-3);

    const Density box2{UniformBox(vec({0.0, 0.0}), vec({2.0, 0.5}))};
    double t2 = 0.0;
    // cell edges fall on the box faces
    for (int i = 0; i < 300; ++i)
        for (int j = 0; j < 150; ++j) {
            const double z[2] = {-0.5 + (i + 0.5) * 0.01, -0.5 + (j + 0.5) * 0.01};
            t2 += std::exp(box2.log_pdf(z)) * 1e-4;
        }
    REQUIRE(std::abs(t2 - 1.0) < 1e-3);
}

TEST_CASE("sampling moments", "[densities]") {
    RngStream rng(11, 0);
    const Density box{UniformBox(vec({0.0, 0.0}), vec({1.0, 1.0}))};
    const SampleMatrix u = box.sample(rng, 10000);
    REQUIRE(std::abs(u.col(0).mean() - 0.5) < 0.02);
    REQUIRE(std::abs(u.col(1).mean() - 0.5) < 0.02);

    const Density n1{StandardNormal(1)};
    const SampleMatrix z = n1.sample(rng, 100000);
    const double var = (z.col(0).array() - z.col(0).mean()).square().sum() / (z.rows() - 1);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("mixture sampling picks components by weight", "[densities]") {
    RngStream rng(12, 0);
    const Density mix{two_bumps()};
    const SampleMatrix z = mix.sample(rng, 10000);
    const double frac = (z.col(0).array() > 0.0).cast<double>().mean();
    // binomial(10⁴, 0.5) has standard deviation 0.005; 0.03 is six of them
    REQUIRE(std::abs(frac - 0.5) < 0.03);
}

TEST_CASE("sampling is deterministic per stream", "[densities][property]") {
    const Density mix{two_bumps()};
    RngStream a(99, 4), b(99, 4);
    const SampleMatrix x = mix.sample(a, 257);
    const SampleMatrix y = mix.sample(b, 257);
    REQUIRE(std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0);
}

TEST_CASE("density ratio", "[densities]") {
    const Density p{StandardNormal(1)};
    const Density q{isotropic_normal(vec({3.0}), 1.0)};
    const double z[1] = {3.0};
    REQUIRE(density_ratio(p, q, z) == Approx(std::exp(-4.5)).epsilon(1e-12));
    REQUIRE(density_ratio(p, q, z) == Approx(0.011109).epsilon(1e-4));

    RngStream rng(5, 1);
    const Density mix{two_bumps()};
    const SampleMatrix s = p.sample(rng, 1000);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        REQUIRE(density_ratio(p, p, row_span(s, i)) == 1.0);
        REQUIRE(density_ratio(mix, mix, row_span(s, i)) == 1.0);
    }

    const Density box{UniformBox(vec({0.0}), vec({1.0}))};
    const double outside[1] = {1.5};
    REQUIRE_THROWS_AS(density_ratio(p, box, outside), UnsupportedPoint);
}

TEST_CASE("rejection sampling targets the failure set", "[densities]") {
    const Density p{StandardNormal(1)};
    const Model g3 = upper_tail(3.0);
    RngStream rng(21, 0);
    const auto res = rejection_sample_counted(g3, p, rng, 10000);
    for (Eigen::Index i = 0; i < res.samples.rows(); ++i) REQUIRE(g3.fails(row_span(res.samples, i)));

    // E[Z | Z > 3] = φ(3) / (1 - Φ(3))
    const double tail = 1.0 - normal_cdf(3.0);
    const double cond_mean = normal_pdf(3.0) / tail;
    REQUIRE(cond_mean == Approx(3.2831).epsilon(1e-4));
    const Vector x = res.samples.col(0);
    const double m = x.mean();
    const double se = std::sqrt((x.array() - m).square().sum() / (x.size() - 1) / x.size());
    REQUIRE(std::abs(m - cond_mean) < 3.0 * se);

    RngStream rng2(22, 0);
    const auto half = rejection_sample_counted(upper_tail(0.0), p, rng2, 20000);
    REQUIRE(std::abs(half.acceptance_rate() - 0.5) < 0.01);
}

TEST_CASE("rejection sampling stalls on empty failure sets", "[densities]") {
    const Density p{StandardNormal(1)};
    RngStream rng(23, 0);
    REQUIRE_THROWS_AS(rejection_sample(upper_tail(40.0), p, rng, 1, 1000), IntractableTarget);
}

TEST_CASE("conditional density matches rejection draws", "[densities]") {
    auto p = std::make_shared<const Density>(StandardNormal(1));
    auto g = std::make_shared<const Model>(upper_tail(2.0));
    const Density cond{ConditionalDensity(p, g, 1.0 - normal_cdf(2.0))};
    const double total = integrate([&](double x) { return std::exp(at(cond, x)); }, 2.0 + 1e-12, 12.0, 20000);
    REQUIRE(std::abs(total - 1.0) < 1e-3);
    REQUIRE(at(cond, 1.0) == -std::numeric_limits<double>::infinity());
    RngStream rng(3, 3);
    const SampleMatrix s = cond.sample(rng, 500);
    REQUIRE((s.col(0).array() > 2.0).all());
}

TEST_CASE("KL divergence estimates", "[densities]") {
    const Density n01{StandardNormal(1)};
    const Density n11{isotropic_normal(vec({1.0}), 1.0)};
    const Density n04{isotropic_normal(vec({0.0}), 4.0)};
    RngStream rng(31, 0);
    const auto self = kl_divergence_mc(n01, n01, rng, 5000);
    REQUIRE(std::abs(self.value) <= 3.0 * self.std_error + 1e-15);
    const auto shift = kl_divergence_mc(n01, n11, rng, 20000);
    REQUIRE(std::abs(shift.value - 0.5) < 3.0 * shift.std_error);
    const auto scale = kl_divergence_mc(n01, n04, rng, 20000);
    const double exact = 0.5 * (std::log(4.0) + 0.25 - 1.0);
    REQUIRE(exact == Approx(0.3181).epsilon(1e-3));
    REQUIRE(std::abs(scale.value - exact) < 3.0 * scale.std_error);
}

TEST_CASE("mixture json round trip is exact", "[densities]") {
    Matrix s(2, 2);
    s << 0.1234567890123456789, 0.01, 0.01, 2.0 / 3.0;
    const GaussianMixture g({0.3, 0.7}, {vec({1.0 / 3.0, -2.0}), vec({std::numbers::pi, 1e-17})},
                            {s, Matrix::Identity(2, 2) * 1e-3});
    const auto text = mixture_to_json(g).dump();
    const auto back = mixture_from_json(nlohmann::json::parse(text));
    REQUIRE(back.components() == 2);
    for (std::size_t c = 0; c < 2; ++c) {
        REQUIRE(back.weights()[c] == g.weights()[c]);
        REQUIRE(back.means()[c] == g.means()[c]);
        REQUIRE(back.covariances()[c] == g.covariances()[c]);
    }
    REQUIRE_THROWS_AS(mixture_from_json(nlohmann::json::parse(R"({"d":1})")), ConstructionError);
}
