#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "spinchaos/model.hpp"

using namespace spinchaos;

namespace {
double log_barrier_u(double x, double a) { return -std::log(a * a - x * x); }
} // namespace

TEST_CASE("potential gradient matches the closed forms", "[model]") {
    auto lb = PotentialSpec::log_barrier();
    REQUIRE(potential_grad(lb, 0.0, 1.0) == 0.0);
    REQUIRE(potential_grad(lb, 0.5, 1.0) == Catch::Approx(4.0 / 3.0).epsilon(1e-14));
    REQUIRE(potential_grad(PotentialSpec::zero(), 0.73, 1.0) == 0.0);
    REQUIRE_THROWS_AS(potential_grad(lb, 1.0, 1.0), std::domain_error);
    REQUIRE_THROWS_AS(potential_grad(lb, -1.2, 1.0), std::domain_error);
}

TEST_CASE("log-barrier gradient agrees with a finite-difference probe", "[model]") {
    auto lb = PotentialSpec::log_barrier();
    const double h = 1e-6;
    for (double x : {0.5, -0.3, 0.85, 0.0}) {
        const double fd = (log_barrier_u(x + h, 1.0) - log_barrier_u(x - h, 1.0)) / (2.0 * h);
        REQUIRE(potential_grad(lb, x, 1.0) == Catch::Approx(fd).margin(1e-5));
    }
}

TEST_CASE("gradient is odd to round-off", "[model]") {
    auto lb = PotentialSpec::log_barrier();
    auto s = rng::stream(5, rng::Tag::scratch);
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const double x = (2.0 * s.uniform(i) - 1.0) * 0.999;
        REQUIRE(potential_grad(lb, x, 1.0) == -potential_grad(lb, -x, 1.0));
    }
}

TEST_CASE("log-barrier is convex on the interior grid", "[model]") {
    auto lb = PotentialSpec::log_barrier();
    const double a = 1.0, eps = 0.02, h = 1e-4;
    for (int i = 0; i <= 200; ++i) {
        const double x = -a + eps + (2.0 * (a - eps)) * i / 200.0;
        const double second =
            (log_barrier_u(x + h, a) - 2.0 * log_barrier_u(x, a) + log_barrier_u(x - h, a)) /
            (h * h);
        REQUIRE(second >= 0.0);
    }
}

TEST_CASE("parameter validation reports violations", "[model]") {
    ModelParams p;
    p.beta = 1.0;
    p.big_a = 1.0;
    p.horizon = 1.0;
    p.n_particles = 4;
    p.potential = PotentialSpec::log_barrier();
    p.initial = default_initial_law(p.potential, p.big_a);
    p.grid = TimeGrid(1.0, 100);
    REQUIRE(validate_params(p).empty());

    ModelParams bad = p;
    bad.beta = -1.0;
    auto v = validate_params(bad);
    REQUIRE(v.size() == 1);
    REQUIRE(v[0] == "beta >= 0");

    ModelParams edge = p;
    edge.initial.kind = InitialKind::UniformSymmetric;
    edge.initial.half_width = 1.0; // == A, violates open support
    v = validate_params(edge);
    REQUIRE(v.size() == 1);
    REQUIRE(v[0] == "supported in (-A, A)");

    ModelParams zero = p;
    zero.potential = PotentialSpec::zero();
    v = validate_params(zero);
    REQUIRE_FALSE(v.empty()); // unconfined model must start at the origin
    zero.initial.kind = InitialKind::PointMassZero;
    REQUIRE(validate_params(zero).empty());
}

TEST_CASE("disorder entry laws have mean 0 and unit variance", "[model][slow]") {
    for (auto kind : {DisorderKind::Gaussian, DisorderKind::Rademacher,
                      DisorderKind::UniformUnitVar, DisorderKind::CenteredBeta}) {
        DisorderSpec spec{kind, 1.0};
        auto s = rng::stream(123, rng::Tag::scratch, static_cast<std::uint64_t>(kind));
        const int n = 1000000;
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < n; ++i) mean += disorder_entry(spec, s, static_cast<std::uint64_t>(i));
        mean /= n;
        for (int i = 0; i < n; ++i) {
            const double z = disorder_entry(spec, s, static_cast<std::uint64_t>(i)) - mean;
            var += z * z;
        }
        var /= n - 1;
        INFO("kind " << to_string(kind));
        REQUIRE(std::abs(mean) <= 5e-3);
        REQUIRE(std::abs(var - 1.0) <= 1e-2);
    }
}

TEST_CASE("initial laws respect symmetry and support", "[model]") {
    InitialLawSpec unif;
    unif.kind = InitialKind::UniformSymmetric;
    unif.half_width = 0.5;
    auto s = rng::stream(9, rng::Tag::scratch);
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const double x = initial_draw(unif, s, i);
        REQUIRE(std::abs(x) < 0.5);
    }

    InitialLawSpec custom;
    custom.kind = InitialKind::IidCustom;
    custom.probs = {0.0, 0.25, 0.5, 0.75, 1.0};
    custom.quantiles = {-0.8, -0.2, 0.0, 0.2, 0.8};
    ModelParams p;
    p.potential = PotentialSpec::log_barrier();
    p.initial = custom;
    p.grid = TimeGrid(1.0, 10);
    REQUIRE(validate_params(p).empty());

    custom.quantiles = {-0.8, -0.2, 0.0, 0.3, 0.8}; // asymmetric
    p.initial = custom;
    auto v = validate_params(p);
    REQUIRE_FALSE(v.empty());
}
