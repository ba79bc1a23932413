#include <catch2/catch_amalgamated.hpp>

#include "spinchaos/fixedpoint.hpp"
#include "spinchaos/metrics.hpp"

using namespace spinchaos;

namespace {

ModelParams u0_params(double beta, int steps) {
    ModelParams p;
    p.beta = beta;
    p.big_a = 1.0;
    p.horizon = 1.0;
    p.n_particles = 1;
    p.potential = PotentialSpec::zero();
    p.disorder = {DisorderKind::Gaussian, 1.0};
    p.initial.kind = InitialKind::PointMassZero;
    p.grid = TimeGrid(1.0, steps);
    return p;
}

} // namespace

TEST_CASE("beta = 0 fixed point converges immediately", "[fixedpoint]") {
    auto p = u0_params(0.0, 50);
    SolveOptions opts;
    opts.n_paths = 4000;
    auto law = solve_limit(p, 3, opts);
    REQUIRE(law.converged);
    REQUIRE(law.iterations == 1);
    REQUIRE(law.final_residual == 0.0); // common random numbers make the map exact here
    // covariance of the initializer: Brownian min(s, t)
    for (int i : {10, 30, 50})
        for (int j : {10, 30}) {
            const double expect = std::min(p.grid.time(i), p.grid.time(j));
            REQUIRE(law.covariance.values(i, j) == Catch::Approx(expect).margin(0.04));
        }
}

TEST_CASE("unconfined fixed point hits the series variance", "[fixedpoint][slow]") {
    auto p = u0_params(1.0, 200);
    SolveOptions opts;
    opts.n_paths = 20000;
    auto law = solve_limit(p, 17, opts);
    REQUIRE(law.converged);
    const double target = 1.3875009527141268; // q_bar_1^2
    const double k11 = law.covariance.values(law.covariance.n_times() - 1,
                                             law.covariance.n_times() - 1);
    // 2% window plus 3 standard errors of a 2e4-sample variance estimate
    const double se = target * std::sqrt(2.0 / opts.n_paths);
    REQUIRE(std::abs(k11 - target) <= 0.02 * target + 3.0 * se);

    // the resolvent field is recomputable from the covariance
    Kernel r2 = resolvent_kernel(law.covariance, p.beta);
    REQUIRE((r2.values - law.resolvent.values).cwiseAbs().maxCoeff() <= 1e-12);

    // limit sample variance agrees with the kernel diagonal
    const auto ys = law.sample.marginal(0, p.grid.n_steps);
    double m = 0.0, v = 0.0;
    for (double y : ys) m += y;
    m /= ys.size();
    for (double y : ys) v += (y - m) * (y - m);
    v /= ys.size() - 1;
    REQUIRE(std::abs(v - target) <= 0.02 * target + 3.0 * se);
}

TEST_CASE("confined fixed point: symmetry, boundedness, stability", "[fixedpoint][slow]") {
    ModelParams p;
    p.beta = 1.0;
    p.big_a = 1.0;
    p.horizon = 1.0;
    p.n_particles = 1;
    p.potential = PotentialSpec::log_barrier();
    p.disorder = {DisorderKind::Gaussian, 1.0};
    p.initial = default_initial_law(p.potential, p.big_a);
    p.grid = TimeGrid(1.0, 100);
    SolveOptions opts;
    opts.n_paths = 8000;
    auto law = solve_limit(p, 23, opts);
    REQUIRE(law.converged);

    // centered law: |mean Y_t| within 3 standard errors at every grid time
    for (int i = 0; i <= p.grid.n_steps; i += 10) {
        const auto ys = law.sample.marginal(0, i);
        double m = 0.0;
        for (double y : ys) m += y;
        m /= ys.size();
        double sd = 0.0;
        for (double y : ys) sd += (y - m) * (y - m);
        sd = std::sqrt(sd / (ys.size() - 1));
        REQUIRE(std::abs(m) <= 3.0 * sd / std::sqrt(static_cast<double>(ys.size())) + 1e-12);
    }

    // confinement: K(t, t) <= A^2 exactly
    for (int i = 0; i <= p.grid.n_steps; ++i)
        REQUIRE(law.covariance.values(i, i) <= p.big_a * p.big_a);

    // seed stability: kernels from two seeds agree within the sum of
    // their own bootstrap spreads in the same metric
    auto law2 = solve_limit(p, 24, opts);
    REQUIRE(law2.converged);
    auto spread = [&](const LimitLaw& law_in, std::uint64_t bseed) {
        const auto s = rng::stream(bseed, rng::Tag::bootstrap);
        const Eigen::MatrixXd paths = law_in.sample.particle_matrix(0);
        std::vector<double> dists;
        std::uint64_t ctr = 0;
        for (int b = 0; b < 60; ++b) {
            Eigen::MatrixXd res(paths.rows(), paths.cols());
            for (Eigen::Index r = 0; r < paths.rows(); ++r)
                res.row(r) = paths.row(static_cast<Eigen::Index>(
                    s.u64(ctr++) % static_cast<std::uint64_t>(paths.rows())));
            Kernel kb = covariance_from_matrix(res, p.grid);
            dists.push_back(kernel_distance(kb, law_in.covariance));
        }
        std::sort(dists.begin(), dists.end());
        return dists[static_cast<std::size_t>(0.95 * (dists.size() - 1))];
    };
    const double d12 = kernel_distance(law.covariance, law2.covariance);
    REQUIRE(d12 <= spread(law, 1001) + spread(law2, 1002));
}

TEST_CASE("doubling the path count moves K(T,T) less than the smaller CI", "[fixedpoint][slow]") {
    auto p = u0_params(1.0, 100);
    SolveOptions small;
    small.n_paths = 5000;
    SolveOptions big;
    big.n_paths = 10000;
    auto a = solve_limit(p, 31, small);
    auto b = solve_limit(p, 31, big);
    const int last = p.grid.n_times() - 1;

    // bootstrap CI of the smaller run's terminal variance
    auto ys = a.sample.marginal(0, p.grid.n_steps);
    for (double& y : ys) y = y * y;
    auto ci = bootstrap_mean_ci(ys, 77);
    REQUIRE(std::abs(a.covariance.values(last, last) - b.covariance.values(last, last)) <=
            ci.width());
}

TEST_CASE("non-convergence is reported, never silent", "[fixedpoint]") {
    auto p = u0_params(1.0, 40);
    SolveOptions opts;
    opts.n_paths = 2000;
    opts.max_iter = 2;
    opts.tol = 1e-12; // unreachable at this path count
    auto law = solve_limit(p, 5, opts);
    REQUIRE_FALSE(law.converged);
    REQUIRE(law.iterations == 2);
    REQUIRE(law.final_residual > 0.0);
}
