#include <catch2/catch_amalgamated.hpp>

#include <complex>

#include <Eigen/Eigenvalues>

#include "spinchaos/exactu0.hpp"

using namespace spinchaos;

namespace {

// independent oracle: the (1,1) entry of int_0^t e^{sB} e^{sB^T} ds via
// the complex eigendecomposition of B, integrated in closed form
double exact_variance_eig(const Eigen::MatrixXd& b, double t) {
    const int n = static_cast<int>(b.rows());
    Eigen::EigenSolver<Eigen::MatrixXd> es(b);
    const Eigen::MatrixXcd v = es.eigenvectors();
    const Eigen::VectorXcd lam = es.eigenvalues();
    const Eigen::MatrixXcd vinv = v.inverse();
    // f(s) = sum_j (e^{sB})_{1j}^2 = sum_{k,l} a_{kl} e^{s(lam_k + lam_l)}
    // with a_{kl} = v_{1k} v_{1l} (V^{-1} V^{-T})_{kl}
    const Eigen::MatrixXcd g = vinv * vinv.transpose();
    std::complex<double> acc(0.0, 0.0);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
            const std::complex<double> a = v(0, k) * v(0, l) * g(k, l);
            const std::complex<double> mu = lam(k) + lam(l);
            if (std::abs(mu) < 1e-14) acc += a * t;
            else acc += a * (std::exp(mu * t) - 1.0) / mu;
        }
    return acc.real();
}

} // namespace

TEST_CASE("matrix exponential matches closed forms", "[exactu0]") {
    Eigen::MatrixXd rot(2, 2);
    rot << 0.0, 1.0, -1.0, 0.0;
    auto e = exactu0::expm_pade66(rot);
    REQUIRE(e(0, 0) == Catch::Approx(std::cos(1.0)).epsilon(1e-13));
    REQUIRE(e(0, 1) == Catch::Approx(std::sin(1.0)).epsilon(1e-13));
    REQUIRE(e(1, 0) == Catch::Approx(-std::sin(1.0)).epsilon(1e-13));

    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
    d(0, 0) = -1.0;
    d(1, 1) = 0.5;
    d(2, 2) = 3.0; // forces a few squarings
    auto ed = exactu0::expm_pade66(d);
    for (int i = 0; i < 3; ++i)
        REQUIRE(ed(i, i) == Catch::Approx(std::exp(d(i, i))).epsilon(1e-13));
}

TEST_CASE("quenched variance: scalar cases", "[exactu0]") {
    DisorderMatrix zero;
    zero.entries = Eigen::MatrixXd::Zero(1, 1);
    REQUIRE(exactu0::quenched_variance(zero, 0.7) == Catch::Approx(0.7).epsilon(1e-12));

    DisorderMatrix one;
    one.entries = Eigen::MatrixXd::Ones(1, 1);
    // scalar OU integral: (e^2 - 1)/2
    REQUIRE(exactu0::quenched_variance(one, 1.0) ==
            Catch::Approx(3.1945280494653251).epsilon(1e-8));
}

TEST_CASE("quenched variance behaves like t as t -> 0", "[exactu0]") {
    auto m = sample_disorder({DisorderKind::Gaussian, 1.0}, 12, 5);
    const double t = 1e-3;
    REQUIRE(exactu0::quenched_variance(m, t) / t == Catch::Approx(1.0).margin(1e-2));
}

TEST_CASE("quenched variance agrees with the eigendecomposition oracle", "[exactu0]") {
    for (int n : {2, 3, 4}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto m = sample_disorder({DisorderKind::Gaussian, 1.0}, n, seed);
            const double numeric = exactu0::quenched_variance(m, 1.0);
            const double exact = exact_variance_eig(m.entries / std::sqrt(static_cast<double>(n)), 1.0);
            REQUIRE(numeric == Catch::Approx(exact).margin(1e-8));
        }
    }
}

TEST_CASE("quenched variance overflow guard reports instead of crashing", "[exactu0]") {
    DisorderMatrix big;
    big.entries = Eigen::MatrixXd::Identity(2, 2) * 1000.0;
    REQUIRE_THROWS_AS(exactu0::quenched_variance(big, 1.0), std::overflow_error);
}

TEST_CASE("limit variance series: frozen values and shape", "[exactu0]") {
    REQUIRE(exactu0::limit_variance_series(1.0) ==
            Catch::Approx(1.3875009527141268).margin(1e-9));
    // leading term t as t -> 0
    REQUIRE(exactu0::limit_variance_series(1e-6) == Catch::Approx(1e-6).epsilon(1e-9));
    // strictly increasing in t
    double prev = 0.0;
    for (double t = 0.1; t <= 2.01; t += 0.1) {
        const double v = exactu0::limit_variance_series(t);
        REQUIRE(v > prev);
        prev = v;
    }
}

TEST_CASE("wick pairing oracle equals the Kronecker delta", "[exactu0]") {
    REQUIRE(exactu0::wick_pairing_oracle(1, 1) == 1);
    REQUIRE(exactu0::wick_pairing_oracle(2, 1) == 0);
    REQUIRE(exactu0::wick_pairing_oracle(2, 2) == 1);
    REQUIRE(exactu0::wick_pairing_oracle(3, 1) == 0);
    for (int k = 0; k <= 8; ++k)
        for (int l = 0; k + l <= 8; ++l) {
            INFO("k=" << k << " l=" << l);
            REQUIRE(exactu0::wick_pairing_oracle(k, l) == (k == l ? 1 : 0));
        }
}

TEST_CASE("wick moment monte carlo covers the limits", "[exactu0]") {
    // E[(J J^T)_{11}]/N = mean of squares = 1 exactly in expectation
    auto e11 = exactu0::wick_moment_mc(1, 1, 50, 1500, 7);
    REQUIRE(e11.ci_lo <= 1.0);
    REQUIRE(e11.ci_hi >= 1.0);

    // odd total degree vanishes
    auto e10 = exactu0::wick_moment_mc(1, 0, 50, 1500, 8);
    REQUIRE(e10.ci_lo <= 0.0);
    REQUIRE(e10.ci_hi >= 0.0);
}

TEST_CASE("higher moments carry their exact finite-N corrections", "[exactu0][slow]") {
    // Hand Wick count for (2,2): E[(J^2 (J^T)^2)_{11}] = sum_{j,a,b}
    // E[J_{1a} J_{aj} J_{1b} J_{bj}] forces a = b, giving N^2 - 1 unit
    // terms plus E[J_11^4] = 3, so the normalized moment is 1 + 2/N^2.
    for (int n : {50, 200}) {
        auto est = exactu0::wick_moment_mc(2, 2, n, 6000, static_cast<std::uint64_t>(n));
        const double exact = 1.0 + 2.0 / (static_cast<double>(n) * n);
        REQUIRE(est.ci_lo <= exact);
        REQUIRE(est.ci_hi >= exact);
    }

    // (2,0): E[(J^2)_{11}] = E[J_11^2] = 1, so the normalized moment is
    // exactly 1/N -- a clean delta_{k,l} + eps/N form with eps = 1.
    for (int n : {50, 200}) {
        auto est = exactu0::wick_moment_mc(2, 0, n, 20000, static_cast<std::uint64_t>(n) + 3);
        const double exact = 1.0 / n;
        REQUIRE(est.ci_lo <= exact);
        REQUIRE(est.ci_hi >= exact);
        REQUIRE(est.ci_lo > 0.25 * exact); // resolved above zero: the 1/N term is real
    }
}

TEST_CASE("lower bound experiment scaffolding", "[exactu0]") {
    // bias-dominated regime: q far from the limit makes N E[W1^2] grow with N
    auto rep = exactu0::lower_bound_experiment({20, 40, 80}, 1.0, 10.0, 40, 13);
    REQUIRE(rep.rows.size() == 3);
    REQUIRE(rep.rows[1].n_times_ew1sq > 1.5 * rep.rows[0].n_times_ew1sq);
    REQUIRE(rep.rows[2].n_times_ew1sq > 1.5 * rep.rows[1].n_times_ew1sq);
    for (const auto& r : rep.rows) REQUIRE(r.mean_q2 > 0.0);
}
