#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "spinchaos/metrics.hpp"

using namespace spinchaos;

namespace {

// brute-force W1 for tiny point sets: minimum over all permutations
double w1_bruteforce(const SampleSet& a, const SampleSet& b) {
    std::vector<std::size_t> perm(a.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
        double acc = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i)
            acc += spinchaos::detail::euclid(a.points[i], b.points[perm[i]]);
        best = std::min(best, acc);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(a.size());
}

std::vector<double> gaussian_sample(double sigma, int n, std::uint64_t seed) {
    auto s = rng::stream(seed, rng::Tag::scratch);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = sigma * s.normal(static_cast<std::uint64_t>(i));
    return out;
}

} // namespace

TEST_CASE("w1 in one dimension: frozen small cases", "[metrics]") {
    REQUIRE(wasserstein1_1d({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 0.0);
    REQUIRE(wasserstein1_1d({0.0, 0.0}, {1.0, 1.0}) == 1.0);
    // two couplings of {0,1} vs {0,3}: costs 1 and 2, optimum 1
    REQUIRE(wasserstein1_1d({0.0, 1.0}, {0.0, 3.0}) == 1.0);
}

TEST_CASE("w1 is a metric on equal-size sets", "[metrics]") {
    auto s = rng::stream(31, rng::Tag::scratch);
    std::uint64_t ctr = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> a(8), b(8), c(8);
        for (int i = 0; i < 8; ++i) {
            a[i] = s.normal(ctr++);
            b[i] = s.normal(ctr++);
            c[i] = s.normal(ctr++);
        }
        const double ab = wasserstein1_1d(a, b);
        const double ba = wasserstein1_1d(b, a);
        const double ac = wasserstein1_1d(a, c);
        const double cb = wasserstein1_1d(c, b);
        REQUIRE(ab == ba);
        REQUIRE(ab <= ac + cb + 1e-12);
    }
}

TEST_CASE("w1 scales exactly with dyadic factors", "[metrics]") {
    auto a = gaussian_sample(1.0, 200, 1);
    auto b = gaussian_sample(1.3, 200, 2);
    const double base = wasserstein1_1d(a, b);
    for (double lam : {2.0, 4.0, 0.5}) {
        auto as = a, bs = b;
        for (double& x : as) x *= lam;
        for (double& x : bs) x *= lam;
        REQUIRE(wasserstein1_1d(as, bs) == lam * base);
    }
}

TEST_CASE("assignment w1 matches the 1-d formula and brute force", "[metrics]") {
    // d = 1: optimal matching is monotone
    auto a1 = SampleSet::from_scalars(gaussian_sample(1.0, 64, 3));
    auto b1 = SampleSet::from_scalars(gaussian_sample(0.7, 64, 4));
    REQUIRE(wasserstein1_kd(a1, b1) == Catch::Approx(wasserstein1_1d(a1, b1)).epsilon(1e-13));

    // shuffled copy has distance zero
    SampleSet a2, b2;
    auto s = rng::stream(77, rng::Tag::scratch);
    for (int i = 0; i < 16; ++i)
        a2.points.push_back({s.normal(2 * static_cast<std::uint64_t>(i)),
                             s.normal(2 * static_cast<std::uint64_t>(i) + 1)});
    b2.points = a2.points;
    std::reverse(b2.points.begin(), b2.points.end());
    REQUIRE(wasserstein1_kd(a2, b2) <= 1e-14);

    // tiny planar sets against the permutation oracle
    for (std::uint64_t trial = 0; trial < 50; ++trial) {
        SampleSet a3, b3;
        auto st = rng::stream(trial, rng::Tag::scratch, 5);
        std::uint64_t ctr = 0;
        for (int i = 0; i < 3; ++i) {
            a3.points.push_back({st.normal(ctr++), st.normal(ctr++)});
            b3.points.push_back({st.normal(ctr++), st.normal(ctr++)});
        }
        REQUIRE(wasserstein1_kd(a3, b3) ==
                Catch::Approx(w1_bruteforce(a3, b3)).epsilon(1e-12));
    }
}

TEST_CASE("assignment w1 dominates the mean gap", "[metrics]") {
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        SampleSet a, b;
        auto st = rng::stream(trial, rng::Tag::scratch, 6);
        std::uint64_t ctr = 0;
        double mean_gap = 0.0;
        for (int i = 0; i < 32; ++i) {
            a.points.push_back({st.normal(ctr++), st.normal(ctr++)});
            b.points.push_back({st.normal(ctr++) + 0.5, st.normal(ctr++)});
        }
        std::vector<double> ma(2, 0.0), mb(2, 0.0);
        for (int i = 0; i < 32; ++i)
            for (int k = 0; k < 2; ++k) {
                ma[k] += a.points[i][k] / 32.0;
                mb[k] += b.points[i][k] / 32.0;
            }
        mean_gap = spinchaos::detail::euclid(ma, mb);
        REQUIRE(wasserstein1_kd(a, b) >= mean_gap - 1e-12);
    }
}

TEST_CASE("gaussian w1 closed form and sampling cross-check", "[metrics]") {
    REQUIRE(gaussian_w1(1.7, 1.7) == 0.0);
    REQUIRE(gaussian_w1(1.0, 2.0) == Catch::Approx(0.7978845608028654).epsilon(1e-12));

    // delta at zero vs standard normal, 1e5 samples
    auto samples = gaussian_sample(1.0, 100000, 9);
    std::vector<double> zeros(samples.size(), 0.0);
    const double sampled = wasserstein1_1d(zeros, samples);
    REQUIRE(sampled == Catch::Approx(gaussian_w1(0.0, 1.0)).epsilon(0.01));
}

TEST_CASE("gaussian w1 matches sampled w1 for random sigma pairs", "[metrics][slow]") {
    // common random numbers keep the finite-sample noise (~ sigma/sqrt(n))
    // out of the comparison; the sorted-sample W1 is then the closed form
    // times the empirical mean of |Z|
    auto s = rng::stream(123, rng::Tag::scratch);
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const double s1 = 0.5 + 2.0 * s.uniform(2 * trial);
        const double s2 = 0.5 + 2.0 * s.uniform(2 * trial + 1);
        if (std::abs(s1 - s2) < 0.05) continue;
        auto z = gaussian_sample(1.0, 100000, 100 + trial);
        auto a = z, b = z;
        for (double& x : a) x *= s1;
        for (double& x : b) x *= s2;
        REQUIRE(wasserstein1_1d(a, b) == Catch::Approx(gaussian_w1(s1, s2)).epsilon(0.01));
    }
}

TEST_CASE("rate fit recovers synthetic power laws", "[metrics]") {
    std::vector<double> xs = {64, 128, 256, 512, 1024};
    std::vector<double> ys;
    for (double x : xs) ys.push_back(1.0 / std::sqrt(x));
    auto fit = fit_rate(xs, ys);
    REQUIRE(fit.slope == Catch::Approx(-0.5).margin(1e-12));
    REQUIRE(fit.r_squared == Catch::Approx(1.0).margin(1e-12));

    ys.assign(xs.size(), 0.37);
    fit = fit_rate(xs, ys);
    REQUIRE(fit.slope == Catch::Approx(0.0).margin(1e-12));

    ys.clear();
    for (std::size_t i = 0; i < xs.size(); ++i)
        ys.push_back((1.0 / xs[i]) * (1.0 + 0.01 * std::sin(static_cast<double>(i))));
    fit = fit_rate(xs, ys);
    REQUIRE(fit.slope >= -1.05);
    REQUIRE(fit.slope <= -0.95);
    REQUIRE(fit.ci_lo <= fit.slope);
    REQUIRE(fit.ci_hi >= fit.slope);

    REQUIRE_THROWS_AS(fit_rate({1, 2, 3}, {1, 1, 1}), std::invalid_argument);
    REQUIRE_THROWS_AS(fit_rate({1, 2, 3, 4}, {1, 1, -1, 1}), std::invalid_argument);
}

TEST_CASE("unequal sizes are resolved by seeded subsampling", "[metrics]") {
    auto a = gaussian_sample(1.0, 500, 11);
    auto b = gaussian_sample(1.0, 300, 12);
    const double d1 = wasserstein1_1d(a, b, 5);
    const double d2 = wasserstein1_1d(a, b, 5);
    REQUIRE(d1 == d2); // deterministic resample
}
