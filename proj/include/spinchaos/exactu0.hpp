#pragma once

// The exactly solvable unconfined model (zero potential, Gaussian
// disorder, started at the origin): quenched single-spin variance
// q_t^2(J) through matrix exponentials, the limit variance series,
// Monte Carlo probes of normalized matrix moments, an exhaustive
// pairing oracle for their N -> infinity coefficients, and the
// W1 lower-bound experiment.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "spinchaos/disorder.hpp"
#include "spinchaos/metrics.hpp"
#include "spinchaos/rng.hpp"
#include "spinchaos/thread_pool.hpp"

namespace spinchaos::exactu0 {

// Scaling-and-squaring matrix exponential with a (6,6) Pade approximant.
inline Eigen::MatrixXd expm_pade66(const Eigen::MatrixXd& a) {
    // b_k for the degree-6 diagonal Pade approximant of exp
    static const double b[7] = {1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0,
                                1.0 / 15840.0, 1.0 / 665280.0};
    const int n = static_cast<int>(a.rows());
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff(); // inf-norm
    int squarings = 0;
    double scale = 1.0;
    // theta for Pade(6,6) in double precision; 0.25 keeps a safety margin
    while (norm * scale > 0.25 && squarings < 60) {
        scale *= 0.5;
        ++squarings;
    }
    const Eigen::MatrixXd as = a * scale;
    const Eigen::MatrixXd a2 = as * as;
    const Eigen::MatrixXd a4 = a2 * a2;
    const Eigen::MatrixXd a6 = a4 * a2;
    const Eigen::MatrixXd even =
        b[0] * Eigen::MatrixXd::Identity(n, n) + b[2] * a2 + b[4] * a4 + b[6] * a6;
    const Eigen::MatrixXd odd = as * (b[1] * Eigen::MatrixXd::Identity(n, n) + b[3] * a2 + b[5] * a4);
    // exp(as) ~ (even - odd)^{-1} (even + odd)
    Eigen::MatrixXd num = even + odd;
    Eigen::MatrixXd den = even - odd;
    Eigen::MatrixXd e = Eigen::PartialPivLU<Eigen::MatrixXd>(den).solve(num);
    for (int s = 0; s < squarings; ++s) e = e * e;
    return e;
}

// q_t^2(J) = (int_0^t e^{s J / sqrt(N)} e^{s J^T / sqrt(N)} ds)_{11}.
//
// The integrand at node s_k is |e_1^T E^k|^2 where E = e^{h J / sqrt(N)}
// is computed once, so only one matrix exponential and n_sub row-matrix
// products are needed. Quadrature is trapezoidal with one Richardson
// extrapolation level (the half-resolution rule comes free from the even
// nodes), which reaches the 1e-6 relative accuracy target at n_sub = 256.
inline double quenched_variance(const DisorderMatrix& mat, double t, int n_sub = 256) {
    if (!(t > 0.0)) throw std::invalid_argument("quenched_variance: t > 0 required");
    if (n_sub < 16) throw std::invalid_argument("quenched_variance: n_sub >= 16 required");
    if (n_sub % 2 != 0) ++n_sub;
    const int n = mat.n();
    const double root_n = std::sqrt(static_cast<double>(n));

    // overflow guard: exp(2 t ||J||/sqrt(N)) must stay representable
    auto norm_est = operator_norm_full(mat.entries, 1e-2, 500);
    const double exponent = 2.0 * t * norm_est.value / root_n;
    if (exponent > 600.0)
        throw std::overflow_error("quenched_variance: t*||J||_op/sqrt(N) exceeds safety cap");

    const double h = t / n_sub;
    const Eigen::MatrixXd e_step = expm_pade66(mat.entries * (h / root_n));

    Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(n);
    v(0) = 1.0;
    std::vector<double> f(static_cast<std::size_t>(n_sub) + 1);
    f[0] = 1.0; // |e_1|^2
    for (int k = 1; k <= n_sub; ++k) {
        v = v * e_step;
        f[static_cast<std::size_t>(k)] = v.squaredNorm();
    }
    auto trapz = [&](int stride) {
        double acc = 0.5 * (f[0] + f[static_cast<std::size_t>(n_sub)]);
        for (int k = stride; k < n_sub; k += stride) acc += f[static_cast<std::size_t>(k)];
        return acc * h * stride;
    };
    const double fine = trapz(1);
    const double coarse = trapz(2);
    return (4.0 * fine - coarse) / 3.0;
}

// Limit variance series q_bar_t^2 = sum_k t^{2k+1} / ((2k+1) (k!)^2),
// truncated when the next term drops below tol times the partial sum.
inline double limit_variance_series(double t, double tol = 1e-12) {
    if (!(t > 0.0)) throw std::invalid_argument("limit_variance_series: t > 0 required");
    double term = t; // k = 0
    double sum = term;
    for (int k = 1; k < 500; ++k) {
        term *= t * t * (2.0 * k - 1.0) / ((2.0 * k + 1.0) * k * k);
        sum += term;
        const double next = term * t * t * (2.0 * k + 1.0) /
                            ((2.0 * k + 3.0) * (k + 1.0) * (k + 1.0));
        if (next < tol * sum) break;
    }
    return sum;
}

struct MomentEstimate {
    double estimate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    int n_samples = 0;
};

// Monte Carlo estimate of E[(J^k (J^T)^l)_{11}] / N^{(k+l)/2} over
// Gaussian disorder draws, with a normal-approximation CI at z_level
// standard errors (1.96 for the usual 95% interval).
inline MomentEstimate wick_moment_mc(int k, int l, int n, int n_samples, std::uint64_t seed,
                                     double z_level = 1.959963984540054) {
    if (k < 0 || l < 0 || k + l > 8)
        throw std::invalid_argument("wick_moment_mc: k + l <= 8 required");
    DisorderSpec gauss{DisorderKind::Gaussian, 1.0};
    std::vector<double> vals(static_cast<std::size_t>(n_samples));
    parallel_for(vals.size(), 0, [&](std::size_t i) {
        const auto m = sample_disorder(gauss, n, rng::derive_token(seed, i, rng::Tag::disorder));
        Eigen::VectorXd u = Eigen::VectorXd::Zero(n), v = Eigen::VectorXd::Zero(n);
        u(0) = 1.0;
        v(0) = 1.0;
        for (int p = 0; p < k; ++p) u = m.entries.transpose() * u;
        for (int p = 0; p < l; ++p) v = m.entries.transpose() * v;
        vals[i] = u.dot(v) / std::pow(static_cast<double>(n), 0.5 * (k + l));
    });
    MomentEstimate out;
    out.n_samples = n_samples;
    double mean = 0.0;
    for (double x : vals) mean += x;
    mean /= n_samples;
    double var = 0.0;
    for (double x : vals) var += (x - mean) * (x - mean);
    var /= std::max(1, n_samples - 1);
    const double half = z_level * std::sqrt(var / n_samples);
    out.estimate = mean;
    out.ci_lo = mean - half;
    out.ci_hi = mean + half;
    return out;
}

namespace detail {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
    }
    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
    int components(int n) {
        int c = 0;
        for (int i = 0; i < n; ++i)
            if (find(i) == i) ++c;
        return c;
    }
};

// Enumerate all pairings of `free` (indices into the vertex list),
// calling visit(pairs) for each complete pairing.
template <typename Visit>
inline void enumerate_pairings(std::vector<int>& free, std::vector<std::pair<int, int>>& pairs,
                               Visit&& visit) {
    if (free.empty()) {
        visit(pairs);
        return;
    }
    const int first = free.front();
    for (std::size_t j = 1; j < free.size(); ++j) {
        std::vector<int> rest;
        rest.reserve(free.size() - 2);
        for (std::size_t k = 1; k < free.size(); ++k)
            if (k != j) rest.push_back(free[k]);
        pairs.emplace_back(first, free[j]);
        enumerate_pairings(rest, pairs, visit);
        pairs.pop_back();
    }
}

} // namespace detail

// Exhaustive check of the pairing combinatorics behind the moment limit.
//
// Vertices are the two index chains v_1..v_{k+1} and u_1..u_{l+1}; a
// pairing of the k+l interior letters induces a tri-colored 2-regular
// multigraph (pair edges, shifted pair edges, and the two boundary
// edges joining the chain ends). The N -> infinity coefficient of the
// normalized moment is the number of pairings whose graph attains the
// maximal component count (k+l)/2 + 1. Returns that count, computed by
// enumeration; it equals 1 exactly when k = l.
inline int wick_pairing_oracle(int k, int l) {
    if (k < 0 || l < 0 || k + l > 8)
        throw std::invalid_argument("wick_pairing_oracle: k + l <= 8 required");
    const int m = k + l;
    if (m % 2 != 0) return 0; // no pairings of an odd set
    const int n_vertices = k + l + 2;
    // ids: v_i -> i-1 (0..k), u_j -> k+1 + (j-1) (k+1..k+l+1)
    const int v1 = 0, vk1 = k, u1 = k + 1, ul1 = k + 1 + l;

    std::vector<int> interior;
    for (int i = 0; i < k; ++i) interior.push_back(i);          // v_1..v_k
    for (int j = 0; j < l; ++j) interior.push_back(u1 + j);     // u_1..u_l

    const int max_components = m / 2 + 1;
    int maximizers = 0;
    std::vector<std::pair<int, int>> pairs;
    detail::enumerate_pairings(interior, pairs, [&](const std::vector<std::pair<int, int>>& pp) {
        detail::UnionFind uf(n_vertices);
        for (const auto& [a, b] : pp) {
            uf.unite(a, b);         // pair edge
            uf.unite(a + 1, b + 1); // shifted edge (chain successor)
        }
        uf.unite(v1, u1);   // boundary
        uf.unite(vk1, ul1); // boundary
        if (uf.components(n_vertices) == max_components) ++maximizers;
    });
    return maximizers;
}

struct LowerBoundRow {
    int n = 0;
    double mean_q2 = 0.0;
    double var_q2 = 0.0;
    double n_times_ew1sq = 0.0;
    double ci_lo = 0.0; // CI of N * E[W1^2]
    double ci_hi = 0.0;
};

struct LowerBoundReport {
    double t = 0.0;
    double q = 0.0;
    int n_disorder = 0;
    std::vector<LowerBoundRow> rows;
    double min_over_grid = 0.0;
    double median_over_grid = 0.0;
    bool bounded_away_from_zero = false; // min >= 0.5 * median
};

// For each N: average (2/pi)(q_t(J) - q)^2 over Gaussian disorder draws
// and report N * E[W1^2]. The C/N signature of the lower bound shows up
// as this quantity staying bounded away from zero across the N grid.
inline LowerBoundReport lower_bound_experiment(const std::vector<int>& n_grid, double t, double q,
                                               int n_disorder, std::uint64_t seed,
                                               int n_threads = 0) {
    if (!(t > 0.0) || !(q > 0.0))
        throw std::invalid_argument("lower_bound_experiment: t, q > 0 required");
    LowerBoundReport rep;
    rep.t = t;
    rep.q = q;
    rep.n_disorder = n_disorder;
    DisorderSpec gauss{DisorderKind::Gaussian, 1.0};

    for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
        const int n = n_grid[gi];
        std::vector<double> q2s(static_cast<std::size_t>(n_disorder));
        parallel_for(q2s.size(), n_threads, [&](std::size_t d) {
            const auto tok =
                rng::derive_token(seed, (gi << 32) + d, rng::Tag::disorder);
            const auto mat = sample_disorder(gauss, n, tok);
            q2s[d] = quenched_variance(mat, t);
        });
        std::vector<double> w1sq(q2s.size());
        double mean_q2 = 0.0;
        for (std::size_t d = 0; d < q2s.size(); ++d) {
            const double qt = std::sqrt(q2s[d]);
            w1sq[d] = (2.0 / 3.14159265358979323846) * (qt - q) * (qt - q);
            mean_q2 += q2s[d];
        }
        mean_q2 /= static_cast<double>(q2s.size());
        double var_q2 = 0.0;
        for (double x : q2s) var_q2 += (x - mean_q2) * (x - mean_q2);
        var_q2 /= std::max<std::size_t>(1, q2s.size() - 1);

        auto ci = bootstrap_mean_ci(w1sq, seed + gi);
        LowerBoundRow row;
        row.n = n;
        row.mean_q2 = mean_q2;
        row.var_q2 = var_q2;
        row.n_times_ew1sq = n * ci.estimate;
        row.ci_lo = n * ci.lo;
        row.ci_hi = n * ci.hi;
        rep.rows.push_back(row);
    }

    std::vector<double> vals;
    for (const auto& r : rep.rows) vals.push_back(r.n_times_ew1sq);
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    rep.min_over_grid = sorted.front();
    rep.median_over_grid = sorted[sorted.size() / 2];
    rep.bounded_away_from_zero = rep.min_over_grid >= 0.5 * rep.median_over_grid;
    return rep;
}

} // namespace spinchaos::exactu0
