#pragma once

// Distances between sample sets, rate fits, and bootstrap confidence
// intervals. W1 in one dimension is the exact sorted-sample formula;
// in d dimensions it is an exact optimal assignment (shortest
// augmenting path), capped at max_n points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "spinchaos/rng.hpp"

namespace spinchaos {

struct SampleSet {
    // points[i] has dimension d; weights are uniform
    std::vector<std::vector<double>> points;

    std::size_t size() const { return points.size(); }
    int dim() const { return points.empty() ? 0 : static_cast<int>(points[0].size()); }

    static SampleSet from_scalars(const std::vector<double>& xs) {
        SampleSet s;
        s.points.reserve(xs.size());
        for (double x : xs) s.points.push_back({x});
        return s;
    }
    std::vector<double> scalars() const {
        std::vector<double> out;
        out.reserve(points.size());
        for (const auto& p : points) out.push_back(p.at(0));
        return out;
    }
};

// Seeded subsample without replacement down to m points (Fisher-Yates prefix).
inline std::vector<double> subsample(const std::vector<double>& xs, std::size_t m,
                                     std::uint64_t seed) {
    if (m >= xs.size()) return xs;
    std::vector<double> pool = xs;
    const auto s = rng::stream(seed, rng::Tag::subsample);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t j = i + static_cast<std::size_t>(s.u64(i) % (pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(m);
    return pool;
}

// Exact W1 between equal-weight empirical measures on R:
// mean absolute difference of order statistics. Unequal sizes are
// resolved by seeded subsampling of the larger set.
inline double wasserstein1_1d(std::vector<double> a, std::vector<double> b,
                              std::uint64_t resample_seed = 0) {
    if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1_1d: empty input");
    if (a.size() != b.size()) {
        const std::size_t m = std::min(a.size(), b.size());
        a = subsample(a, m, resample_seed);
        b = subsample(b, m, resample_seed + 1);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

inline double wasserstein1_1d(const SampleSet& a, const SampleSet& b,
                              std::uint64_t resample_seed = 0) {
    return wasserstein1_1d(a.scalars(), b.scalars(), resample_seed);
}

namespace detail {

// Jonker-Volgenant style shortest augmenting path assignment.
// cost(i, j) callable; returns minimal total cost of a perfect matching.
template <typename CostFn>
inline double solve_assignment(std::size_t n, CostFn&& cost) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    // potentials and matching follow the standard O(n^3) formulation
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0); // match[j] = row assigned to column j (1-based)
    std::vector<std::size_t> way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            std::size_t i0 = match[j0], j1 = 0;
            double delta = inf;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) { u[match[j]] += delta; v[j] -= delta; }
                else         { minv[j] -= delta; }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    for (std::size_t j = 1; j <= n; ++j)
        if (match[j] != 0) total += cost(match[j] - 1, j - 1);
    return total;
}

inline double euclid(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

// Exact W1 between equal-size empirical measures on R^d: optimal
// assignment cost / n with Euclidean ground distance.
inline double wasserstein1_kd(const SampleSet& a, const SampleSet& b,
                              std::size_t max_n = 4096) {
    if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("wasserstein1_kd: empty input");
    if (a.size() != b.size()) throw std::invalid_argument("wasserstein1_kd: equal sizes required");
    if (a.size() > max_n) throw std::invalid_argument("wasserstein1_kd: size cap exceeded");
    if (a.dim() != b.dim()) throw std::invalid_argument("wasserstein1_kd: dimension mismatch");
    const std::size_t n = a.size();
    if (a.dim() == 1) return wasserstein1_1d(a, b); // monotone matching is optimal on R

    std::vector<double> costs(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            costs[i * n + j] = detail::euclid(a.points[i], b.points[j]);
    const double total =
        detail::solve_assignment(n, [&](std::size_t i, std::size_t j) { return costs[i * n + j]; });
    return total / static_cast<double>(n);
}

// W1 between centered Gaussians: sqrt(2/pi) |sigma1 - sigma2|.
inline double gaussian_w1(double sigma1, double sigma2) {
    if (sigma1 < 0.0 || sigma2 < 0.0) throw std::invalid_argument("gaussian_w1: sigma >= 0");
    return std::sqrt(2.0 / 3.14159265358979323846) * std::abs(sigma1 - sigma2);
}

struct RateFit {
    std::vector<double> xs;
    std::vector<double> ys;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double ci_lo = 0.0; // bootstrap slope interval
    double ci_hi = 0.0;
};

namespace detail {
inline void ols_loglog(const std::vector<double>& lx, const std::vector<double>& ly,
                       double& slope, double& intercept, double& r2) {
    const std::size_t n = lx.size();
    double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
    double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    slope = sxx > 0.0 ? sxy / sxx : 0.0;
    intercept = my - slope * mx;
    r2 = (sxx > 0.0 && syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 1.0;
}
} // namespace detail

// Ordinary least squares of log y on log x, with a point-resampling
// bootstrap interval for the slope.
inline RateFit fit_rate(const std::vector<double>& xs, const std::vector<double>& ys,
                        std::uint64_t seed = 12345, int n_boot = 1000) {
    if (xs.size() != ys.size() || xs.size() < 4)
        throw std::invalid_argument("fit_rate: >= 4 (x, y) points required");
    for (std::size_t i = 0; i + 1 < xs.size(); ++i)
        if (!(xs[i] < xs[i + 1])) throw std::invalid_argument("fit_rate: xs strictly increasing");
    for (double y : ys)
        if (!(y > 0.0)) throw std::invalid_argument("fit_rate: ys must be positive");

    RateFit fit;
    fit.xs = xs;
    fit.ys = ys;
    const std::size_t n = xs.size();
    std::vector<double> lx(n), ly(n);
    for (std::size_t i = 0; i < n; ++i) {
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    detail::ols_loglog(lx, ly, fit.slope, fit.intercept, fit.r_squared);

    const auto s = rng::stream(seed, rng::Tag::bootstrap);
    std::vector<double> slopes;
    slopes.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> bx(n), by(n);
    std::uint64_t ctr = 0;
    for (int b = 0; b < n_boot; ++b) {
        // resample points; skip degenerate draws with < 2 distinct abscissae
        bool ok = false;
        for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t j = static_cast<std::size_t>(s.u64(ctr++) % n);
                bx[i] = lx[j];
                by[i] = ly[j];
            }
            ok = *std::max_element(bx.begin(), bx.end()) >
                 *std::min_element(bx.begin(), bx.end());
        }
        if (!ok) continue;
        double sl, ic, r2;
        detail::ols_loglog(bx, by, sl, ic, r2);
        slopes.push_back(sl);
    }
    std::sort(slopes.begin(), slopes.end());
    if (!slopes.empty()) {
        fit.ci_lo = slopes[static_cast<std::size_t>(0.025 * (slopes.size() - 1))];
        fit.ci_hi = slopes[static_cast<std::size_t>(0.975 * (slopes.size() - 1))];
    }
    return fit;
}

struct BootstrapCI {
    double estimate = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
};

// Percentile bootstrap for the mean of a sample.
inline BootstrapCI bootstrap_mean_ci(const std::vector<double>& xs, std::uint64_t seed,
                                     int n_boot = 1000) {
    if (xs.empty()) throw std::invalid_argument("bootstrap_mean_ci: empty sample");
    BootstrapCI ci;
    ci.estimate = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    const auto s = rng::stream(seed, rng::Tag::bootstrap);
    std::vector<double> means;
    means.reserve(static_cast<std::size_t>(n_boot));
    std::uint64_t ctr = 0;
    for (int b = 0; b < n_boot; ++b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
            acc += xs[static_cast<std::size_t>(s.u64(ctr++) % xs.size())];
        means.push_back(acc / xs.size());
    }
    std::sort(means.begin(), means.end());
    ci.lo = means[static_cast<std::size_t>(0.025 * (means.size() - 1))];
    ci.hi = means[static_cast<std::size_t>(0.975 * (means.size() - 1))];
    return ci;
}

// Percentile bootstrap for W1 between two scalar pools, resampling both.
inline BootstrapCI bootstrap_w1_ci(const std::vector<double>& a, const std::vector<double>& b,
                                   std::uint64_t seed, int n_boot = 1000) {
    BootstrapCI ci;
    ci.estimate = wasserstein1_1d(a, b, seed);
    const auto s = rng::stream(seed, rng::Tag::bootstrap, 1);
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> ra(a.size()), rb(b.size());
    std::uint64_t ctr = 0;
    for (int k = 0; k < n_boot; ++k) {
        for (std::size_t i = 0; i < a.size(); ++i)
            ra[i] = a[static_cast<std::size_t>(s.u64(ctr++) % a.size())];
        for (std::size_t i = 0; i < b.size(); ++i)
            rb[i] = b[static_cast<std::size_t>(s.u64(ctr++) % b.size())];
        vals.push_back(wasserstein1_1d(ra, rb, seed));
    }
    std::sort(vals.begin(), vals.end());
    ci.lo = vals[static_cast<std::size_t>(0.025 * (vals.size() - 1))];
    ci.hi = vals[static_cast<std::size_t>(0.975 * (vals.size() - 1))];
    return ci;
}

} // namespace spinchaos
