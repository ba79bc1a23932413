#pragma once

// Model parameters: confining potential, disorder law, initial law,
// scalar parameters and their validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "spinchaos/grid.hpp"
#include "spinchaos/rng.hpp"

namespace spinchaos {

enum class PotentialKind { LogBarrier, Zero, Custom };
enum class DisorderKind  { Gaussian, Rademacher, UniformUnitVar, CenteredBeta };
enum class InitialKind   { PointMassZero, UniformSymmetric, IidCustom };

inline const char* to_string(PotentialKind k) {
    switch (k) {
        case PotentialKind::LogBarrier: return "logbarrier";
        case PotentialKind::Zero:       return "zero";
        case PotentialKind::Custom:     return "custom";
    }
    return "?";
}
inline const char* to_string(DisorderKind k) {
    switch (k) {
        case DisorderKind::Gaussian:       return "gaussian";
        case DisorderKind::Rademacher:     return "rademacher";
        case DisorderKind::UniformUnitVar: return "uniform-unit-var";
        case DisorderKind::CenteredBeta:   return "centered-beta";
    }
    return "?";
}
inline const char* to_string(InitialKind k) {
    switch (k) {
        case InitialKind::PointMassZero:    return "point-mass-zero";
        case InitialKind::UniformSymmetric: return "uniform-symmetric";
        case InitialKind::IidCustom:        return "iid-custom";
    }
    return "?";
}

// Confining potential U on (-A, A). Custom potentials declare the split
// U = U_c (convex) + U_l (Lipschitz gradient) through tabulated
// derivatives with linear interpolation between nodes.
struct PotentialSpec {
    PotentialKind kind = PotentialKind::LogBarrier;

    // Custom only
    std::vector<double> table_x;       // strictly increasing, inside (-A, A)
    std::vector<double> dconvex;       // U_c'(table_x)
    std::vector<double> dlipschitz;    // U_l'(table_x)
    double c_lip = 0.0;

    static PotentialSpec log_barrier() { return PotentialSpec{PotentialKind::LogBarrier, {}, {}, {}, 0.0}; }
    static PotentialSpec zero()        { return PotentialSpec{PotentialKind::Zero, {}, {}, {}, 0.0}; }
};

struct DisorderSpec {
    DisorderKind kind = DisorderKind::Gaussian;
    double t2_constant = 1.0;   // declared sigma^2, carried into reports only
};

struct InitialLawSpec {
    InitialKind kind = InitialKind::PointMassZero;
    double half_width = 0.5;        // UniformSymmetric only; must be < A
    double chaotic_constant = 1.0;  // declared C0, metadata
    double poincare_constant = 1.0; // declared C_P, metadata

    // IidCustom: quantile table of a symmetric law on (-A, A);
    // probs strictly increasing in [0,1], quantiles odd-symmetric.
    std::vector<double> probs;
    std::vector<double> quantiles;
};

struct ModelParams {
    double beta = 1.0;        // inverse temperature, >= 0
    double big_a = 1.0;       // domain half-width A, > 0
    double horizon = 1.0;     // T, > 0
    int    n_particles = 1;   // N, >= 1
    PotentialSpec  potential;
    DisorderSpec   disorder;
    InitialLawSpec initial;
    TimeGrid       grid{1.0, 200};
};

namespace detail {
inline double interp_table(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    if (xs.empty()) return 0.0;
    if (x <= xs.front()) return ys.front();
    if (x >= xs.back()) return ys.back();
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    std::size_t hi = static_cast<std::size_t>(it - xs.begin());
    std::size_t lo = hi - 1;
    double w = (x - xs[lo]) / (xs[hi] - xs[lo]);
    return (1.0 - w) * ys[lo] + w * ys[hi];
}
} // namespace detail

// U'(x). Odd in x for all supported kinds.
inline double potential_grad(const PotentialSpec& spec, double x, double big_a) {
    switch (spec.kind) {
        case PotentialKind::Zero:
            return 0.0;
        case PotentialKind::LogBarrier: {
            if (std::abs(x) >= big_a)
                throw std::domain_error("potential_grad: |x| >= A under LogBarrier");
            // U(x) = -log(A^2 - x^2)
            return 2.0 * x / (big_a * big_a - x * x);
        }
        case PotentialKind::Custom:
            return detail::interp_table(spec.table_x, spec.dconvex, x) +
                   detail::interp_table(spec.table_x, spec.dlipschitz, x);
    }
    return 0.0;
}

// Single draw from the disorder entry law: mean 0, variance 1 for every kind.
inline double disorder_entry(const DisorderSpec& spec, const rng::Stream& s, std::uint64_t counter) {
    switch (spec.kind) {
        case DisorderKind::Gaussian:
            return s.normal(counter);
        case DisorderKind::Rademacher:
            return (s.u64(counter) & 1ull) ? 1.0 : -1.0;
        case DisorderKind::UniformUnitVar:
            // uniform on [-sqrt(3), sqrt(3)] has variance exactly 1
            return (2.0 * s.uniform(counter) - 1.0) * 1.7320508075688772935;
        case DisorderKind::CenteredBeta: {
            // Beta(2,2) is the median of three uniforms; centered and
            // rescaled by sqrt(20) to unit variance, support [-sqrt(5), sqrt(5)]
            double u0 = s.uniform(3 * counter);
            double u1 = s.uniform(3 * counter + 1);
            double u2 = s.uniform(3 * counter + 2);
            double med = std::max(std::min(u0, u1), std::min(std::max(u0, u1), u2));
            return (med - 0.5) * 4.4721359549995793928;
        }
    }
    return 0.0;
}

// Single draw from the initial law.
inline double initial_draw(const InitialLawSpec& spec, const rng::Stream& s, std::uint64_t counter) {
    switch (spec.kind) {
        case InitialKind::PointMassZero:
            return 0.0;
        case InitialKind::UniformSymmetric:
            return (2.0 * s.uniform(counter) - 1.0) * spec.half_width;
        case InitialKind::IidCustom:
            return detail::interp_table(spec.probs, spec.quantiles, s.uniform(counter));
    }
    return 0.0;
}

// Report-style validation: list of violated invariants, empty means valid.
inline std::vector<std::string> validate_params(const ModelParams& p) {
    std::vector<std::string> v;
    if (!(p.beta >= 0.0)) v.push_back("beta >= 0");
    if (!(p.big_a > 0.0)) v.push_back("big_a > 0");
    if (!(p.horizon > 0.0)) v.push_back("horizon > 0");
    if (p.n_particles < 1) v.push_back("n_particles >= 1");
    if (p.grid.horizon != p.horizon) v.push_back("grid covers [0, horizon] exactly");
    if (p.grid.n_steps < 1) v.push_back("grid has >= 1 step");

    if (p.potential.kind == PotentialKind::Custom) {
        const auto& ps = p.potential;
        if (ps.table_x.size() < 2 || ps.table_x.size() != ps.dconvex.size() ||
            ps.table_x.size() != ps.dlipschitz.size())
            v.push_back("custom potential declares matching derivative tables");
        if (!(ps.c_lip > 0.0)) v.push_back("custom potential declares C_Lip > 0");
        if (!std::is_sorted(ps.table_x.begin(), ps.table_x.end()))
            v.push_back("custom potential table_x strictly increasing");
    }
    if (p.potential.kind == PotentialKind::Zero) {
        // The unconfined model is supported only where its exact linear
        // analysis applies: started at the origin, with one of the declared
        // unit-variance entry laws.
        if (p.initial.kind != InitialKind::PointMassZero)
            v.push_back("zero potential requires point-mass-zero initial law");
    }

    switch (p.initial.kind) {
        case InitialKind::UniformSymmetric:
            if (!(p.initial.half_width > 0.0) || !(p.initial.half_width < p.big_a))
                v.push_back("supported in (-A, A)");
            break;
        case InitialKind::IidCustom: {
            const auto& is = p.initial;
            if (is.probs.size() < 2 || is.probs.size() != is.quantiles.size()) {
                v.push_back("iid-custom initial law declares a quantile table");
                break;
            }
            if (!std::is_sorted(is.probs.begin(), is.probs.end()) ||
                is.probs.front() < 0.0 || is.probs.back() > 1.0)
                v.push_back("iid-custom probs increasing within [0,1]");
            double amax = 0.0;
            bool symmetric = true;
            const std::size_t n = is.quantiles.size();
            for (std::size_t i = 0; i < n; ++i) {
                amax = std::max(amax, std::abs(is.quantiles[i]));
                // quantile of u and 1-u must be opposite for a symmetric law
                double u = is.probs[i];
                double q_mirror = detail::interp_table(is.probs, is.quantiles, 1.0 - u);
                if (std::abs(q_mirror + is.quantiles[i]) > 1e-9 * std::max(1.0, amax))
                    symmetric = false;
            }
            if (amax >= p.big_a) v.push_back("supported in (-A, A)");
            if (!symmetric) v.push_back("symmetric around the origin");
            break;
        }
        case InitialKind::PointMassZero:
            break;
    }
    return v;
}

// Defaults used by the experiment drivers when a config leaves the
// initial law unspecified: the unconfined model starts at the origin,
// confined models start uniform on half the domain.
inline InitialLawSpec default_initial_law(const PotentialSpec& pot, double big_a) {
    InitialLawSpec init;
    if (pot.kind == PotentialKind::Zero) {
        init.kind = InitialKind::PointMassZero;
    } else {
        init.kind = InitialKind::UniformSymmetric;
        init.half_width = 0.5 * big_a;
    }
    return init;
}

} // namespace spinchaos
