#pragma once

// Self-consistent limit law by damped Picard iteration:
// covariance -> resolvent -> simulate limit paths -> new covariance,
// with common random numbers across iterations so the iteration is a
// deterministic map and the stopping residual is meaningful at finite
// path counts.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "spinchaos/kernels.hpp"
#include "spinchaos/simulate.hpp"

namespace spinchaos {

struct LimitLaw {
    Kernel covariance;          // Symmetric
    Kernel resolvent;           // LowerTriangular, = resolvent_kernel(covariance, beta)
    PathEnsemble sample;        // limit paths from the final iteration
    int iterations = 0;
    double final_residual = 0.0; // relative kernel distance between last two covariances
    bool converged = false;
    std::vector<double> residual_history;
    double damping_final = 0.0;
};

struct SolveOptions {
    int n_paths = 10000;
    double tol = 1e-2;
    int max_iter = 20;
    double damping = 0.5;
    int n_threads = 0;
};

// K^0 comes from the beta = 0 dynamics (no interaction); each Picard
// step simulates the limit SDE with the current resolvent and blends
// the re-estimated covariance in with damping alpha. If the residual
// grows for three consecutive iterations alpha is halved (down to 1/16).
inline LimitLaw solve_limit(const ModelParams& params, std::uint64_t seed,
                            const SolveOptions& opts = {}) {
    LimitLaw law;
    double alpha = opts.damping;
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("solve_limit: damping in (0, 1] required");

    ModelParams free_params = params;
    free_params.beta = 0.0;
    free_params.n_particles = 1;
    Kernel zero_res = constant_kernel(params.grid, 0.0);
    zero_res.shape = KernelShape::LowerTriangular;
    PathEnsemble paths = simulate_limit(free_params, zero_res, opts.n_paths, seed, opts.n_threads);
    Kernel cov = estimate_covariance(paths, 0);
    cov.values = psd_repair(cov.values);

    ModelParams one = params;
    one.n_particles = 1;

    int grow_streak = 0;
    double prev_residual = -1.0;
    for (int it = 0; it < opts.max_iter; ++it) {
        Kernel res = resolvent_kernel(cov, params.beta);
        paths = simulate_limit(one, res, opts.n_paths, seed, opts.n_threads);
        Kernel fresh = estimate_covariance(paths, 0);

        Kernel next = cov;
        next.values = (1.0 - alpha) * cov.values + alpha * fresh.values;
        next.values = psd_repair(next.values);

        const double scale = std::max(kernel_distance(cov, constant_kernel(params.grid, 0.0)),
                                      1e-300);
        const double residual = kernel_distance(next, cov) / scale;
        law.residual_history.push_back(residual);
        cov = next;
        law.iterations = it + 1;
        law.final_residual = residual;

        if (residual < opts.tol) {
            law.converged = true;
            break;
        }
        if (prev_residual >= 0.0 && residual > prev_residual) {
            if (++grow_streak >= 3 && alpha > 1.0 / 16.0) {
                alpha = std::max(alpha * 0.5, 1.0 / 16.0);
                grow_streak = 0;
            }
        } else {
            grow_streak = 0;
        }
        prev_residual = residual;
    }

    law.damping_final = alpha;
    law.covariance = cov;
    law.resolvent = resolvent_kernel(cov, params.beta);
    law.sample = simulate_limit(one, law.resolvent, opts.n_paths, seed, opts.n_threads);
    return law;
}

} // namespace spinchaos
