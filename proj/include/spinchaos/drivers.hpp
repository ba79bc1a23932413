#pragma once

// Shared machinery for the experiment drivers: precomputed Brownian
// blocks (common random numbers across disorder draws and between
// quenched and limit runs), a dyadic coarsening adapter for grid
// refinement studies, a replica-batched quenched stepper that records
// only tracked marginals, and the exact-Euler propagator fast path for
// the unconfined linear dynamics.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "spinchaos/simulate.hpp"

namespace spinchaos {

// All increments z(r, p, m) for r < n_replicas, p < n_particles,
// m < n_steps, materialized once from the counter-based stream.
struct NoiseBlock {
    std::uint64_t seed = 0;
    int n_replicas = 0, n_particles = 0, n_steps = 0;
    std::vector<double> z;

    void build(std::uint64_t seed_, int n_replicas_, int n_particles_, int n_steps_,
               int n_threads = 0) {
        seed = seed_;
        n_replicas = n_replicas_;
        n_particles = n_particles_;
        n_steps = n_steps_;
        z.resize(static_cast<std::size_t>(n_replicas) * n_particles * n_steps);
        parallel_for(static_cast<std::size_t>(n_replicas), n_threads, [&](std::size_t r) {
            for (int p = 0; p < n_particles; ++p) {
                const auto s = rng::stream(seed, rng::Tag::brownian, r, static_cast<std::uint64_t>(p));
                double* dst = &z[(r * static_cast<std::size_t>(n_particles) + p) *
                                 static_cast<std::size_t>(n_steps)];
                for (int m = 0; m < n_steps; ++m) dst[m] = s.normal(static_cast<std::uint64_t>(m));
            }
        });
    }

    double at(int r, int p, int m) const {
        return z[(static_cast<std::size_t>(r) * n_particles + p) * n_steps + m];
    }
};

// NoiseT adapter over a NoiseBlock; identical draws to CounterNoise
// with the same seed by construction.
struct PrecomputedNoise {
    const NoiseBlock* block = nullptr;
    std::uint64_t seed = 0;
    double sign = 1.0;

    double increment_z(std::uint64_t r, std::uint64_t p, std::uint64_t m) const {
        return sign * block->at(static_cast<int>(r), static_cast<int>(p), static_cast<int>(m));
    }
    double bridge_z(std::uint64_t r, std::uint64_t p, std::uint64_t m, std::uint64_t k) const {
        return sign * rng::stream(seed, rng::Tag::bridge, r, p, m).normal(k);
    }
    double initial(const InitialLawSpec& law, std::uint64_t r, std::uint64_t p) const {
        return sign * initial_draw(law, rng::stream(seed, rng::Tag::initial, r, p), 0);
    }
};

// Coarse view of a finer stream: the step-m increment is the rescaled
// sum of fine increments 2m and 2m+1, so a run on the coarse grid
// discretizes the same Brownian path as the fine run.
struct CoarsenedNoise {
    std::uint64_t seed = 0;
    double sign = 1.0;

    double increment_z(std::uint64_t r, std::uint64_t p, std::uint64_t m) const {
        const auto s = rng::stream(seed, rng::Tag::brownian, r, p);
        return sign * (s.normal(2 * m) + s.normal(2 * m + 1)) * 0.7071067811865475244;
    }
    double bridge_z(std::uint64_t r, std::uint64_t p, std::uint64_t m, std::uint64_t k) const {
        return sign * rng::stream(seed, rng::Tag::bridge, r, p, ~m).normal(k);
    }
    double initial(const InitialLawSpec& law, std::uint64_t r, std::uint64_t p) const {
        return sign * initial_draw(law, rng::stream(seed, rng::Tag::initial, r, p), 0);
    }
};

// Values of tracked particles at tracked grid times, per replica:
// marginals[particle_slot][time_slot][replica].
struct TrackedMarginals {
    std::vector<int> particles;
    std::vector<int> time_indices;
    std::vector<std::vector<std::vector<double>>> values;

    void allocate(int n_replicas) {
        values.assign(particles.size(),
                      std::vector<std::vector<double>>(
                          time_indices.size(), std::vector<double>(static_cast<std::size_t>(n_replicas))));
    }
};

// Replica-batched quenched stepper: one disorder matrix, all replicas
// advanced together so the interaction is a single N x R product per
// step. Only tracked marginals are stored. Columns evolve independently;
// the barrier rule applies per (replica, particle) with the interaction
// frozen over the step, as in run_quenched_replica.
template <typename NoiseT>
inline void quenched_marginals(const ModelParams& params, const Eigen::MatrixXd& mat,
                               int n_replicas, const NoiseT& noise, TrackedMarginals& out,
                               int n_threads = 0) {
    const int n = params.n_particles;
    const int steps = params.grid.n_steps;
    const double dt = params.grid.dt();
    const double root_dt = std::sqrt(dt);
    const double scale = params.beta / std::sqrt(static_cast<double>(n));
    const bool confined = params.potential.kind != PotentialKind::Zero;
    out.allocate(n_replicas);

    // replica blocks keep the GEMM large while letting two threads work
    const int block = std::max(1, n_replicas / std::max(1, resolve_threads(n_threads) * 4));
    const int n_blocks = (n_replicas + block - 1) / block;

    parallel_for(static_cast<std::size_t>(n_blocks), n_threads, [&](std::size_t bi) {
        const int r0 = static_cast<int>(bi) * block;
        const int r1 = std::min(n_replicas, r0 + block);
        const int nr = r1 - r0;
        Eigen::MatrixXd x(n, nr);
        for (int c = 0; c < nr; ++c)
            for (int p = 0; p < n; ++p)
                x(p, c) = noise.initial(params.initial, static_cast<std::uint64_t>(r0 + c),
                                        static_cast<std::uint64_t>(p));

        auto record = [&](int step_index) {
            for (std::size_t ti = 0; ti < out.time_indices.size(); ++ti) {
                if (out.time_indices[ti] != step_index) continue;
                for (std::size_t pi = 0; pi < out.particles.size(); ++pi)
                    for (int c = 0; c < nr; ++c)
                        out.values[pi][ti][static_cast<std::size_t>(r0 + c)] =
                            x(out.particles[pi], c);
            }
        };
        record(0);

        Eigen::MatrixXd g(n, nr);
        for (int m = 0; m < steps; ++m) {
            g.noalias() = scale * (mat * x);
            for (int c = 0; c < nr; ++c) {
                const std::uint64_t r = static_cast<std::uint64_t>(r0 + c);
                for (int p = 0; p < n; ++p) {
                    const double dw =
                        root_dt * noise.increment_z(r, static_cast<std::uint64_t>(p),
                                                    static_cast<std::uint64_t>(m));
                    if (!confined) {
                        x(p, c) += (g(p, c) -
                                    potential_grad(params.potential, x(p, c), params.big_a)) * dt +
                                   dw;
                    } else {
                        std::uint64_t bctr = 0;
                        auto bridge = [&](std::uint64_t k) {
                            return noise.bridge_z(r, static_cast<std::uint64_t>(p),
                                                  static_cast<std::uint64_t>(m), k);
                        };
                        x(p, c) = detail::confined_step(params.potential, params.big_a, x(p, c),
                                                        g(p, c), dt, dw, bridge, bctr, 0,
                                                        kMaxHalvings)
                                      .x;
                    }
                }
            }
            record(m + 1);
        }
    });
}

// Exact restatement of the Euler recursion for the unconfined linear
// dynamics: X_{m+1} = P X_m + dW_m with P = I + dt (beta/sqrt(N)) J and
// X_0 = 0, so any linear path functional sum_i w_i X_p(t_i) equals
// sqrt(dt) * sum_m b_m . z_m with coefficient rows built by one backward
// sweep. Cost per disorder draw is M row-matrix products instead of a
// full ensemble simulation.
struct LinearPathFunctional {
    // B(m, p) is the coefficient of increment z(., p, m); column-major
    // storage makes the per-particle sweep over m contiguous.
    Eigen::MatrixXd B; // steps x n

    // weights w_i over grid times i = 0..M for one tracked particle
    static LinearPathFunctional build(const ModelParams& params, const Eigen::MatrixXd& mat,
                                      int particle, const std::vector<double>& weights) {
        if (params.potential.kind != PotentialKind::Zero)
            throw std::invalid_argument("LinearPathFunctional: zero potential only");
        const int n = params.n_particles;
        const int steps = params.grid.n_steps;
        if (static_cast<int>(weights.size()) != steps + 1)
            throw std::invalid_argument("LinearPathFunctional: one weight per grid time");
        const double dt = params.grid.dt();
        const double scale = params.beta / std::sqrt(static_cast<double>(n));

        LinearPathFunctional f;
        f.B = Eigen::MatrixXd::Zero(steps, n);
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(n);
        // backward recursion: b_{m-1} = w_m e_p^T + b_m P,  P = I + dt scale J
        for (int m = steps; m >= 1; --m) {
            if (m < steps) acc = (acc + (dt * scale) * (acc * mat)).eval();
            acc(particle) += weights[static_cast<std::size_t>(m)];
            f.B.row(m - 1) = acc;
        }
        return f;
    }

    // marginal X_p(t_M): weight 1 at the final time
    static LinearPathFunctional terminal(const ModelParams& params, const Eigen::MatrixXd& mat,
                                         int particle) {
        std::vector<double> w(static_cast<std::size_t>(params.grid.n_steps) + 1, 0.0);
        w.back() = 1.0;
        return build(params, mat, particle, w);
    }
};

// Contract a set of functionals against the noise block, walking each
// replica's slab once: out[f][r] = sqrt(dt) sum_{p,m} B_f(m,p) z(r,p,m).
inline std::vector<std::vector<double>> evaluate_functionals(
    const std::vector<const LinearPathFunctional*>& fns, const NoiseBlock& block, int n_replicas,
    double dt, int n_threads = 0) {
    const std::size_t nf = fns.size();
    const int steps = block.n_steps;
    const int n = block.n_particles;
    const double root_dt = std::sqrt(dt);
    std::vector<std::vector<double>> out(nf, std::vector<double>(static_cast<std::size_t>(n_replicas)));
    parallel_for(static_cast<std::size_t>(n_replicas), n_threads, [&](std::size_t r) {
        std::vector<double> acc(nf, 0.0);
        for (int p = 0; p < n; ++p) {
            const double* zp = &block.z[(r * static_cast<std::size_t>(n) + p) *
                                        static_cast<std::size_t>(steps)];
            const auto zv = Eigen::Map<const Eigen::VectorXd>(zp, steps);
            for (std::size_t fi = 0; fi < nf; ++fi) acc[fi] += fns[fi]->B.col(p).dot(zv);
        }
        for (std::size_t fi = 0; fi < nf; ++fi) out[fi][r] = root_dt * acc[fi];
    });
    return out;
}

// Rademacher matrix coupled to a Gaussian one through the sign map;
// used by the universality experiment so the two disorder kinds share
// their underlying randomness.
inline DisorderMatrix coupled_rademacher(const DisorderMatrix& gauss) {
    DisorderMatrix m;
    m.kind = DisorderKind::Rademacher;
    m.seed = gauss.seed;
    m.entries = gauss.entries.unaryExpr([](double x) { return x >= 0.0 ? 1.0 : -1.0; });
    return m;
}

} // namespace spinchaos
