#pragma once

// Euler-Maruyama time stepping for the three dynamics: the quenched
// N-particle system, the Gaussian-averaged system in its Markovian
// (X, Z, Q) form, and the one-dimensional limit dynamics driven by a
// Volterra resolvent kernel.
//
// All randomness is counter-based: the increment of replica r,
// particle p at step m is a pure function of (seed, r, p, m), so runs
// are reproducible bit-for-bit at any thread count and common random
// numbers across runs come for free by sharing the seed.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spinchaos/disorder.hpp"
#include "spinchaos/grid.hpp"
#include "spinchaos/kernels.hpp"
#include "spinchaos/model.hpp"
#include "spinchaos/rng.hpp"
#include "spinchaos/thread_pool.hpp"

namespace spinchaos {

struct PathEnsemble {
    int n_replicas = 0;
    int n_particles = 0;
    TimeGrid grid;
    std::vector<double> values; // index (r * n_particles + p) * (M+1) + i

    std::string dynamics;      // provenance
    std::uint64_t seed = 0;
    int clamped_replicas = 0;  // barrier clamps used as last resort

    double& at(int r, int p, int i) {
        return values[(static_cast<std::size_t>(r) * n_particles + p) * grid.n_times() + i];
    }
    double at(int r, int p, int i) const {
        return values[(static_cast<std::size_t>(r) * n_particles + p) * grid.n_times() + i];
    }

    void allocate() {
        values.assign(static_cast<std::size_t>(n_replicas) * n_particles * grid.n_times(), 0.0);
    }

    // replica-major matrix of one particle's paths (rows = replicas)
    Eigen::MatrixXd particle_matrix(int p) const {
        Eigen::MatrixXd m(n_replicas, grid.n_times());
        for (int r = 0; r < n_replicas; ++r)
            for (int i = 0; i < grid.n_times(); ++i) m(r, i) = at(r, p, i);
        return m;
    }

    std::vector<double> marginal(int p, int time_index) const {
        std::vector<double> out(static_cast<std::size_t>(n_replicas));
        for (int r = 0; r < n_replicas; ++r) out[static_cast<std::size_t>(r)] = at(r, p, time_index);
        return out;
    }

    // all particles pooled at one time (empirical-measure marginal)
    std::vector<double> pooled_marginal(int time_index) const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(n_replicas) * n_particles);
        for (int r = 0; r < n_replicas; ++r)
            for (int p = 0; p < n_particles; ++p) out.push_back(at(r, p, time_index));
        return out;
    }
};

inline Kernel estimate_covariance(const PathEnsemble& paths, int particle = 0, bool pooled = false) {
    if (paths.n_replicas == 0) throw std::invalid_argument("estimate_covariance: empty ensemble");
    const int nt = paths.grid.n_times();
    const int rows = pooled ? paths.n_replicas * paths.n_particles : paths.n_replicas;
    Eigen::MatrixXd m(rows, nt);
    int row = 0;
    for (int r = 0; r < paths.n_replicas; ++r) {
        if (pooled) {
            for (int p = 0; p < paths.n_particles; ++p, ++row)
                for (int i = 0; i < nt; ++i) m(row, i) = paths.at(r, p, i);
        } else {
            for (int i = 0; i < nt; ++i) m(row, i) = paths.at(r, particle, i);
            ++row;
        }
    }
    return covariance_from_matrix(m, paths.grid);
}

// Counter-based noise. `sign` lets tests drive the pathwise sign-flip
// symmetry check by negating every draw.
struct CounterNoise {
    std::uint64_t seed = 0;
    double sign = 1.0;

    double increment_z(std::uint64_t r, std::uint64_t p, std::uint64_t m) const {
        return sign * rng::stream(seed, rng::Tag::brownian, r, p).normal(m);
    }
    double bridge_z(std::uint64_t r, std::uint64_t p, std::uint64_t m, std::uint64_t k) const {
        return sign * rng::stream(seed, rng::Tag::bridge, r, p, m).normal(k);
    }
    double initial(const InitialLawSpec& law, std::uint64_t r, std::uint64_t p) const {
        return sign * initial_draw(law, rng::stream(seed, rng::Tag::initial, r, p), 0);
    }
};

namespace detail {

// Width of the band kept away from the barrier.
inline double barrier_eps(double big_a) { return 1e-6 * big_a; }

struct StepOutcome {
    double x = 0.0;
    bool clamped = false;
};

// One Euler step of a single confined particle with frozen external
// drift g. If the proposal leaves the safe band the step is retried on
// two half-steps whose increments refine dW by a Brownian bridge, up
// to `max_halvings` levels; after that the value is clamped to the
// band edge and the replica flagged.
template <typename BridgeFn>
inline StepOutcome confined_step(const PotentialSpec& pot, double big_a, double x, double g,
                                 double dt, double dw, const BridgeFn& bridge,
                                 std::uint64_t& bridge_ctr, int depth, int max_halvings) {
    const double band = big_a - barrier_eps(big_a);
    const double prop = x + (-potential_grad(pot, x, big_a) + g) * dt + dw;
    if (std::abs(prop) < band) return {prop, false};
    if (depth >= max_halvings) {
        return {prop >= 0.0 ? band : -band, true};
    }
    // split dW = dW1 + dW2: dW1 ~ N(dW/2, dt/4) conditional on the sum
    const double z = bridge(bridge_ctr++);
    const double dw1 = 0.5 * dw + 0.5 * std::sqrt(dt) * z;
    const double dw2 = dw - dw1;
    StepOutcome a = confined_step(pot, big_a, x, g, 0.5 * dt, dw1, bridge, bridge_ctr,
                                  depth + 1, max_halvings);
    StepOutcome b = confined_step(pot, big_a, a.x, g, 0.5 * dt, dw2, bridge, bridge_ctr,
                                  depth + 1, max_halvings);
    return {b.x, a.clamped || b.clamped};
}

} // namespace detail

inline constexpr int kMaxHalvings = 20;

// ---------------------------------------------------------------------------
// Quenched dynamics: dX^i = -U'(X^i) dt + (beta/sqrt(N)) (J X)^i dt + dW^i.
// Replicas share the disorder matrix and use independent Brownian
// substreams. The recorder is called once per grid time with the full
// particle state, which lets experiment drivers keep only what they need.
// ---------------------------------------------------------------------------

template <typename NoiseT, typename Recorder>
inline int run_quenched_replica(const ModelParams& params, const Eigen::MatrixXd& mat,
                                int replica, const NoiseT& noise, Recorder&& record) {
    const int n = params.n_particles;
    const int steps = params.grid.n_steps;
    const double dt = params.grid.dt();
    const double root_dt = std::sqrt(dt);
    const double scale = params.beta / std::sqrt(static_cast<double>(n));
    const bool confined = params.potential.kind != PotentialKind::Zero;
    int clamped = 0;

    Eigen::VectorXd x(n);
    for (int p = 0; p < n; ++p)
        x(p) = noise.initial(params.initial, static_cast<std::uint64_t>(replica),
                             static_cast<std::uint64_t>(p));
    record(0, x);

    Eigen::VectorXd jx(n);
    for (int m = 0; m < steps; ++m) {
        jx.noalias() = mat * x;
        for (int p = 0; p < n; ++p) {
            const double g = scale * jx(p);
            const double dw = root_dt * noise.increment_z(static_cast<std::uint64_t>(replica),
                                                          static_cast<std::uint64_t>(p),
                                                          static_cast<std::uint64_t>(m));
            if (!confined) {
                x(p) += (g - potential_grad(params.potential, x(p), params.big_a)) * dt + dw;
            } else {
                std::uint64_t bctr = 0;
                auto bridge = [&](std::uint64_t k) {
                    return noise.bridge_z(static_cast<std::uint64_t>(replica),
                                          static_cast<std::uint64_t>(p),
                                          static_cast<std::uint64_t>(m), k);
                };
                auto out = detail::confined_step(params.potential, params.big_a, x(p), g, dt, dw,
                                                 bridge, bctr, 0, kMaxHalvings);
                x(p) = out.x;
                if (out.clamped) clamped = 1;
            }
        }
        record(m + 1, x);
    }
    return clamped;
}

inline PathEnsemble simulate_quenched(const ModelParams& params, const DisorderMatrix& mat,
                                      int n_replicas, std::uint64_t seed, int n_threads = 0,
                                      double noise_sign = 1.0) {
    if (mat.n() != params.n_particles)
        throw std::invalid_argument("simulate_quenched: disorder dimension != n_particles");
    PathEnsemble out;
    out.n_replicas = n_replicas;
    out.n_particles = params.n_particles;
    out.grid = params.grid;
    out.dynamics = "quenched";
    out.seed = seed;
    out.allocate();

    CounterNoise noise{seed, noise_sign};
    std::vector<int> clamped(static_cast<std::size_t>(n_replicas), 0);
    parallel_for(static_cast<std::size_t>(n_replicas), n_threads, [&](std::size_t r) {
        clamped[r] = run_quenched_replica(
            params, mat.entries, static_cast<int>(r), noise,
            [&](int i, const Eigen::VectorXd& x) {
                for (int p = 0; p < params.n_particles; ++p)
                    out.at(static_cast<int>(r), p, i) = x(p);
            });
    });
    for (int c : clamped) out.clamped_replicas += c;
    return out;
}

// ---------------------------------------------------------------------------
// Averaged dynamics in Markovian form:
//   dX^i = -U'(X^i) dt + (beta/sqrt(N)) X . Z^i dt + dW^i
//   dZ^i = (beta/sqrt(N)) Q X dW^i,      Z_0 = 0
//   dQ   = -(beta^2/N) Q X X^T Q dt,     Q_0 = I
// Q is maintained through the closed form Q = (I + S)^{-1} with
// S = (beta^2/N) int_0^t X X^T ds accumulated by trapezoidal quadrature;
// the inverse is refreshed by an SPD solve every step for N <= 64 and
// every 5 steps (with the first-order update in between) otherwise.
// ---------------------------------------------------------------------------

struct AveragedOptions {
    int  q_trace_replicas = 0;    // keep the Q_t trace for the first k replicas
    int  monitor_replicas = 1 << 30; // replicas with per-step operator-norm checks
    bool monitor = true;
};

struct AveragedMonitors {
    // max over monitored (replica, step) of ||Q_t||_op - 1
    double max_q_opnorm_excess = -1.0;
    // max over (replica, i, step) of |(Q_s X_s)^i| - A^3 s
    double max_qx_entry_excess = -std::numeric_limits<double>::infinity();
    // max of |(Q_s X_s)^i - X_s^i| - beta^2 A^3 s  (interaction part only)
    double max_qx_deviation_excess = -std::numeric_limits<double>::infinity();

    void merge(const AveragedMonitors& o) {
        max_q_opnorm_excess = std::max(max_q_opnorm_excess, o.max_q_opnorm_excess);
        max_qx_entry_excess = std::max(max_qx_entry_excess, o.max_qx_entry_excess);
        max_qx_deviation_excess = std::max(max_qx_deviation_excess, o.max_qx_deviation_excess);
    }
};

struct AveragedRun {
    PathEnsemble paths;
    AveragedMonitors monitors;
    // Q_t at every grid time for the first q_trace_replicas replicas:
    // q_trace[r][i] is the N x N matrix at time t_i.
    std::vector<std::vector<Eigen::MatrixXd>> q_trace;
};

template <typename NoiseT>
inline AveragedRun simulate_averaged_noise(const ModelParams& params, int n_replicas,
                                           const NoiseT& noise, const AveragedOptions& opts = {},
                                           int n_threads = 0) {
    const int n = params.n_particles;
    const int steps = params.grid.n_steps;
    const double dt = params.grid.dt();
    const double root_dt = std::sqrt(dt);
    const double scale = params.beta / std::sqrt(static_cast<double>(n));
    const double b2n = params.beta * params.beta / static_cast<double>(n);
    const bool confined = params.potential.kind != PotentialKind::Zero;
    const int refresh_every = n <= 64 ? 1 : 5;

    AveragedRun run;
    run.paths.n_replicas = n_replicas;
    run.paths.n_particles = n;
    run.paths.grid = params.grid;
    run.paths.dynamics = "averaged";
    run.paths.seed = noise.seed;
    run.paths.allocate();
    run.q_trace.resize(static_cast<std::size_t>(std::min(opts.q_trace_replicas, n_replicas)));

    std::vector<AveragedMonitors> mon(static_cast<std::size_t>(n_replicas));
    std::vector<int> clamped(static_cast<std::size_t>(n_replicas), 0);

    parallel_for(static_cast<std::size_t>(n_replicas), n_threads, [&](std::size_t ri) {
        const int r = static_cast<int>(ri);
        Eigen::VectorXd x(n);
        for (int p = 0; p < n; ++p)
            x(p) = noise.initial(params.initial, static_cast<std::uint64_t>(r),
                                 static_cast<std::uint64_t>(p));
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, n); // row i = Z^i
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n); // running trapezoid of (b^2/N) X X^T
        Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd qx(n), dw(n), drift(n);

        const bool keep_trace = ri < run.q_trace.size();
        if (keep_trace) run.q_trace[ri].reserve(static_cast<std::size_t>(steps) + 1);

        auto monitor_state = [&](int step_index) {
            if (keep_trace) run.q_trace[ri].push_back(q);
            if (!opts.monitor) return;
            const double t = params.grid.time(step_index);
            const double a3s = params.big_a * params.big_a * params.big_a * t;
            qx.noalias() = q * x;
            for (int i = 0; i < n; ++i) {
                mon[ri].max_qx_entry_excess =
                    std::max(mon[ri].max_qx_entry_excess, std::abs(qx(i)) - a3s);
                mon[ri].max_qx_deviation_excess =
                    std::max(mon[ri].max_qx_deviation_excess,
                             std::abs(qx(i) - x(i)) - params.beta * params.beta * a3s);
            }
            const bool full = r < opts.monitor_replicas;
            if (full || step_index % 10 == 0 || step_index == steps) {
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q, Eigen::EigenvaluesOnly);
                mon[ri].max_q_opnorm_excess =
                    std::max(mon[ri].max_q_opnorm_excess, es.eigenvalues().maxCoeff() - 1.0);
            }
        };

        for (int p = 0; p < n; ++p) run.paths.at(r, p, 0) = x(p);
        monitor_state(0);

        for (int m = 0; m < steps; ++m) {
            qx.noalias() = q * x;
            for (int p = 0; p < n; ++p)
                dw(p) = root_dt * noise.increment_z(static_cast<std::uint64_t>(r),
                                                    static_cast<std::uint64_t>(p),
                                                    static_cast<std::uint64_t>(m));
            drift.noalias() = scale * (z * x);

            const Eigen::VectorXd x_old = x;
            for (int p = 0; p < n; ++p) {
                if (!confined) {
                    x(p) += (drift(p) - potential_grad(params.potential, x(p), params.big_a)) * dt +
                            dw(p);
                } else {
                    std::uint64_t bctr = 0;
                    auto bridge = [&](std::uint64_t k) {
                        return noise.bridge_z(static_cast<std::uint64_t>(r),
                                              static_cast<std::uint64_t>(p),
                                              static_cast<std::uint64_t>(m), k);
                    };
                    auto outp = detail::confined_step(params.potential, params.big_a, x(p),
                                                      drift(p), dt, dw(p), bridge, bctr, 0,
                                                      kMaxHalvings);
                    x(p) = outp.x;
                    if (outp.clamped) clamped[ri] = 1;
                }
            }
            // dZ^i = (beta/sqrt(N)) (Q X) dW^i evaluated at the step start
            z.noalias() += scale * dw * qx.transpose();

            // trapezoidal accumulation of S, then refresh or first-order update of Q
            s.selfadjointView<Eigen::Lower>().rankUpdate(x_old, 0.5 * dt * b2n);
            s.selfadjointView<Eigen::Lower>().rankUpdate(x, 0.5 * dt * b2n);
            if ((m + 1) % refresh_every == 0 || m + 1 == steps) {
                Eigen::MatrixXd a = Eigen::MatrixXd(s.selfadjointView<Eigen::Lower>()) +
                                    Eigen::MatrixXd::Identity(n, n);
                Eigen::LLT<Eigen::MatrixXd> llt(a);
                if (llt.info() != Eigen::Success)
                    throw std::runtime_error("simulate_averaged: Q update lost positive definiteness");
                q = llt.solve(Eigen::MatrixXd::Identity(n, n));
                q = 0.5 * (q + q.transpose()).eval();
            } else {
                qx.noalias() = q * x;
                q.noalias() -= (dt * b2n) * qx * qx.transpose();
            }

            for (int p = 0; p < n; ++p) run.paths.at(r, p, m + 1) = x(p);
            monitor_state(m + 1);
        }
    });

    for (const auto& m : mon) run.monitors.merge(m);
    for (int c : clamped) run.paths.clamped_replicas += c;
    return run;
}

inline AveragedRun simulate_averaged(const ModelParams& params, int n_replicas, std::uint64_t seed,
                                     const AveragedOptions& opts = {}, int n_threads = 0,
                                     double noise_sign = 1.0) {
    CounterNoise noise{seed, noise_sign};
    return simulate_averaged_noise(params, n_replicas, noise, opts, n_threads);
}

// ---------------------------------------------------------------------------
// Limit dynamics: dY = -U'(Y) dt + beta^2 [ int_0^t R(t,s) dW_s ] dt + dW.
// The memory term is a left-point Riemann sum over the increments of the
// same Brownian path that drives the diffusion:
//   drift_mem(t_i) = beta^2 sum_{j < i} R(t_i, t_j) dW_j.
// One-dimensional; each replica uses the particle-0 substream, which
// aligns it with particle 0 of a quenched run under the same seed.
// ---------------------------------------------------------------------------

template <typename NoiseT, typename Recorder>
inline int run_limit_replica(const ModelParams& params, const Eigen::MatrixXd& resolvent,
                             int replica, int particle_stream, const NoiseT& noise,
                             Recorder&& record) {
    const int steps = params.grid.n_steps;
    const double dt = params.grid.dt();
    const double root_dt = std::sqrt(dt);
    const double b2 = params.beta * params.beta;
    const bool confined = params.potential.kind != PotentialKind::Zero;
    int clamped = 0;

    double y = noise.initial(params.initial, static_cast<std::uint64_t>(replica),
                             static_cast<std::uint64_t>(particle_stream));
    record(0, y);
    std::vector<double> dws(static_cast<std::size_t>(steps), 0.0);

    for (int m = 0; m < steps; ++m) {
        double mem = 0.0;
        for (int j = 0; j < m; ++j) mem += resolvent(m, j) * dws[static_cast<std::size_t>(j)];
        const double g = b2 * mem;
        const double dw = root_dt * noise.increment_z(static_cast<std::uint64_t>(replica),
                                                      static_cast<std::uint64_t>(particle_stream),
                                                      static_cast<std::uint64_t>(m));
        dws[static_cast<std::size_t>(m)] = dw;
        if (!confined) {
            y += (g - potential_grad(params.potential, y, params.big_a)) * dt + dw;
        } else {
            std::uint64_t bctr = 0;
            auto bridge = [&](std::uint64_t k) {
                return noise.bridge_z(static_cast<std::uint64_t>(replica),
                                      static_cast<std::uint64_t>(particle_stream),
                                      static_cast<std::uint64_t>(m), k);
            };
            auto out = detail::confined_step(params.potential, params.big_a, y, g, dt, dw, bridge,
                                             bctr, 0, kMaxHalvings);
            y = out.x;
            if (out.clamped) clamped = 1;
        }
        record(m + 1, y);
    }
    return clamped;
}

inline PathEnsemble simulate_limit(const ModelParams& params, const Kernel& resolvent,
                                   int n_replicas, std::uint64_t seed, int n_threads = 0,
                                   double noise_sign = 1.0, int particle_stream = 0) {
    if (resolvent.n_times() != params.grid.n_times())
        throw std::invalid_argument("simulate_limit: resolvent not on params.grid");
    PathEnsemble out;
    out.n_replicas = n_replicas;
    out.n_particles = 1;
    out.grid = params.grid;
    out.dynamics = "limit";
    out.seed = seed;
    out.allocate();

    CounterNoise noise{seed, noise_sign};
    std::vector<int> clamped(static_cast<std::size_t>(n_replicas), 0);
    parallel_for(static_cast<std::size_t>(n_replicas), n_threads, [&](std::size_t r) {
        clamped[r] = run_limit_replica(params, resolvent.values, static_cast<int>(r),
                                       particle_stream, noise,
                                       [&](int i, double y) { out.at(static_cast<int>(r), 0, i) = y; });
    });
    for (int c : clamped) out.clamped_replicas += c;
    return out;
}

// Ensemble dumps: binary (three u64 dims then row-major f64) and CSV.
inline void write_ensemble_binary(const std::string& path, const PathEnsemble& e) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ensemble_binary: cannot open " + path);
    std::uint64_t dims[3] = {static_cast<std::uint64_t>(e.n_replicas),
                             static_cast<std::uint64_t>(e.n_particles),
                             static_cast<std::uint64_t>(e.grid.n_times())};
    f.write(reinterpret_cast<const char*>(dims), sizeof dims);
    f.write(reinterpret_cast<const char*>(e.values.data()),
            static_cast<std::streamsize>(e.values.size() * sizeof(double)));
}

inline void write_ensemble_csv(const std::string& path, const PathEnsemble& e) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_ensemble_csv: cannot open " + path);
    f << "replica,particle,time_index,value\n";
    f.precision(17);
    for (int r = 0; r < e.n_replicas; ++r)
        for (int p = 0; p < e.n_particles; ++p)
            for (int i = 0; i < e.grid.n_times(); ++i)
                f << r << ',' << p << ',' << i << ',' << e.at(r, p, i) << '\n';
}

} // namespace spinchaos
