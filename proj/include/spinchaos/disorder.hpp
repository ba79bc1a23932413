#pragma once

// Disorder matrices: sampling, operator norm estimation, and the
// good event { ||J||_op <= c_s sqrt(N) }.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "spinchaos/model.hpp"
#include "spinchaos/rng.hpp"

namespace spinchaos {

struct DisorderMatrix {
    Eigen::MatrixXd entries;
    DisorderKind kind = DisorderKind::Gaussian;
    std::uint64_t seed = 0;

    int n() const { return static_cast<int>(entries.rows()); }
};

// Deterministic function of (spec, n, seed): entry (i,j) is drawn from
// counter i*n+j of the substream keyed by the seed token.
inline DisorderMatrix sample_disorder(const DisorderSpec& spec, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_disorder: n >= 1 required");
    DisorderMatrix m;
    m.kind = spec.kind;
    m.seed = seed;
    m.entries.resize(n, n);
    const auto s = rng::stream(seed, rng::Tag::disorder);
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            m.entries(i, j) = disorder_entry(spec, s, static_cast<std::uint64_t>(i) * un + j);
    return m;
}

struct OperatorNormResult {
    double value = 0.0;
    int iterations = 0;
    bool converged = true;
};

// Largest singular value via power iteration on the Gram matrix J^T J.
// Deterministic all-ones start; one restart with an alternating-sign
// vector if the iteration stagnates without meeting either stop rule.
// Stops on a residual certificate (|lambda_hat - lambda| <= ||B v -
// lambda_hat v|| for symmetric B) or, when the top of the spectrum is
// nearly degenerate and the certificate cannot tighten, on a long run
// of relative value changes below tol/10.
inline OperatorNormResult operator_norm_full(const Eigen::MatrixXd& mat,
                                             double tol = 1e-6,
                                             int max_iter = 10000) {
    if (tol <= 0.0) throw std::invalid_argument("operator_norm: tol > 0 required");
    const int n = static_cast<int>(mat.cols());
    OperatorNormResult out;

    if (mat.norm() == 0.0) return out; // zero matrix

    auto run = [&](Eigen::VectorXd v, int budget, int& used) -> double {
        v.normalize();
        double lambda = 0.0;
        int calm = 0;
        Eigen::VectorXd u(mat.rows()), w(n);
        for (int it = 0; it < budget; ++it) {
            ++used;
            u.noalias() = mat * v;
            w.noalias() = mat.transpose() * u;
            const double next = v.dot(w); // Rayleigh quotient of J^T J at v
            if (next == 0.0) return 0.0;
            const double resid = (w - next * v).norm();
            const double change = std::abs(next - lambda);
            lambda = next;
            v = w / w.norm();
            if (resid <= 0.5 * tol * lambda) return std::sqrt(lambda);
            calm = change <= 0.1 * tol * lambda ? calm + 1 : 0;
            if (calm >= 8) return std::sqrt(lambda);
        }
        return lambda > 0.0 ? -std::sqrt(lambda) : -0.0; // negative marks non-convergence
    };

    int used = 0;
    Eigen::VectorXd start = Eigen::VectorXd::Ones(n);
    double s1 = run(start, max_iter / 2, used);
    if (s1 >= 0.0) {
        out.value = s1;
        out.iterations = used;
        return out;
    }
    // stagnation restart: deterministic alternating-sign start
    Eigen::VectorXd alt(n);
    for (int i = 0; i < n; ++i) alt(i) = (i % 2 == 0) ? 1.0 : -1.0;
    double s2 = run(alt, max_iter - used, used);
    out.iterations = used;
    if (s2 >= 0.0) {
        out.value = s2;
        return out;
    }
    out.value = std::max(-s1, -s2); // last iterates
    out.converged = false;
    return out;
}

inline double operator_norm(const DisorderMatrix& mat, double tol = 1e-6) {
    auto r = operator_norm_full(mat.entries, tol);
    if (!r.converged)
        throw std::runtime_error("operator_norm: power iteration did not converge, last iterate " +
                                 std::to_string(r.value));
    return r.value;
}

inline bool in_good_event(const DisorderMatrix& mat, double c_s) {
    if (!(c_s > 0.0)) throw std::invalid_argument("in_good_event: c_s > 0 required");
    return operator_norm(mat) <= c_s * std::sqrt(static_cast<double>(mat.n()));
}

// Binary dump: two little-endian u64 dims then row-major f64 entries.
inline void write_matrix_binary(const std::string& path, const Eigen::MatrixXd& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_matrix_binary: cannot open " + path);
    std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()),
                             static_cast<std::uint64_t>(m.cols())};
    f.write(reinterpret_cast<const char*>(dims), sizeof dims);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double x = m(i, j);
            f.write(reinterpret_cast<const char*>(&x), sizeof x);
        }
}

inline Eigen::MatrixXd read_matrix_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_matrix_binary: cannot open " + path);
    std::uint64_t dims[2];
    f.read(reinterpret_cast<char*>(dims), sizeof dims);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double x;
            f.read(reinterpret_cast<char*>(&x), sizeof x);
            m(i, j) = x;
        }
    if (!f) throw std::runtime_error("read_matrix_binary: truncated file " + path);
    return m;
}

} // namespace spinchaos
