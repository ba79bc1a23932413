#pragma once

// Two-time kernels on the grid: covariance estimation, the Fredholm
// kernel H^t = K (beta^2 K + I)^{-1} on [0,t], the Volterra resolvent
// R of H, residual checks of the operator identities, and the weighted
// L2 kernel distance.
//
// Discrete convention (fixed here once): an integral operator with
// kernel matrix K acts as K * diag(w) where w are trapezoidal weights.
// All functions return kernel matrices (pointwise values), never the
// weighted operator.

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spinchaos/grid.hpp"

namespace spinchaos {

enum class KernelShape { Symmetric, LowerTriangular };

struct Kernel {
    Eigen::MatrixXd values; // (M+1) x (M+1) over grid times
    TimeGrid grid;
    KernelShape shape = KernelShape::Symmetric;

    int n_times() const { return static_cast<int>(values.rows()); }
};

inline Kernel constant_kernel(const TimeGrid& grid, double value) {
    Kernel k;
    k.grid = grid;
    k.values = Eigen::MatrixXd::Constant(grid.n_times(), grid.n_times(), value);
    return k;
}

// Largest |eigenvalue| clip: covariances estimated by Monte Carlo can be
// indefinite at round-off level; eigenvalues below -1e-8 * trace are
// clipped to zero so the operator solves stay well posed.
inline Eigen::MatrixXd psd_repair(const Eigen::MatrixXd& sym, double rel_floor = 1e-8) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const double floor = -rel_floor * std::abs(es.eigenvalues().sum());
    if (es.eigenvalues().minCoeff() >= floor && es.eigenvalues().minCoeff() >= 0.0)
        return sym;
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

// K(t_i, t_j) = mean over replicas of x_{t_i} x_{t_j} for one particle,
// or pooled over all particles when particle < 0 (empirical measure use).
// `paths` is indexed [replica][particle][time].
template <typename Paths>
inline Kernel estimate_covariance(const Paths& paths, const TimeGrid& grid, int particle = 0) {
    const std::size_t n_rep = paths.size();
    if (n_rep == 0) throw std::invalid_argument("estimate_covariance: empty ensemble");
    const int nt = grid.n_times();
    Kernel k;
    k.grid = grid;
    k.shape = KernelShape::Symmetric;

    std::size_t n_series = 0;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(nt, nt);
    Eigen::VectorXd x(nt);
    for (std::size_t r = 0; r < n_rep; ++r) {
        const auto& rep = paths[r];
        const std::size_t p_lo = particle >= 0 ? static_cast<std::size_t>(particle) : 0;
        const std::size_t p_hi = particle >= 0 ? p_lo + 1 : rep.size();
        for (std::size_t p = p_lo; p < p_hi; ++p) {
            for (int i = 0; i < nt; ++i) x(i) = rep[p][static_cast<std::size_t>(i)];
            acc.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0);
            ++n_series;
        }
    }
    acc = acc.selfadjointView<Eigen::Lower>();
    k.values = acc / static_cast<double>(n_series);
    return k;
}

// Covariance from a replica-major matrix of one particle's paths
// (rows = replicas, cols = grid times). Grammian, hence PSD.
inline Kernel covariance_from_matrix(const Eigen::MatrixXd& paths, const TimeGrid& grid) {
    if (paths.rows() == 0) throw std::invalid_argument("covariance_from_matrix: empty ensemble");
    Kernel k;
    k.grid = grid;
    k.shape = KernelShape::Symmetric;
    k.values = (paths.transpose() * paths) / static_cast<double>(paths.rows());
    k.values = 0.5 * (k.values + k.values.transpose()).eval();
    return k;
}

// Fredholm kernel on [0, t_index]: solves
//   (beta^2 K W + I) H^T = K   column-wise,
// i.e. H = K (beta^2 W K + I)^{-1} as a grid operator. Returns the
// (t_index+1)^2 kernel block; exactly symmetric by construction.
inline Eigen::MatrixXd fredholm_kernel_block(const Eigen::MatrixXd& cov, const TimeGrid& grid,
                                             double beta, int t_index) {
    const int n = t_index + 1;
    if (n < 1 || n > cov.rows()) throw std::invalid_argument("fredholm_kernel: bad t_index");
    const Eigen::MatrixXd K = cov.topLeftCorner(n, n);
    if (beta == 0.0) return K;
    const auto wv = grid.trapezoid_weights(0, t_index);
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(wv.data(), n);
    Eigen::MatrixXd A = (beta * beta) * K * w.asDiagonal();
    A += Eigen::MatrixXd::Identity(n, n);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    Eigen::MatrixXd Ht = lu.solve(K);
    if (!Ht.allFinite())
        throw std::runtime_error("fredholm_kernel: singular operator (non-PSD covariance?)");
    Eigen::MatrixXd H = 0.5 * (Ht + Ht.transpose());
    return H;
}

// Row H^{t_i}(t_i, .) of the Fredholm kernel on [0, t_i]; one LU solve.
// This is the only part of H^{t} the resolvent machinery needs.
inline Eigen::VectorXd fredholm_last_row(const Eigen::MatrixXd& cov, const TimeGrid& grid,
                                         double beta, int t_index) {
    const int n = t_index + 1;
    const Eigen::MatrixXd K = cov.topLeftCorner(n, n);
    if (beta == 0.0) return K.row(t_index).transpose();
    const auto wv = grid.trapezoid_weights(0, t_index);
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(wv.data(), n);
    // row i of H = column i of H^T = (beta^2 K W + I)^{-1} K e_i
    Eigen::MatrixXd A = (beta * beta) * K * w.asDiagonal();
    A += Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs = K.col(t_index);
    Eigen::VectorXd row = Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(rhs);
    if (!row.allFinite())
        throw std::runtime_error("fredholm_kernel: singular operator (non-PSD covariance?)");
    return row;
}

inline Kernel fredholm_kernel(const Kernel& cov, double beta, int t_index) {
    Kernel h;
    h.grid = cov.grid;
    h.shape = KernelShape::Symmetric;
    h.values = fredholm_kernel_block(cov.values, cov.grid, beta, t_index);
    return h;
}

// Volterra resolvent on the lower triangle: for each grid time t_i,
//   R(t_i, s_j) = H^{t_i}(t_i, s_j)
//               + beta^2 sum_{j <= u < i} w_u H^{t_i}(t_i, u) R(u, s_j),
// with trapezoidal weights on [s_j, t_i] and the top node dropped
// (explicit forward substitution in u).
inline Kernel resolvent_kernel(const Kernel& cov, double beta) {
    const int nt = cov.n_times();
    Kernel r;
    r.grid = cov.grid;
    r.shape = KernelShape::LowerTriangular;
    r.values = Eigen::MatrixXd::Zero(nt, nt);
    const double dt = cov.grid.dt();
    const double b2 = beta * beta;

    for (int i = 0; i < nt; ++i) {
        const Eigen::VectorXd h = fredholm_last_row(cov.values, cov.grid, beta, i);
        for (int j = 0; j <= i; ++j) {
            double acc = h(j);
            if (b2 != 0.0) {
                double s = 0.0;
                for (int u = j; u < i; ++u) {
                    const double w = (u == j) ? 0.5 * dt : dt; // trapezoid on [t_j, t_i], top node dropped
                    s += w * h(u) * r.values(u, j);
                }
                acc += b2 * s;
            }
            r.values(i, j) = acc;
        }
    }
    return r;
}

struct IdentityResiduals {
    double fredholm_kh = 0.0;  // K - H = beta^2 int K H
    double fredholm_hk = 0.0;  // K - H = beta^2 int H K
    double resolvent_hr = 0.0; // R - H^t(t,.) = beta^2 int_s^t H^t(t,u) R(u,s) du
    double resolvent_rh = 0.0; // R - H^t(t,.) = beta^2 int_s^t R(t,u) H^u(u,s) du

    double max_abs() const {
        return std::max(std::max(fredholm_kh, fredholm_hk),
                        std::max(resolvent_hr, resolvent_rh));
    }
};

// Max-norm residuals of the Fredholm identities (at the full horizon)
// and both resolvent identities, all evaluated by trapezoidal quadrature.
// The H^t family is recomputed internally for the resolvent identities.
inline IdentityResiduals identity_residuals(const Kernel& cov, const Kernel& h,
                                            const Kernel& r, double beta) {
    const int nt = cov.n_times();
    if (h.n_times() != nt || r.n_times() != nt)
        throw std::invalid_argument("identity_residuals: kernels on a common grid required");
    const double b2 = beta * beta;
    IdentityResiduals out;

    const auto wv = cov.grid.trapezoid_weights(0, nt - 1);
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(wv.data(), nt);
    const Eigen::MatrixXd& K = cov.values;
    const Eigen::MatrixXd& H = h.values;
    Eigen::MatrixXd res1 = K - H - b2 * K * w.asDiagonal() * H;
    Eigen::MatrixXd res2 = K - H - b2 * H * w.asDiagonal() * K;
    out.fredholm_kh = res1.cwiseAbs().maxCoeff();
    out.fredholm_hk = res2.cwiseAbs().maxCoeff();

    // Only the rows H^{t_u}(t_u, .) enter the resolvent identities.
    std::vector<Eigen::VectorXd> hrow;
    hrow.reserve(static_cast<std::size_t>(nt));
    for (int i = 0; i < nt; ++i)
        hrow.push_back(fredholm_last_row(cov.values, cov.grid, beta, i));

    const double dt = cov.grid.dt();
    for (int i = 0; i < nt; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s_hr = 0.0, s_rh = 0.0;
            for (int u = j; u <= i; ++u) {
                double wq = dt;
                if (u == j || u == i) wq = 0.5 * dt;
                if (j == i) wq = 0.0;
                s_hr += wq * hrow[static_cast<std::size_t>(i)](u) * r.values(u, j);
                s_rh += wq * r.values(i, u) * hrow[static_cast<std::size_t>(u)](j);
            }
            const double base = r.values(i, j) - hrow[static_cast<std::size_t>(i)](j);
            out.resolvent_hr = std::max(out.resolvent_hr, std::abs(base - b2 * s_hr));
            out.resolvent_rh = std::max(out.resolvent_rh, std::abs(base - b2 * s_rh));
        }
    }
    return out;
}

// Weighted L2 double-integral distance; lower-triangular kernels are
// compared over the lower triangle only (the domain where they live).
inline double kernel_distance(const Kernel& a, const Kernel& b) {
    if (a.n_times() != b.n_times())
        throw std::invalid_argument("kernel_distance: common grid required");
    const int nt = a.n_times();
    const auto wv = a.grid.trapezoid_weights(0, nt - 1);
    const bool lower = a.shape == KernelShape::LowerTriangular ||
                       b.shape == KernelShape::LowerTriangular;
    double acc = 0.0;
    for (int i = 0; i < nt; ++i) {
        const int jmax = lower ? i : nt - 1;
        for (int j = 0; j <= jmax; ++j) {
            const double d = a.values(i, j) - b.values(i, j);
            acc += wv[static_cast<std::size_t>(i)] * wv[static_cast<std::size_t>(j)] * d * d;
        }
    }
    return std::sqrt(acc);
}

// CSV dump: i, j, t_i, t_j, value
inline void write_kernel_csv(const std::string& path, const Kernel& k) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_kernel_csv: cannot open " + path);
    f << "i,j,t_i,t_j,value\n";
    f.precision(17);
    for (int i = 0; i < k.n_times(); ++i) {
        const int jmax = k.shape == KernelShape::LowerTriangular ? i : k.n_times() - 1;
        for (int j = 0; j <= jmax; ++j)
            f << i << ',' << j << ',' << k.grid.time(i) << ',' << k.grid.time(j) << ','
              << k.values(i, j) << '\n';
    }
}

} // namespace spinchaos
