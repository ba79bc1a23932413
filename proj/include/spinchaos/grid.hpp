#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace spinchaos {

// Uniform time grid t_i = i * T / M covering [0, T] exactly.
struct TimeGrid {
    double horizon = 1.0;
    int    n_steps = 200;

    TimeGrid() = default;
    TimeGrid(double horizon_, int n_steps_) : horizon(horizon_), n_steps(n_steps_) {
        if (horizon <= 0.0) throw std::invalid_argument("TimeGrid: horizon must be > 0");
        if (n_steps < 1) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
    }

    double dt() const { return horizon / n_steps; }
    int    n_times() const { return n_steps + 1; }
    double time(int i) const { return horizon * static_cast<double>(i) / n_steps; }

    // index of the grid time closest to t
    int index_of(double t) const {
        int i = static_cast<int>(std::lround(t / horizon * n_steps));
        if (i < 0) i = 0;
        if (i > n_steps) i = n_steps;
        return i;
    }

    bool operator==(const TimeGrid& o) const {
        return horizon == o.horizon && n_steps == o.n_steps;
    }

    // Trapezoidal quadrature weights on [t_a, t_b] (grid indices a <= b).
    // Degenerate interval (a == b) gets a single zero weight.
    std::vector<double> trapezoid_weights(int a, int b) const {
        if (a > b) throw std::invalid_argument("trapezoid_weights: a > b");
        std::vector<double> w(static_cast<std::size_t>(b - a) + 1, dt());
        if (a == b) { w[0] = 0.0; return w; }
        w.front() *= 0.5;
        w.back()  *= 0.5;
        return w;
    }
};

} // namespace spinchaos
