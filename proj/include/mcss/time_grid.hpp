#pragma once

#include <cstddef>
#include <string>

#include "common.hpp"

namespace mcss {

/// Uniform time grid t_0 < t_1 < ... < t_n = T. The last point is pinned to T
/// exactly so that terminal-layer comparisons (t == T) are never off by an ulp.
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    std::size_t n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, std::size_t n) : t0(t0_), T(T_), n_steps(n) {
        if (!(T > t0)) throw validation_error("time grid: T must exceed t0");
        if (n == 0) throw validation_error("time grid: n_steps must be positive");
    }

    double dt() const { return (T - t0) / static_cast<double>(n_steps); }

    double time(std::size_t k) const {
        if (k > n_steps)
            throw validation_error("time grid: layer " + std::to_string(k) + " > n_steps");
        if (k == n_steps) return T;
        return t0 + static_cast<double>(k) * dt();
    }

    std::size_t layers() const { return n_steps + 1; }
};

}  // namespace mcss
