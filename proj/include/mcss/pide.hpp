#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "common.hpp"
#include "lattice.hpp"
#include "problem.hpp"
#include "time_grid.hpp"
#include "value.hpp"

namespace mcss {

struct SpatialGrid {
    double x_min = 0.0, x_max = 1.0;
    std::size_t n_space = 2;
    std::vector<double> xs;

    SpatialGrid() = default;
    SpatialGrid(double lo, double hi, std::size_t n) : x_min(lo), x_max(hi), n_space(n) {
        if (!(hi > lo)) throw validation_error("spatial grid: x_max must exceed x_min");
        if (n < 2) throw validation_error("spatial grid: need at least 2 intervals");
        xs.resize(n + 1);
        for (std::size_t j = 0; j <= n; ++j)
            xs[j] = j == n ? hi : lo + static_cast<double>(j) * dx();
    }

    double dx() const { return (x_max - x_min) / static_cast<double>(n_space); }
};

/// Explicit monotone finite-difference scheme for the variational inequality
///   min(u - h, inf_a(-u_t - A^a u - K^a u - f(a,t,x,u,sigma u_x, B^a u))) = 0.
/// Stability gate: dt * (sigma_max^2/dx^2 + |b|_max/dx + sum nu_i + C) <= 1 - margin.
struct PIDEScheme {
    enum class Boundary { reflecting, dirichlet_g };

    SpatialGrid space;
    TimeGrid time;
    Boundary boundary = Boundary::reflecting;
    double cfl_margin = 0.05;

    void validate(const ProblemSpec& spec) const {
        if (cfl_margin < 0.05)
            throw validation_error("pide scheme: cfl_margin must be >= 0.05");
        const double dx = space.dx();
        const double dt = time.dt();
        double worst = 0.0;
        for (double x : space.xs)
            for (double a : spec.controls.values) {
                const double s = spec.coeffs.sigma(x, a);
                const double b = spec.coeffs.b(x, a);
                worst = std::max(worst, s * s / (dx * dx) + std::abs(b) / dx);
            }
        worst += spec.nu.total_mass() + spec.driver.lipschitz_C;
        if (dt * worst > 1.0 - cfl_margin)
            throw scheme_error("pide scheme: explicit stability violated: dt * "
                               + fmt17(worst) + " = " + fmt17(dt * worst) + " > "
                               + fmt17(1.0 - cfl_margin) + "; maximal admissible dt = "
                               + fmt17((1.0 - cfl_margin) / worst));
    }
};

struct GeneratorOut {
    std::vector<double> Lu;     ///< (A^a + K^a) u per node
    std::vector<double> zslot;  ///< sigma * central u_x per node
    std::vector<double> B;      ///< [j * m + i]: u(x+beta_i) - u(x)
};

/// Discrete generator at control a: central second difference, drift term
/// upwinded by the sign of b, jump operator as the exact mark sum with linear
/// interpolation of u at x + beta (clamped into the box) and a central-
/// difference compensator (exact on quadratics). Boundary rows use mirrored
/// ghosts (zero flux), matching the chain's boundary folding.
inline GeneratorOut apply_generator(const ProblemSpec& spec, const SpatialGrid& grid,
                                    std::span<const double> u, double a) {
    const std::size_t n = grid.xs.size();
    const std::size_t m = spec.nu.size();
    if (u.size() != n) throw validation_error("apply_generator: value vector size mismatch");
    const double dx = grid.dx();

    GeneratorOut out;
    out.Lu.assign(n, 0.0);
    out.zslot.assign(n, 0.0);
    out.B.assign(n * std::max<std::size_t>(m, 1), 0.0);

    auto at = [&](std::ptrdiff_t j) {  // mirrored ghosts
        if (j < 0) return u[0];
        if (j >= static_cast<std::ptrdiff_t>(n)) return u[n - 1];
        return u[static_cast<std::size_t>(j)];
    };
    auto interp = [&](double x) {
        double y = std::min(std::max(x, grid.x_min), grid.x_max);
        auto lo = static_cast<std::size_t>((y - grid.x_min) / dx);
        if (lo >= n - 1) lo = n - 2;
        const double w = (grid.xs[lo + 1] - y) / dx;
        return w * u[lo] + (1.0 - w) * u[lo + 1];
    };

    for (std::size_t j = 0; j < n; ++j) {
        const double x = grid.xs[j];
        const auto js = static_cast<std::ptrdiff_t>(j);
        const double b = spec.coeffs.b(x, a);
        const double s = spec.coeffs.sigma(x, a);
        const double d2 = (at(js + 1) - 2.0 * u[j] + at(js - 1)) / (dx * dx);
        const double d1_up = b >= 0.0 ? (at(js + 1) - u[j]) / dx : (u[j] - at(js - 1)) / dx;
        const double d1_c = (at(js + 1) - at(js - 1)) / (2.0 * dx);
        double Lu = 0.5 * s * s * d2 + b * d1_up;
        for (std::size_t i = 0; i < m; ++i) {
            const double beta = spec.coeffs.beta(x, a, i);
            const double Bu = interp(x + beta) - u[j];
            out.B[j * std::max<std::size_t>(m, 1) + i] = Bu;
            Lu += spec.nu.weights[i] * (Bu - d1_c * beta);
        }
        out.Lu[j] = Lu;
        out.zslot[j] = s * d1_c;
    }
    return out;
}

/// Explicit backward sweep
///   u_k = max(h(t_k,.), max_a [u_{k+1} + dt (A^a u_{k+1} + K^a u_{k+1}
///         + f(a, t_k, x, u_{k+1}, sigma d_x u_{k+1}, B^a u_{k+1}))]),
/// terminal data g unreflected. Returns the value surface on the FD grid.
inline ValueSurface solve_hjbvi(const ProblemSpec& spec, const PIDEScheme& scheme,
                                int n_threads = 1) {
    spec.validate();
    scheme.validate(spec);
    const std::size_t n = scheme.space.xs.size();
    const std::size_t q = spec.controls.values.size();
    const std::size_t m = std::max<std::size_t>(spec.nu.size(), 1);
    const std::size_t kN = scheme.time.n_steps;
    const double dt = scheme.time.dt();

    ValueSurface s;
    s.layers = kN + 1;
    s.n_nodes = n;
    s.u.assign(s.layers * n, 0.0);
    s.stop.assign(s.layers * n, 0);
    s.argmax.layers = s.layers;
    s.argmax.n_nodes = n;
    s.argmax.choice.assign(s.layers * n, 0);

    for (std::size_t j = 0; j < n; ++j) {
        s.u[kN * n + j] = spec.reward.g(scheme.space.xs[j]);
        s.stop[kN * n + j] = 1;
    }

    std::vector<GeneratorOut> gen(q);
    for (std::size_t k = kN; k-- > 0;) {
        const double t = scheme.time.time(k);
        std::span<const double> V{&s.u[(k + 1) * n], n};
        for (std::size_t ci = 0; ci < q; ++ci)
            gen[ci] = apply_generator(spec, scheme.space, V, spec.controls.values[ci]);

        parallel_for(n, n_threads, [&](std::size_t j) {
            const double x = scheme.space.xs[j];
            if (scheme.boundary == PIDEScheme::Boundary::dirichlet_g && (j == 0 || j + 1 == n)) {
                s.u[k * n + j] = spec.reward.g(x);
                return;
            }
            double best = -std::numeric_limits<double>::infinity();
            std::uint32_t best_ci = 0;
            for (std::size_t ci = 0; ci < q; ++ci) {
                const double a = spec.controls.values[ci];
                const double fv = spec.driver.f(a, t, x, V[j], gen[ci].zslot[j],
                                                {&gen[ci].B[j * m], spec.nu.size()});
                if (!std::isfinite(fv))
                    throw numeric_error("driver returned non-finite value at layer "
                                        + std::to_string(k) + ", x=" + fmt17(x));
                const double cand = V[j] + dt * (gen[ci].Lu[j] + fv);
                if (cand > best) {
                    best = cand;
                    best_ci = static_cast<std::uint32_t>(ci);
                }
            }
            double uval = best;
            bool stopped = false;
            const double h = eval_bar_h(spec.reward, t, scheme.time.T, x);
            if (!is_no_obstacle(h) && h >= best) {
                uval = h;
                stopped = true;
            }
            s.u[k * n + j] = uval;
            s.argmax.choice[k * n + j] = best_ci;
            s.stop[k * n + j] = stopped ? 1 : 0;
        });
    }
    return s;
}

struct ResidualReport {
    double max_abs = 0.0;
    std::size_t at_layer = 0, at_node = 0;
    double tolerance = 0.0;  ///< 10 * (dt + dx)
    bool stop_branch_ok = true;
    bool pass = false;
};

/// Consistency probe of a surface against the variational inequality. The
/// time derivative is the forward quotient at layer k and the spatial
/// operators and driver are re-evaluated on layer k+1, i.e. the same
/// semi-discretization the explicit sweep integrates. A surface that solves
/// the discrete VI therefore has residual at roundoff scale, while a
/// tampered or mismatched surface violates by O(1/dt); the tolerance
/// 10 (dt + dx) separates the two regimes with a wide margin and keeps the
/// report comparable across refinement ladders.
inline ResidualReport viscosity_residual(const ProblemSpec& spec, const PIDEScheme& scheme,
                                         const ValueSurface& s) {
    const std::size_t n = scheme.space.xs.size();
    if (s.n_nodes != n || s.layers != scheme.time.n_steps + 1)
        throw validation_error("viscosity_residual: surface does not match the scheme grids");
    const double dt = scheme.time.dt();
    const double dx = scheme.space.dx();
    const std::size_t m = std::max<std::size_t>(spec.nu.size(), 1);

    ResidualReport rep;
    rep.tolerance = 10.0 * (dt + dx);
    for (std::size_t k = 0; k + 1 < s.layers; ++k) {
        const double t = scheme.time.time(k);
        std::span<const double> V{&s.u[(k + 1) * n], n};
        std::vector<GeneratorOut> gen(spec.controls.values.size());
        for (std::size_t ci = 0; ci < gen.size(); ++ci)
            gen[ci] = apply_generator(spec, scheme.space, V, spec.controls.values[ci]);
        for (std::size_t j = 1; j + 1 < n; ++j) {
            const double x = scheme.space.xs[j];
            const double ut = (s.u[(k + 1) * n + j] - s.u[k * n + j]) / dt;
            double pde = std::numeric_limits<double>::infinity();
            for (std::size_t ci = 0; ci < gen.size(); ++ci) {
                const double a = spec.controls.values[ci];
                const double fv = spec.driver.f(a, t, x, V[j], gen[ci].zslot[j],
                                                {&gen[ci].B[j * m], spec.nu.size()});
                pde = std::min(pde, -ut - gen[ci].Lu[j] - fv);
            }
            const double h = eval_bar_h(spec.reward, t, scheme.time.T, x);
            double R = pde;
            if (!is_no_obstacle(h)) R = std::min(s.u[k * n + j] - h, pde);
            if (std::abs(R) > rep.max_abs) {
                rep.max_abs = std::abs(R);
                rep.at_layer = k;
                rep.at_node = j;
            }
            if (s.stopped(k, j) && !is_no_obstacle(h)
                && std::abs(s.u[k * n + j] - h) > rep.tolerance)
                rep.stop_branch_ok = false;
        }
    }
    rep.pass = rep.max_abs <= rep.tolerance && rep.stop_branch_ok;
    return rep;
}

struct CrossRung {
    std::size_t n_time = 0, n_space = 0;
    double dt = 0.0, dx = 0.0;
    double sup_err = 0.0;
};

struct CrossReport {
    std::vector<CrossRung> rungs;
    double scale = 0.0;      ///< max|g| + max|h| + 1 over the box
    double final_tol = 0.0;  ///< 5 * (dt + dx) * scale at the finest rung
    bool monotone = false;
    bool pass = false;
};

/// Chain-vs-PDE cross validation on matched grids across a refinement ladder
/// (dx halves, dt quarters per rung). The sup-difference is measured on the
/// central sub-box (10% bands next to each spatial boundary excluded).
inline CrossReport cross_validate(const ProblemSpec& spec, double x_min, double x_max,
                                  std::size_t n_space0, std::size_t n_time0,
                                  std::size_t n_rungs, int n_threads = 1,
                                  double cfl_margin = 0.05) {
    if (n_rungs < 2) throw validation_error("cross_validate: need at least 2 rungs");
    CrossReport rep;
    for (std::size_t r = 0; r < n_rungs; ++r) {
        const std::size_t n_space = n_space0 << r;
        const std::size_t n_time = n_time0 << (2 * r);
        const TimeGrid tg(0.0, spec.horizon_T, n_time);
        const Lattice lat = build_lattice(spec, tg, x_min, x_max, n_space, n_threads);
        PIDEScheme scheme;
        scheme.space = SpatialGrid(x_min, x_max, n_space);
        scheme.time = tg;
        scheme.cfl_margin = cfl_margin;
        const ValueSurface uc = solve_value(lat, spec, n_threads);
        const ValueSurface up = solve_hjbvi(spec, scheme, n_threads);

        CrossRung rung;
        rung.n_time = n_time;
        rung.n_space = n_space;
        rung.dt = tg.dt();
        rung.dx = scheme.space.dx();
        const std::size_t n = scheme.space.xs.size();
        const double band = 0.1 * (x_max - x_min);
        for (std::size_t k = 0; k < uc.layers; ++k)
            for (std::size_t j = 0; j < n; ++j) {
                const double x = scheme.space.xs[j];
                if (x < x_min + band || x > x_max - band) continue;
                rung.sup_err = std::max(rung.sup_err, std::abs(uc.at(k, j) - up.at(k, j)));
            }
        rep.rungs.push_back(rung);

        if (r + 1 == n_rungs) {
            double gmax = 0.0, hmax = 0.0;
            for (double x : scheme.space.xs) {
                gmax = std::max(gmax, std::abs(spec.reward.g(x)));
                if (spec.reward.has_obstacle)
                    for (std::size_t k = 0; k < tg.layers(); ++k)
                        hmax = std::max(hmax, std::abs(spec.reward.h(tg.time(k), x)));
            }
            rep.scale = gmax + hmax + 1.0;
            rep.final_tol = 5.0 * (rung.dt + rung.dx) * rep.scale;
        }
    }
    rep.monotone = true;
    for (std::size_t r = 0; r + 1 < rep.rungs.size(); ++r)
        if (!(rep.rungs[r + 1].sup_err < rep.rungs[r].sup_err)) rep.monotone = false;
    rep.pass = rep.monotone && rep.rungs.back().sup_err <= rep.final_tol;
    return rep;
}

}  // namespace mcss
