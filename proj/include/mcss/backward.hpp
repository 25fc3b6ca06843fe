#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "lattice.hpp"
#include "problem.hpp"

namespace mcss {

/// Driver callback for backward solves: f(a, t, x, y, z, k).
using DriverFn = std::function<double(double a, double t, double x, double y, double z,
                                      std::span<const double> k)>;

/// Driver plus the Lipschitz bound that gates the implicit step (C*dt < 1).
struct DriverSpec {
    DriverFn f;
    double lipschitz_C = 0.0;

    DriverSpec() = default;
    DriverSpec(DriverFn fn, double C) : f(std::move(fn)), lipschitz_C(C) {}
    DriverSpec(const Driver& d) : f(d.f), lipschitz_C(d.lipschitz_C) {}

    static DriverSpec zero() {
        return DriverSpec([](double, double, double, double, double,
                             std::span<const double>) { return 0.0; },
                          0.0);
    }
};

/// Markov control choice per (layer, node), as indices into lattice controls.
struct Policy {
    std::size_t layers = 0, n_nodes = 0;
    std::vector<std::uint32_t> choice;

    std::uint32_t at(std::size_t k, std::size_t j) const { return choice[k * n_nodes + j]; }

    static Policy constant(const Lattice& lat, std::size_t ctrl_index) {
        if (ctrl_index >= lat.n_controls())
            throw validation_error("policy: control index out of range");
        Policy p;
        p.layers = lat.grid.layers();
        p.n_nodes = lat.n_nodes();
        p.choice.assign(p.layers * p.n_nodes, static_cast<std::uint32_t>(ctrl_index));
        return p;
    }

    void validate(const Lattice& lat) const {
        if (layers != lat.grid.layers() || n_nodes != lat.n_nodes()
            || choice.size() != layers * n_nodes)
            throw validation_error("policy: dimensions do not match the lattice");
        for (auto c : choice)
            if (c >= lat.n_controls())
                throw validation_error("policy: control index out of range");
    }
};

/// First-hit stopping rule: the path stops on arrival at any (k, j) with
/// stop set; the terminal layer is forced to stop.
struct StoppingRule {
    std::size_t layers = 0, n_nodes = 0;
    std::vector<std::uint8_t> stop;

    bool at(std::size_t k, std::size_t j) const { return stop[k * n_nodes + j] != 0; }
    void set(std::size_t k, std::size_t j, bool v) { stop[k * n_nodes + j] = v ? 1 : 0; }

    static StoppingRule none(const Lattice& lat) {
        StoppingRule r;
        r.layers = lat.grid.layers();
        r.n_nodes = lat.n_nodes();
        r.stop.assign(r.layers * r.n_nodes, 0);
        for (std::size_t j = 0; j < r.n_nodes; ++j) r.set(r.layers - 1, j, true);
        return r;
    }

    /// Deterministic time: stop everywhere at `layer`.
    static StoppingRule at_layer(const Lattice& lat, std::size_t layer) {
        StoppingRule r = none(lat);
        for (std::size_t j = 0; j < r.n_nodes; ++j) r.set(layer, j, true);
        return r;
    }

    void validate(const Lattice& lat) const {
        if (layers != lat.grid.layers() || n_nodes != lat.n_nodes()
            || stop.size() != layers * n_nodes)
            throw validation_error("stopping rule: dimensions do not match the lattice");
        for (std::size_t j = 0; j < n_nodes; ++j)
            if (!at(layers - 1, j))
                throw validation_error(
                    "stopping rule: inconsistent matrix (terminal layer must stop everywhere)");
    }

    /// True iff every layer is uniformly stop or uniformly continue.
    bool layer_deterministic() const {
        for (std::size_t k = 0; k < layers; ++k) {
            bool first = at(k, 0);
            for (std::size_t j = 1; j < n_nodes; ++j)
                if (at(k, j) != first) return false;
        }
        return true;
    }
};

/// Stopping rule theta together with the payoff xi awarded on the stopped
/// set (xi is read at every (k,j) with theta.stop set, including layer n).
struct HorizonSpec {
    StoppingRule theta;
    std::vector<double> xi;  ///< [k * n_nodes + j]

    void validate(const Lattice& lat) const {
        theta.validate(lat);
        if (xi.size() != theta.layers * theta.n_nodes)
            throw validation_error("horizon: xi dimensions do not match the lattice");
    }
};

/// Backward solution field on layers [k_lo, k_hi]. Reflected solves maintain
/// Y >= obstacle on non-terminal layers, A_inc >= 0 and the discrete
/// Skorokhod identity A_inc * (Y - obstacle) = 0.
struct BackwardField {
    std::size_t k_lo = 0, k_hi = 0;
    std::size_t n_nodes = 0, m = 0;
    std::vector<double> Y, Z, A_inc;
    std::vector<double> K;  ///< [(local_k * n_nodes + j) * m + i]

    double y(std::size_t k, std::size_t j) const { return Y[idx(k, j)]; }
    double z(std::size_t k, std::size_t j) const { return Z[idx(k, j)]; }
    double a_inc(std::size_t k, std::size_t j) const { return A_inc[idx(k, j)]; }
    std::span<const double> kvec(std::size_t k, std::size_t j) const {
        return {&K[idx(k, j) * m], m};
    }
    std::size_t idx(std::size_t k, std::size_t j) const {
        if (k < k_lo || k > k_hi) throw validation_error("backward field: layer out of range");
        return (k - k_lo) * n_nodes + j;
    }
};

namespace detail {

/// One implicit step at (k, j, control): kernel expectation, Brownian-proxy
/// regression Z = E[V xi^W]/dt, interpolated jump differences K, then the
/// Picard fixed point y = E + dt f(a, t_k, x, y, Z, K) (<= 50 iterations,
/// absolute tolerance 1e-13, contraction guaranteed by C dt < 1).
inline double one_step(const Lattice& lat, std::size_t k, std::size_t j, std::size_t ci,
                       std::span<const double> V, const DriverFn& f, double* z_out,
                       double* k_out) {
    const double dt = lat.dt();
    const double x = lat.xs[j];
    const double t = lat.grid.time(k);
    const double a = lat.controls[ci];
    const std::size_t m = lat.n_marks();

    double E = 0.0, ZW = 0.0;
    for (const auto& e : lat.row(k, j, ci)) {
        E += e.prob * V[e.target];
        ZW += e.prob * V[e.target] * e.xw;
    }
    const double Z = ZW / dt;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& jt = lat.jump_targets(k, j, ci)[i];
        k_out[i] = jt.w_lo * V[jt.lo] + (1.0 - jt.w_lo) * V[jt.lo + 1] - V[j];
    }
    std::span<const double> kspan{k_out, m};

    double y = E;
    for (int it = 0;; ++it) {
        const double fv = f(a, t, x, y, Z, kspan);
        if (!std::isfinite(fv))
            throw numeric_error("driver returned non-finite value at layer "
                                + std::to_string(k) + ", x=" + fmt17(x) + ", a=" + fmt17(a));
        const double yn = E + dt * fv;
        const double diff = std::abs(yn - y);
        y = yn;
        if (diff <= 1e-13) break;
        if (it >= 50)
            throw scheme_error("implicit step did not converge in 50 Picard iterations at layer "
                               + std::to_string(k) + ", x=" + fmt17(x)
                               + " (is lipschitz_C * dt < 1?)");
    }
    if (z_out) *z_out = Z;
    return y;
}

struct BackwardOptions {
    std::size_t k_lo = 0;
    std::size_t k_hi = std::numeric_limits<std::size_t>::max();
    const std::vector<double>* obstacle = nullptr;  ///< [k*n+j] full-grid table
    const HorizonSpec* horizon = nullptr;           ///< stopped solve
    int n_threads = 1;
};

/// Shared backward induction. With an obstacle: reflect after the implicit
/// step, Y = max(obstacle, y*), A_inc = (obstacle - y*)^+; the layer k_hi
/// data is taken as given and never reflected. With a horizon: on stopped
/// nodes Y = xi, Z = K = 0 and the driver/obstacle are inactive.
inline BackwardField solve_backward(const Lattice& lat, const Policy& policy,
                                    const DriverSpec& driver,
                                    const std::vector<double>& terminal,
                                    const BackwardOptions& opts) {
    policy.validate(lat);
    if (!driver.f) throw validation_error("solve: driver callback unset");
    const double dt = lat.dt();
    if (!(driver.lipschitz_C * dt < 1.0))
        throw config_error("solve: lipschitz_C * dt = " + fmt17(driver.lipschitz_C * dt)
                           + " must be < 1; reduce dt below " + fmt17(1.0 / std::max(driver.lipschitz_C, 1e-300)));

    const std::size_t n = lat.n_nodes();
    const std::size_t m = lat.n_marks();
    const std::size_t n_steps = lat.grid.n_steps;
    const std::size_t k_hi = opts.k_hi == std::numeric_limits<std::size_t>::max()
                                 ? n_steps
                                 : opts.k_hi;
    if (k_hi > n_steps || opts.k_lo > k_hi)
        throw validation_error("solve: invalid layer range");
    if (terminal.size() != n)
        throw validation_error("solve: terminal data has " + std::to_string(terminal.size())
                               + " nodes, lattice has " + std::to_string(n));
    if (opts.obstacle && opts.obstacle->size() != lat.grid.layers() * n)
        throw validation_error("solve: obstacle table dimensions do not match the lattice");
    if (opts.horizon) opts.horizon->validate(lat);

    BackwardField out;
    out.k_lo = opts.k_lo;
    out.k_hi = k_hi;
    out.n_nodes = n;
    out.m = m;
    const std::size_t local_layers = k_hi - opts.k_lo + 1;
    out.Y.assign(local_layers * n, 0.0);
    out.Z.assign(local_layers * n, 0.0);
    out.A_inc.assign(local_layers * n, 0.0);
    out.K.assign(local_layers * n * std::max<std::size_t>(m, 1), 0.0);

    // Layer k_hi: terminal data, or xi where the horizon stops (the rule is
    // forced to stop at the last layer, so a stopped solve always reads xi).
    for (std::size_t j = 0; j < n; ++j) {
        double v = terminal[j];
        if (opts.horizon && k_hi == n_steps) v = opts.horizon->xi[k_hi * n + j];
        out.Y[out.idx(k_hi, j)] = v;
    }

    std::vector<double> kbuf(std::max<std::size_t>(m, 1) * n, 0.0);
    for (std::size_t k = k_hi; k-- > opts.k_lo;) {
        const double* Vnext = &out.Y[(k + 1 - opts.k_lo) * n];
        std::span<const double> V{Vnext, n};
        parallel_for(n, opts.n_threads, [&](std::size_t j) {
            const std::size_t id = out.idx(k, j);
            if (opts.horizon && opts.horizon->theta.at(k, j)) {
                out.Y[id] = opts.horizon->xi[k * n + j];
                return;  // Z = K = A_inc stay 0 on the stopped set
            }
            double z = 0.0;
            double* kv = &kbuf[j * std::max<std::size_t>(m, 1)];
            const double y_star = one_step(lat, k, j, policy.at(k, j), V, driver.f, &z, kv);
            double y = y_star;
            if (opts.obstacle) {
                const double h = (*opts.obstacle)[k * n + j];
                if (!is_no_obstacle(h) && h > y) {
                    out.A_inc[id] = h - y_star;
                    y = h;
                }
            }
            out.Y[id] = y;
            out.Z[id] = z;
            for (std::size_t i = 0; i < m; ++i) out.K[id * std::max<std::size_t>(m, 1) + i] = kv[i];
        });
    }
    return out;
}

}  // namespace detail

/// Plain controlled BSDE along a frozen policy, terminal data at layer k_hi
/// (default: the last layer).
inline BackwardField solve_bsde(const Lattice& lat, const Policy& policy,
                                const std::vector<double>& terminal, const DriverSpec& driver,
                                int n_threads = 1, std::size_t k_lo = 0,
                                std::size_t k_hi = std::numeric_limits<std::size_t>::max()) {
    detail::BackwardOptions opts;
    opts.k_lo = k_lo;
    opts.k_hi = k_hi;
    opts.n_threads = n_threads;
    return detail::solve_backward(lat, policy, driver, terminal, opts);
}

/// Reflected BSDE: Y_k = max(obstacle_k, implicit step), minimal push
/// A_inc = (obstacle - y*)^+, terminal layer not reflected. The obstacle
/// table covers all layers; entries may be the no_obstacle sentinel.
inline BackwardField solve_rbsde(const Lattice& lat, const Policy& policy,
                                 const std::vector<double>& terminal,
                                 const std::vector<double>& obstacle, const DriverSpec& driver,
                                 int n_threads = 1, std::size_t k_lo = 0,
                                 std::size_t k_hi = std::numeric_limits<std::size_t>::max()) {
    detail::BackwardOptions opts;
    opts.k_lo = k_lo;
    opts.k_hi = k_hi;
    opts.obstacle = &obstacle;
    opts.n_threads = n_threads;
    return detail::solve_backward(lat, policy, driver, terminal, opts);
}

/// Reflected solve stopped at a rule theta: on stopped nodes Y = xi and
/// Z = K = 0; strictly before theta the driver runs and the obstacle
/// reflects. Matches a driver cut off at theta and an obstacle
/// h 1_{t<theta} + xi 1_{t>=theta}.
inline BackwardField solve_stopped_rbsde(const Lattice& lat, const Policy& policy,
                                         const std::vector<double>& obstacle,
                                         const HorizonSpec& horizon, const DriverSpec& driver,
                                         int n_threads = 1) {
    detail::BackwardOptions opts;
    opts.obstacle = &obstacle;
    opts.horizon = &horizon;
    opts.n_threads = n_threads;
    std::vector<double> terminal(lat.n_nodes(), 0.0);
    for (std::size_t j = 0; j < lat.n_nodes(); ++j)
        terminal[j] = horizon.xi[lat.grid.n_steps * lat.n_nodes() + j];
    return detail::solve_backward(lat, policy, driver, terminal, opts);
}

/// Nonlinear expectation E^f_{0,theta}[xi]: plain (unreflected) stopped BSDE
/// evaluated at (layer 0, anchor x0). x0 must be a grid node.
inline double nonlinear_expectation(const Lattice& lat, const Policy& policy,
                                    const HorizonSpec& horizon, const DriverSpec& driver,
                                    double x0, int n_threads = 1) {
    detail::BackwardOptions opts;
    opts.horizon = &horizon;
    opts.n_threads = n_threads;
    std::vector<double> terminal(lat.n_nodes(), 0.0);
    for (std::size_t j = 0; j < lat.n_nodes(); ++j)
        terminal[j] = horizon.xi[lat.grid.n_steps * lat.n_nodes() + j];
    const BackwardField f = detail::solve_backward(lat, policy, driver, terminal, opts);
    return f.y(0, lat.locate(x0));
}

namespace detail {

/// Nodes reachable from the anchor under a fixed policy (positive-probability
/// transitions only). Decisions at unreachable nodes cannot move the value.
inline std::vector<std::uint8_t> reachable_mask(const Lattice& lat, const Policy& policy,
                                                std::size_t j0) {
    const std::size_t n = lat.n_nodes();
    const std::size_t layers = lat.grid.layers();
    std::vector<std::uint8_t> reach(layers * n, 0);
    reach[j0] = 1;
    for (std::size_t k = 0; k + 1 < layers; ++k)
        for (std::size_t j = 0; j < n; ++j) {
            if (!reach[k * n + j]) continue;
            for (const auto& e : lat.row(k, j, policy.at(k, j)))
                if (e.prob > 0.0) reach[(k + 1) * n + e.target] = 1;
        }
    return reach;
}

}  // namespace detail

/// Exhaustive Snell oracle: maximum over ALL adapted stopping rules of the
/// stopped nonlinear expectation of the payoff table (payoffs[k*n+j] being
/// the reward for stopping at (k,j); the last layer always pays).
/// Enumeration runs over rules restricted to nodes reachable from x0; the
/// lattice must be small (<= 5 layers, <= 9 nodes, <= 2^22 rules).
inline double snell_bruteforce(const Lattice& lat, const Policy& policy,
                               const std::vector<double>& payoffs, const DriverSpec& driver,
                               double x0) {
    policy.validate(lat);
    const std::size_t n = lat.n_nodes();
    const std::size_t layers = lat.grid.layers();
    if (layers > 5 || n > 9)
        throw validation_error("snell_bruteforce: lattice too large to enumerate (needs <= 5 "
                               "layers and <= 9 nodes, got "
                               + std::to_string(layers) + " layers, " + std::to_string(n)
                               + " nodes)");
    if (payoffs.size() != layers * n)
        throw validation_error("snell_bruteforce: payoff table dimensions mismatch");

    const std::size_t j0 = lat.locate(x0);
    const auto reach = detail::reachable_mask(lat, policy, j0);
    std::vector<std::pair<std::size_t, std::size_t>> decisions;  // (k, j), k < n_steps
    for (std::size_t k = 0; k + 1 < layers; ++k)
        for (std::size_t j = 0; j < n; ++j)
            if (reach[k * n + j]) decisions.emplace_back(k, j);
    if (decisions.size() > 22)
        throw validation_error("snell_bruteforce: " + std::to_string(decisions.size())
                               + " reachable decision points exceed the enumeration guard (22)");

    const std::size_t m = lat.n_marks();
    std::vector<double> V(layers * n, 0.0), kbuf(std::max<std::size_t>(m, 1));
    double best = -std::numeric_limits<double>::infinity();
    const std::uint64_t total = 1ull << decisions.size();
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        for (std::size_t j = 0; j < n; ++j) V[(layers - 1) * n + j] = payoffs[(layers - 1) * n + j];
        for (std::size_t k = layers - 1; k-- > 0;) {
            for (std::size_t j = 0; j < n; ++j) {
                if (!reach[k * n + j]) continue;
                bool stopped = false;
                for (std::size_t d = 0; d < decisions.size(); ++d)
                    if (decisions[d].first == k && decisions[d].second == j && (mask >> d & 1)) {
                        stopped = true;
                        break;
                    }
                V[k * n + j] = stopped
                                   ? payoffs[k * n + j]
                                   : detail::one_step(lat, k, j, policy.at(k, j),
                                                      {&V[(k + 1) * n], n}, driver.f, nullptr,
                                                      kbuf.data());
            }
        }
        best = std::max(best, V[j0]);
    }
    return best;
}

}  // namespace mcss
