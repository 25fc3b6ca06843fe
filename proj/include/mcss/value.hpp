#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "backward.hpp"
#include "common.hpp"
#include "lattice.hpp"
#include "problem.hpp"

namespace mcss {

/// Obstacle table bar-h(t_k, x_j) for k < n (no_obstacle sentinel when the
/// problem has no intermediate reward); the terminal layer entry is the
/// sentinel because terminal data is never reflected.
inline std::vector<double> obstacle_table(const Lattice& lat, const RewardSpec& reward) {
    const std::size_t n = lat.n_nodes();
    std::vector<double> h(lat.grid.layers() * n, no_obstacle);
    if (reward.has_obstacle)
        for (std::size_t k = 0; k + 1 < lat.grid.layers(); ++k)
            for (std::size_t j = 0; j < n; ++j) h[k * n + j] = reward.h(lat.grid.time(k), lat.xs[j]);
    return h;
}

inline std::vector<double> terminal_values(const Lattice& lat, const RewardSpec& reward) {
    std::vector<double> g(lat.n_nodes());
    for (std::size_t j = 0; j < lat.n_nodes(); ++j) g[j] = reward.g(lat.xs[j]);
    return g;
}

/// Value of one fixed Markov policy: reflected solve against obstacle bar-h
/// with terminal g(x) and the policy-frozen driver.
inline BackwardField solve_u_alpha(const Lattice& lat, const ProblemSpec& spec,
                                   const Policy& policy, int n_threads = 1) {
    return solve_rbsde(lat, policy, terminal_values(lat, spec.reward),
                       obstacle_table(lat, spec.reward), DriverSpec(spec.driver), n_threads);
}

/// Mixed control/stopping value on the chain: u, the argmax policy, and the
/// stop region (nodes where the obstacle attains the max). Invariants:
/// u >= bar-h - 1e-12 below the horizon and u == g exactly at it.
struct ValueSurface {
    std::size_t layers = 0, n_nodes = 0;
    std::vector<double> u;
    Policy argmax;
    std::vector<std::uint8_t> stop;

    double at(std::size_t k, std::size_t j) const { return u[k * n_nodes + j]; }
    bool stopped(std::size_t k, std::size_t j) const { return stop[k * n_nodes + j] != 0; }
};

namespace detail {

/// Bellman step at one node: implicit one_step per control, maximum with
/// ties broken toward the smallest control index, then reflection at bar-h.
struct BellmanOut {
    double u;
    std::uint32_t argmax;
    bool stopped;
};

inline BellmanOut bellman_node(const Lattice& lat, std::size_t k, std::size_t j,
                               std::span<const double> V, const DriverFn& f, double obstacle,
                               double* kbuf) {
    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t best_ci = 0;
    for (std::size_t ci = 0; ci < lat.n_controls(); ++ci) {
        const double y = one_step(lat, k, j, ci, V, f, nullptr, kbuf);
        if (y > best) {
            best = y;
            best_ci = static_cast<std::uint32_t>(ci);
        }
    }
    BellmanOut out{best, best_ci, false};
    if (!is_no_obstacle(obstacle) && obstacle >= best) {
        out.u = obstacle;
        out.stopped = true;
    }
    return out;
}

}  // namespace detail

/// Backward induction for u_k(x) = max(bar-h, max_a [E^a_k u_{k+1} + dt f]).
/// With `horizon` set, nodes where the rule fires take the prescribed xi
/// (used by the programming-principle check); otherwise the full mixed value.
inline ValueSurface solve_value(const Lattice& lat, const ProblemSpec& spec, int n_threads = 1,
                                const HorizonSpec* horizon = nullptr) {
    spec.validate();
    const double dt = lat.dt();
    if (!(spec.driver.lipschitz_C * dt < 1.0))
        throw config_error("solve_value: lipschitz_C * dt = "
                           + fmt17(spec.driver.lipschitz_C * dt) + " must be < 1");
    if (horizon) horizon->validate(lat);

    const std::size_t n = lat.n_nodes();
    const std::size_t m = std::max<std::size_t>(lat.n_marks(), 1);
    const std::size_t layers = lat.grid.layers();
    const auto obstacle = obstacle_table(lat, spec.reward);

    ValueSurface s;
    s.layers = layers;
    s.n_nodes = n;
    s.u.assign(layers * n, 0.0);
    s.stop.assign(layers * n, 0);
    s.argmax.layers = layers;
    s.argmax.n_nodes = n;
    s.argmax.choice.assign(layers * n, 0);

    const std::size_t kN = lat.grid.n_steps;
    for (std::size_t j = 0; j < n; ++j) {
        s.u[kN * n + j] = horizon ? horizon->xi[kN * n + j] : spec.reward.g(lat.xs[j]);
        s.stop[kN * n + j] = 1;
    }

    std::vector<double> kbuf(m * n, 0.0);
    for (std::size_t k = kN; k-- > 0;) {
        std::span<const double> V{&s.u[(k + 1) * n], n};
        parallel_for(n, n_threads, [&](std::size_t j) {
            if (horizon && horizon->theta.at(k, j)) {
                s.u[k * n + j] = horizon->xi[k * n + j];
                s.stop[k * n + j] = 1;
                return;
            }
            const auto out = detail::bellman_node(lat, k, j, V, spec.driver.f,
                                                  obstacle[k * n + j], &kbuf[j * m]);
            s.u[k * n + j] = out.u;
            s.argmax.choice[k * n + j] = out.argmax;
            s.stop[k * n + j] = out.stopped ? 1 : 0;
        });
    }
    return s;
}

/// Literal certification oracle: enumerates every (path-dependent control
/// assignment, adapted stopping rule) pair on the history tree reachable from
/// x0 and evaluates the stopped nonlinear expectation of bar-h for each pair.
/// Guards: <= 4 layers, <= 5 nodes, <= 3 controls, <= 2^24 pairs.
inline double bruteforce_value(const Lattice& lat, const ProblemSpec& spec, double x0) {
    spec.validate();
    const std::size_t n = lat.n_nodes();
    const std::size_t layers = lat.grid.layers();
    const std::size_t q = lat.n_controls();
    if (layers > 4 || n > 5 || q > 3)
        throw validation_error("bruteforce_value: instance too large to enumerate (needs <= 4 "
                               "layers, <= 5 nodes, <= 3 controls)");

    // History tree under the union of controls; children indexed by lattice node.
    struct TreeNode {
        std::size_t state;
        std::vector<std::int32_t> child;  // lattice node -> tree index at next layer, -1 if absent
    };
    std::vector<std::vector<TreeNode>> tree(layers);
    tree[0].push_back({lat.locate(x0), {}});
    for (std::size_t k = 0; k + 1 < layers; ++k) {
        for (auto& node : tree[k]) {
            node.child.assign(n, -1);
            for (std::size_t ci = 0; ci < q; ++ci)
                for (const auto& e : lat.row(k, node.state, ci))
                    if (e.prob > 0.0 && node.child[e.target] < 0) {
                        node.child[e.target] = static_cast<std::int32_t>(tree[k + 1].size());
                        tree[k + 1].push_back({e.target, {}});
                    }
        }
    }

    std::size_t decision_points = 0;
    for (std::size_t k = 0; k + 1 < layers; ++k) decision_points += tree[k].size();
    const double pair_bits = static_cast<double>(decision_points)
                             * (1.0 + std::log2(static_cast<double>(q)));
    if (pair_bits > 24.0)
        throw validation_error("bruteforce_value: " + std::to_string(decision_points)
                               + " decision points with " + std::to_string(q)
                               + " controls exceed the enumeration guard (2^24 pairs)");

    const std::size_t m = std::max<std::size_t>(lat.n_marks(), 1);
    std::vector<double> kbuf(m);
    std::vector<std::vector<double>> val(layers);
    for (std::size_t k = 0; k < layers; ++k) val[k].assign(tree[k].size(), 0.0);
    std::vector<double> vnext(n, 0.0);

    std::uint64_t ctrl_total = 1;
    for (std::size_t d = 0; d < decision_points; ++d) ctrl_total *= q;
    const std::uint64_t stop_total = 1ull << decision_points;

    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::uint32_t> ctrl_of(decision_points, 0);
    for (std::uint64_t cmask = 0; cmask < ctrl_total; ++cmask) {
        std::uint64_t c = cmask;
        for (std::size_t d = 0; d < decision_points; ++d) {
            ctrl_of[d] = static_cast<std::uint32_t>(c % q);
            c /= q;
        }
        for (std::uint64_t smask = 0; smask < stop_total; ++smask) {
            for (std::size_t i = 0; i < tree[layers - 1].size(); ++i)
                val[layers - 1][i] = spec.reward.g(lat.xs[tree[layers - 1][i].state]);
            std::size_t dbase = decision_points;
            for (std::size_t k = layers - 1; k-- > 0;) {
                dbase -= tree[k].size();
                for (std::size_t i = 0; i < tree[k].size(); ++i) {
                    const std::size_t d = dbase + i;
                    const auto& node = tree[k][i];
                    if (smask >> d & 1) {
                        val[k][i] = eval_bar_h(spec.reward, lat.grid.time(k), lat.grid.T,
                                               lat.xs[node.state]);
                        continue;
                    }
                    for (std::size_t l = 0; l < n; ++l)
                        vnext[l] = node.child[l] >= 0 ? val[k + 1][node.child[l]] : 0.0;
                    val[k][i] = detail::one_step(lat, k, node.state, ctrl_of[d], vnext,
                                                 spec.driver.f, nullptr, kbuf.data());
                }
            }
            best = std::max(best, val[0][0]);
        }
    }
    return best;
}

/// Programming-principle check at a stopping rule theta: re-solves the
/// controlled stopped problem whose stopped payoff is the value surface read
/// at theta, and measures both one-sided gaps against the direct value.
struct DppReport {
    double sub_gap = 0.0;    ///< max(restart - direct): would signal sub-optimality failure
    double super_gap = 0.0;  ///< max(direct - restart)
    double tolerance = 1e-10;
    bool pass = false;
};

inline DppReport dpp_check(const Lattice& lat, const ProblemSpec& spec, const StoppingRule& theta,
                           int n_threads = 1, const ValueSurface* precomputed = nullptr) {
    theta.validate(lat);
    ValueSurface direct_storage;
    const ValueSurface* direct = precomputed;
    if (!direct) {
        direct_storage = solve_value(lat, spec, n_threads);
        direct = &direct_storage;
    }
    HorizonSpec hz;
    hz.theta = theta;
    hz.xi = direct->u;  // value surface read on the stopped set
    const ValueSurface restart = solve_value(lat, spec, n_threads, &hz);

    DppReport rep;
    for (std::size_t i = 0; i < restart.u.size(); ++i) {
        rep.sub_gap = std::max(rep.sub_gap, restart.u[i] - direct->u[i]);
        rep.super_gap = std::max(rep.super_gap, direct->u[i] - restart.u[i]);
    }
    rep.pass = rep.sub_gap <= rep.tolerance && rep.super_gap <= rep.tolerance;
    return rep;
}

}  // namespace mcss
